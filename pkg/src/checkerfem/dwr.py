"""Dual-weighted error estimation with partition-of-unity localisation.

The discretisation-error estimate combines a primal part, the residual at
the coarse solution weighted by the enriched-minus-coarse adjoint, and an
adjoint part, the adjoint residual weighted by the enriched-minus-coarse
primal:

    eta_primal  = -A(u)(z2 - z)
    eta_adjoint =  Jc'(u)(u2 - u) - A'(u)(u2 - u, z)
    eta_h       =  (eta_primal + eta_adjoint) / 2

with every pairing assembled in the enriched space (the coarse fields are
embedded first).  The remaining pairing of the residual with the coarse
adjoint measures the nonlinear-solver iteration error; it is reported and
flagged when it exceeds the 1e-10 budget, but never folded into eta_h.

Localisation multiplies both weight functions by the bilinear vertex hat
functions, which sum to one, and assigns each vertex its share of the two
pairings.  Hat functions of hanging vertices are folded into their edge
parents (with the full interpolation weights, boundary parents included)
so the vertex shares still sum to eta_h exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .goals import POINT_QOI, SUBDOMAIN_QOI_INDEX, CombinedWeights, combined_derivative
from .mesh import locate
from .model import (
    ModelParams,
    _cotangent_terms,
    _eval_group,
    _flux_react,
    _groups,
    jacobian_action_raw,
    residual_raw,
)
from .solver import iteration_error as _iteration_error
from .spaces import DiscreteField, FunctionSpace, embed_q1_in_q2, shape_matrix

ITERATION_BUDGET = 1e-10


@dataclass
class EstimatorReport:
    """Global estimate, its split, and the localised indicators."""

    eta_h: float
    eta_primal: float
    eta_adjoint: float
    vertex_indicators: np.ndarray
    cell_indicators: np.ndarray
    iteration_error: float
    iteration_warning: bool
    vertex_primal: np.ndarray
    vertex_adjoint: np.ndarray
    effectivity: float | None = None


def _check_inputs(u_h, z_h, u_h2, z_h2):
    if not (
        u_h.space.mesh is z_h.space.mesh is u_h2.space.mesh is z_h2.space.mesh
    ):
        raise ValueError("estimator inputs live on different meshes")
    if u_h.space.degree != 1 or u_h2.space.degree != 2:
        raise ValueError("expected degree-1 solutions and degree-2 enrichments")


def _fold_hanging(space_q1: FunctionSpace, vec: np.ndarray) -> np.ndarray:
    """Fold hanging-vertex rows into their edge parents, keeping the sum."""
    out = vec.copy()
    for c, masters in space_q1.hanging.items():
        for m, w in masters:
            out[m] += w * out[c]
        out[c] = 0.0
    return out


def localize_pu(
    u_h: DiscreteField,
    z_h: DiscreteField,
    u_h2: DiscreteField,
    z_h2: DiscreteField,
    weights: CombinedWeights,
    params: ModelParams,
):
    """Vertex shares of the primal and adjoint estimator parts.

    Returns (total, primal, adjoint) arrays indexed by the vertex dofs of
    the coarse space; each total entry is half the sum of the two parts
    and the totals sum to eta_h.
    """
    _check_inputs(u_h, z_h, u_h2, z_h2)
    q1, q2 = u_h.space, u_h2.space
    u_emb = embed_q1_in_q2(u_h, q2)
    z_emb = embed_q1_in_q2(z_h, q2)
    wz = z_h2.coefficients - z_emb.coefficients
    wu = u_h2.coefficients - u_emb.coefficients

    primal = np.zeros(q1.n_dofs)
    adjoint = np.zeros(q1.n_dofs)
    for grp in _groups(q2, params):
        rows = grp["rows"]
        wts, h = grp["wts"], grp["h"]
        hats, dhats = shape_matrix(1, grp["ref_pts"])  # (4,q), (4,q,2)
        u_val, u_grad = _eval_group(grp, u_emb.coefficients)
        z_val, z_grad = _eval_group(grp, z_emb.coefficients)
        wz_val, wz_grad = _eval_group(grp, wz)
        wu_val, wu_grad = _eval_group(grp, wu)
        flux, react = _flux_react(q2, grp, u_val, u_grad, params)
        aflux, areact = _cotangent_terms(q2, grp, u_val, u_grad, params, z_val, z_grad)
        wgoal = weights.values[SUBDOMAIN_QOI_INDEX[int(grp["sub"])]]

        # bulk densities multiply the hat value, edge densities its gradient
        p_bulk = (np.einsum("mqd,mqd->mq", flux, wz_grad) + react * wz_val) * wts
        a_bulk = (
            (wgoal - areact) * wu_val - np.einsum("mqd,mqd->mq", aflux, wu_grad)
        ) * wts
        p_edge = np.einsum(
            "mqd,aqd->ma", flux * (wz_val * wts)[:, :, None], dhats
        )
        a_edge = np.einsum(
            "mqd,aqd->ma", aflux * (wu_val * wts)[:, :, None], dhats
        )
        h2 = (h * h)[:, None]
        loc_p = -(np.einsum("mq,aq->ma", p_bulk, hats) * h2 + p_edge * h[:, None])
        loc_a = np.einsum("mq,aq->ma", a_bulk, hats) * h2 - a_edge * h[:, None]
        dofs1 = q1.cell_dofs[rows].ravel()
        primal += np.bincount(dofs1, weights=loc_p.ravel(), minlength=q1.n_dofs)
        adjoint += np.bincount(dofs1, weights=loc_a.ravel(), minlength=q1.n_dofs)

    # point-quantity share: w5 * (wu * hat_a)(x5) on the containing cell
    w5 = weights.values[4]
    if w5 != 0.0:
        ci = locate(q1.mesh, POINT_QOI)
        arow = int(np.searchsorted(q1.mesh.active_cells, ci))
        x0, y0, side = q1.mesh.cell_box(ci)
        loc = np.array([[(POINT_QOI[0] - x0) / side, (POINT_QOI[1] - y0) / side]])
        hat_p, _ = shape_matrix(1, loc)
        q2shape, _ = shape_matrix(2, loc)
        wu_at = float(q2shape[:, 0] @ wu[q2.cell_dofs[arow]])
        np.add.at(adjoint, q1.cell_dofs[arow], w5 * wu_at * hat_p[:, 0])

    primal = _fold_hanging(q1, primal)
    adjoint = _fold_hanging(q1, adjoint)
    return 0.5 * (primal + adjoint), primal, adjoint


def cell_indicators(vertex_indicators: np.ndarray, space_q1: FunctionSpace) -> np.ndarray:
    """Nonnegative per-cell refinement indicators from vertex shares.

    Each vertex spreads the magnitude of its share evenly over the active
    cells that own it as a corner; hanging shares were already folded into
    their parents.
    """
    dofs = space_q1.cell_dofs  # the 4 corner dofs of each active cell
    counts = np.bincount(dofs.ravel(), minlength=space_q1.n_dofs)
    share = np.abs(vertex_indicators) / np.maximum(counts, 1)
    return share[dofs].sum(axis=1)


def estimate(
    u_h: DiscreteField,
    z_h: DiscreteField,
    u_h2: DiscreteField,
    z_h2: DiscreteField,
    weights: CombinedWeights,
    params: ModelParams,
) -> EstimatorReport:
    """Assemble the global estimate, its split, and the localisation."""
    _check_inputs(u_h, z_h, u_h2, z_h2)
    q1, q2 = u_h.space, u_h2.space
    u_emb = embed_q1_in_q2(u_h, q2)
    z_emb = embed_q1_in_q2(z_h, q2)
    wz = z_h2.coefficients - z_emb.coefficients
    wu = u_h2.coefficients - u_emb.coefficients

    r2 = residual_raw(u_emb.coefficients, q2, params)
    eta_primal = -float(r2 @ wz)
    jc = combined_derivative(weights, q2)
    action = jacobian_action_raw(u_emb.coefficients, wu, q2, params)
    eta_adjoint = float(jc @ wu) - float(action @ z_emb.coefficients)
    eta_h = 0.5 * (eta_primal + eta_adjoint)

    it_err = _iteration_error(u_h, z_h, params)
    total, primal, adjoint = localize_pu(u_h, z_h, u_h2, z_h2, weights, params)
    cells = cell_indicators(total, q1)
    return EstimatorReport(
        eta_h=eta_h,
        eta_primal=eta_primal,
        eta_adjoint=eta_adjoint,
        vertex_indicators=total,
        cell_indicators=cells,
        iteration_error=it_err,
        iteration_warning=abs(it_err) > ITERATION_BUDGET,
        vertex_primal=primal,
        vertex_adjoint=adjoint,
    )


def effectivity(eta_h: float, j_ref: float, j_h: float) -> float | None:
    """Ratio of the estimate to the true error; None when undefined."""
    denom = j_ref - j_h
    if denom == 0.0:
        return None
    return eta_h / denom
