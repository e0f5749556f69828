"""The five tracked quantities and their sign-weighted combination.

Quantities 1..4 are the integrals of the solution over single quadrants,
ordered by the operator they cover: J1 the power-law quadrant (NE), J2 the
cubic quadrant (NW), J3 the plain-diffusion quadrant (SE), J4 the
rational-coefficient quadrant (SW).  Quantity 5 is the point value at
(0, 1/2) on the interface between the first two.  All five are linear, so
their derivatives are state-independent vectors.

For simultaneous control the quantities are combined into a single
functional with weights sign(J_i(enriched) - J_i(coarse)) / |J_i(coarse)|,
sign(0) = +1.  The sign matches every term's expected error direction,
which prevents cancellation between quantities, and the scaling makes the
combined error an upper bound for each relative error.  Weights are
computed once per adaptive step, after both primal solves, and frozen for
that step's adjoint solves and error estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Subdomain, locate
from .spaces import DiscreteField, FunctionSpace, _shapes_at, evaluate, shape_matrix

#: Evaluation point of the fifth quantity; it sits on the vertical
#: interface, where continuity makes the two-sided value unique.
POINT_QOI = (0.0, 0.5)

#: High-accuracy reference values of J1..J5, computed on heavily refined
#: meshes; ``cli reference`` regenerates them independently.
DEFAULT_REFERENCE_VALUES = np.array(
    [
        0.663674525018,
        1.011855377549,
        1.197302269110,
        1.476574169174,
        1.261144956935,
    ]
)

N_QOIS = 5


@dataclass(frozen=True)
class QuantityOfInterest:
    """Descriptor of one tracked quantity."""

    name: str
    subdomain: Subdomain | None = None  # None marks the point value
    point: tuple[float, float] | None = None


QOIS: tuple[QuantityOfInterest, ...] = (
    QuantityOfInterest("J1", subdomain=Subdomain.NE),
    QuantityOfInterest("J2", subdomain=Subdomain.NW),
    QuantityOfInterest("J3", subdomain=Subdomain.SE),
    QuantityOfInterest("J4", subdomain=Subdomain.SW),
    QuantityOfInterest("J5", point=POINT_QOI),
)

#: Quadrant -> position of its integral quantity in QOIS.
SUBDOMAIN_QOI_INDEX = {int(q.subdomain): i for i, q in enumerate(QOIS[:4])}


def _integration_group(space: FunctionSpace, sub: Subdomain):
    key = ("qoi", int(sub))
    grp = space._asm.get(key)
    if grp is None:
        rows = np.flatnonzero(space.cell_subdomains == int(sub))
        ref, n, _ = _shapes_at(space.degree, space.degree + 2)
        grp = (rows, space.cell_dofs[rows], space.cell_sides[rows], ref.weights, n)
        space._asm[key] = grp
    return grp


def evaluate_qoi(k: int, u: DiscreteField) -> float:
    """Value of quantity k (1-based) at a discrete field."""
    qoi = QOIS[k - 1]
    if qoi.point is not None:
        return evaluate(u, qoi.point)
    space = u.space
    rows, dofs, h, wts, n = _integration_group(space, qoi.subdomain)
    vals = u.coefficients[dofs] @ n
    return float(((vals @ wts) * h * h).sum())


def qoi_derivative(k: int, space: FunctionSpace) -> np.ndarray:
    """Condensed derivative vector of quantity k; state-independent."""
    qoi = QOIS[k - 1]
    raw = np.zeros(space.n_dofs)
    if qoi.point is not None:
        ci = locate(space.mesh, qoi.point)
        arow = int(np.searchsorted(space.mesh.active_cells, ci))
        x0, y0, side = space.mesh.cell_box(ci)
        loc = np.array(
            [[(qoi.point[0] - x0) / side, (qoi.point[1] - y0) / side]]
        )
        n, _ = shape_matrix(space.degree, loc)
        np.add.at(raw, space.cell_dofs[arow], n[:, 0])
    else:
        rows, dofs, h, wts, n = _integration_group(space, qoi.subdomain)
        loc = np.broadcast_to(wts @ n.T, (len(rows), space.ndl)) * (h * h)[:, None]
        raw += np.bincount(dofs.ravel(), weights=loc.ravel(), minlength=space.n_dofs)
    return space.condense_vector(raw)


@dataclass(frozen=True)
class CombinedWeights:
    """Per-quantity weights of the combined functional, frozen per step.

    ``coarse`` and ``enriched`` record the quantity values the weights were
    built from; ``mesh`` identifies the mesh they belong to.
    """

    values: np.ndarray
    coarse: np.ndarray
    enriched: np.ndarray
    mesh: object

    def combine(self, qoi_values: np.ndarray) -> float:
        """The weighted combination of a vector of quantity values."""
        return float(self.values @ np.asarray(qoi_values))


def combined_weights(u_h: DiscreteField, u_h2: DiscreteField) -> CombinedWeights:
    """Weights sign(J_i(u_h2) - J_i(u_h)) / |J_i(u_h)| with sign(0) = +1."""
    if u_h.space.mesh is not u_h2.space.mesh:
        raise ValueError("primal solutions live on different meshes")
    coarse = np.array([evaluate_qoi(k, u_h) for k in range(1, N_QOIS + 1)])
    enriched = np.array([evaluate_qoi(k, u_h2) for k in range(1, N_QOIS + 1)])
    if np.any(coarse == 0.0):
        dead = [QOIS[i].name for i in np.flatnonzero(coarse == 0.0)]
        raise ValueError(
            f"relative scaling undefined: quantities {dead} vanish at the "
            "coarse solution"
        )
    signs = np.where(enriched - coarse >= 0.0, 1.0, -1.0)
    return CombinedWeights(
        values=signs / np.abs(coarse),
        coarse=coarse,
        enriched=enriched,
        mesh=u_h.space.mesh,
    )


def combined_derivative(weights: CombinedWeights, space: FunctionSpace) -> np.ndarray:
    """Condensed derivative of the combined functional (adjoint right side)."""
    if weights.mesh is not space.mesh:
        raise ValueError("weights were frozen on a different mesh")
    out = np.zeros(space.n_dofs)
    for k in range(1, N_QOIS + 1):
        w = weights.values[k - 1]
        if w != 0.0:
            out += w * qoi_derivative(k, space)
    return out
