"""Checkerboard model: residual and Jacobian assembly for the four forms.

The weak residual pairs a trial field u with a test function v as

    NW (cubic):     grad u . grad v  +  u^3 v
    NE (power):     (|grad u|^2 + eps^2)^((p(x)-2)/2) grad u . grad v
    SE (laplace):   grad u . grad v
    SW (rational):  (1/10 + 1/(1+u^2)) grad u . grad v
    everywhere:     - f v

with the variable exponent p(x) = (1+2*x1)(1+2*x2) on the NE quadrant and
p = 2 elsewhere.  The power-law weight is evaluated as
exp(((p-2)/2) * log(|grad u|^2 + eps^2)): the argument is bounded below by
eps^2 > 0, so the expression stays finite for every exponent that occurs.

Assembly is vectorised per subdomain group (all active cells of one
quadrant share one quadrature rule).  Constrained test rows are condensed
through the space projection; the condensed Jacobian carries unit diagonal
entries on constrained rows and columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import Subdomain
from .spaces import DiscreteField, FunctionSpace, _shapes_at

#: Quadrature order per operator kind.  None means twice the polynomial
#: degree of the space being assembled (enough for the plain form).
DEFAULT_QUAD_ORDERS: dict[str, int | None] = {
    "cubic": 6,
    "power": 8,
    "rational": 6,
    "laplace": None,
}


#: Operator kind hosted by each quadrant.
DEFAULT_OPERATORS: dict[Subdomain, str] = {
    Subdomain.NW: "cubic",
    Subdomain.NE: "power",
    Subdomain.SE: "laplace",
    Subdomain.SW: "rational",
}

_OPERATOR_KINDS = ("cubic", "power", "rational", "laplace")


@dataclass
class ModelParams:
    """Problem data: source strength, regularisation and quadrature orders.

    ``operators`` assigns one of the four forms to each quadrant.
    ``laplace_only=True`` replaces every operator by plain diffusion; this
    synthetic configuration is used by linearity checks.
    """

    f: float = 10.0
    epsilon: float = 1e-10
    quad_orders: dict[str, int | None] = field(
        default_factory=lambda: dict(DEFAULT_QUAD_ORDERS)
    )
    operators: dict[Subdomain, str] = field(
        default_factory=lambda: dict(DEFAULT_OPERATORS)
    )
    laplace_only: bool = False

    def __post_init__(self):
        if not (self.epsilon > 0.0):
            raise ValueError("epsilon must be positive")
        if not math.isfinite(self.f):
            raise ValueError("source strength must be finite")
        unknown = set(self.quad_orders) - set(_OPERATOR_KINDS)
        if unknown:
            raise ValueError(f"unknown quadrature keys: {unknown}")
        if set(self.operators) != set(Subdomain):
            raise ValueError("operators must cover exactly the four quadrants")
        bad = set(self.operators.values()) - set(_OPERATOR_KINDS)
        if bad:
            raise ValueError(f"unknown operator kinds: {bad}")

    def order_for(self, sub: Subdomain, degree: int) -> int:
        kind = self.kind(sub)
        order = self.quad_orders.get(kind, DEFAULT_QUAD_ORDERS[kind])
        return 2 * degree if order is None else int(order)

    def kind(self, sub: Subdomain) -> str:
        return "laplace" if self.laplace_only else self.operators[sub]


def diffusion_exponent(point) -> float:
    """The exponent p at an interior point away from the interface lines."""
    x, y = float(point[0]), float(point[1])
    if abs(x) >= 1.0 or abs(y) >= 1.0:
        raise ValueError(f"point {(x, y)} lies outside the open domain")
    if x == 0.0 or y == 0.0:
        raise ValueError(f"exponent is ambiguous on the interface at {(x, y)}")
    if x > 0.0 and y > 0.0:
        return (1.0 + 2.0 * x) * (1.0 + 2.0 * y)
    return 2.0


# -- assembly groups --------------------------------------------------------


def _groups(space: FunctionSpace, params: ModelParams):
    """Per-subdomain cell batches with quadrature and shape tables."""
    out = []
    for sub in Subdomain:
        order = params.order_for(sub, space.degree)
        key = ("grp", int(sub), order)
        grp = space._asm.get(key)
        if grp is None:
            rows = np.flatnonzero(space.cell_subdomains == int(sub))
            ref, n, dn = _shapes_at(space.degree, order)
            grp = {
                "sub": sub,
                "rows": rows,
                "dofs": space.cell_dofs[rows],
                "h": space.cell_sides[rows],
                "ref_pts": ref.points,
                "wts": ref.weights,
                "N": n,
                "dN": dn,
                "G": np.einsum("iqd,jqd->qij", dn, dn),
                "M": np.einsum("iq,jq->qij", n, n),
            }
            space._asm[key] = grp
        if len(grp["rows"]):
            out.append(grp)
    return out


def _exponent_values(space: FunctionSpace, grp, params: ModelParams) -> np.ndarray:
    """Variable exponent at the group's quadrature points, cached."""
    p = grp.get("p")
    if p is None:
        pts = (
            space.cell_origins[grp["rows"]][:, None, :]
            + grp["h"][:, None, None] * grp["ref_pts"][None, :, :]
        )
        p = (1.0 + 2.0 * np.abs(pts[..., 0])) * (1.0 + 2.0 * np.abs(pts[..., 1]))
        grp["p"] = p
    return p


def _eval_group(grp, coeffs: np.ndarray):
    """Values and physical gradients of a coefficient vector on a group."""
    x = coeffs[grp["dofs"]]  # (m, ndl)
    vals = x @ grp["N"]  # (m, q)
    grads = np.einsum("mn,nqd->mqd", x, grp["dN"]) / grp["h"][:, None, None]
    return vals, grads


def _power_weights(grads, p, eps, with_derivative=False):
    """Power-law diffusivity a = (|g|^2 + eps^2)^((p-2)/2) via exp/log.

    With ``with_derivative`` also returns d = (p-2) * (...)^((p-4)/2), the
    scalar factor of the rank-one linearisation term.
    """
    s = np.einsum("mqd,mqd->mq", grads, grads) + eps * eps
    logs = np.log(s)
    a = np.exp(0.5 * (p - 2.0) * logs)
    if not with_derivative:
        return a
    d = (p - 2.0) * np.exp(0.5 * (p - 4.0) * logs)
    return a, d


def _flux_react(space, grp, u, g, params: ModelParams):
    """Residual integrand: flux (m,q,2) against grad v and react (m,q) against v."""
    kind = params.kind(grp["sub"])
    if kind == "power":
        a = _power_weights(g, _exponent_values(space, grp, params), params.epsilon)
        flux = a[:, :, None] * g
    elif kind == "rational":
        c = 0.1 + 1.0 / (1.0 + u * u)
        flux = c[:, :, None] * g
    else:
        flux = g.copy()
    react = np.full_like(u, -params.f)
    if kind == "cubic":
        react = react + u**3
    return flux, react


def _tangent_terms(space, grp, u, g, params: ModelParams, w_val, w_grad):
    """Directional-derivative integrand in direction w: flux and react vs test.

    Returns (flux, react) with flux (m,q,2) paired against grad v and react
    (m,q) against v, so that the pairing of the derivative at u in
    direction w with a test function v is the usual flux/react integral.
    """
    kind = params.kind(grp["sub"])
    if kind == "cubic":
        return w_grad.copy(), 3.0 * u * u * w_val
    if kind == "power":
        p = _exponent_values(space, grp, params)
        a, d = _power_weights(g, p, params.epsilon, with_derivative=True)
        gdotw = np.einsum("mqd,mqd->mq", g, w_grad)
        flux = a[:, :, None] * w_grad + (d * gdotw)[:, :, None] * g
        return flux, np.zeros_like(w_val)
    if kind == "rational":
        c = 0.1 + 1.0 / (1.0 + u * u)
        cp = -2.0 * u / (1.0 + u * u) ** 2
        flux = c[:, :, None] * w_grad + (cp * w_val)[:, :, None] * g
        return flux, np.zeros_like(w_val)
    return w_grad.copy(), np.zeros_like(w_val)


def _cotangent_terms(space, grp, u, g, params: ModelParams, z_val, z_grad):
    """Derivative pairing as a functional of the direction, test z fixed.

    Returns (flux, react) such that the derivative at u applied to a
    direction v and tested with z equals the flux/react integral against
    grad v and v.  Mirror image of :func:`_tangent_terms`, which fixes the
    direction instead.
    """
    kind = params.kind(grp["sub"])
    if kind == "cubic":
        return z_grad.copy(), 3.0 * u * u * z_val
    if kind == "power":
        p = _exponent_values(space, grp, params)
        a, d = _power_weights(g, p, params.epsilon, with_derivative=True)
        gdotz = np.einsum("mqd,mqd->mq", g, z_grad)
        flux = a[:, :, None] * z_grad + (d * gdotz)[:, :, None] * g
        return flux, np.zeros_like(z_val)
    if kind == "rational":
        c = 0.1 + 1.0 / (1.0 + u * u)
        cp = -2.0 * u / (1.0 + u * u) ** 2
        gdotz = np.einsum("mqd,mqd->mq", g, z_grad)
        return c[:, :, None] * z_grad, cp * gdotz
    return z_grad.copy(), np.zeros_like(z_val)


def _scatter_functional(space, grp, flux, react, out):
    """Accumulate the flux/react functional into a raw test vector."""
    wts, n, dn, h = grp["wts"], grp["N"], grp["dN"], grp["h"]
    q = len(wts)
    ndl = space.ndl
    fw = flux * wts[None, :, None]
    loc = (fw.reshape(-1, q * 2) @ dn.transpose(1, 2, 0).reshape(q * 2, ndl)) * h[
        :, None
    ]
    loc += ((react * wts) @ n.T) * (h * h)[:, None]
    out += np.bincount(grp["dofs"].ravel(), weights=loc.ravel(), minlength=len(out))


def residual_raw(u: np.ndarray, space: FunctionSpace, params: ModelParams) -> np.ndarray:
    """Unconstrained residual vector: entry i pairs the forms with shape i."""
    out = np.zeros(space.n_dofs)
    for grp in _groups(space, params):
        vals, grads = _eval_group(grp, u)
        flux, react = _flux_react(space, grp, vals, grads, params)
        _scatter_functional(space, grp, flux, react, out)
    return out


def jacobian_action_raw(
    u: np.ndarray, w: np.ndarray, space: FunctionSpace, params: ModelParams
) -> np.ndarray:
    """Unconstrained directional derivative of the residual at u toward w."""
    out = np.zeros(space.n_dofs)
    for grp in _groups(space, params):
        vals, grads = _eval_group(grp, u)
        w_val, w_grad = _eval_group(grp, w)
        flux, react = _tangent_terms(space, grp, vals, grads, params, w_val, w_grad)
        _scatter_functional(space, grp, flux, react, out)
    return out


def jacobian_raw(u: np.ndarray, space: FunctionSpace, params: ModelParams) -> sp.csr_matrix:
    """Unconstrained Jacobian: entry (i, j) is the derivative toward shape j
    of residual entry i."""
    ndl = space.ndl
    blocks_r, blocks_c, blocks_v = [], [], []
    for grp in _groups(space, params):
        kind = params.kind(grp["sub"])
        wts, n, dn, h = grp["wts"], grp["N"], grp["dN"], grp["h"]
        q = len(wts)
        vals, grads = _eval_group(grp, u)
        m = len(grp["rows"])

        if kind == "power":
            p = _exponent_values(space, grp, params)
            a_pw, d_pw = _power_weights(grads, p, params.epsilon, with_derivative=True)
            a = a_pw * wts
        elif kind == "rational":
            a = (0.1 + 1.0 / (1.0 + vals * vals)) * wts
        else:
            a = np.broadcast_to(wts, (m, q))
        loc = (a.reshape(m, q) @ grp["G"].reshape(q, ndl * ndl)).reshape(m, ndl, ndl)

        if kind == "cubic":
            coef = 3.0 * vals * vals * wts * (h * h)[:, None]
            loc += (coef @ grp["M"].reshape(q, ndl * ndl)).reshape(m, ndl, ndl)
        elif kind == "power":
            b = np.einsum("mqd,iqd->mqi", grads, dn)
            loc += np.matmul(b.transpose(0, 2, 1) * (d_pw * wts)[:, None, :], b)
        elif kind == "rational":
            cp = -2.0 * vals / (1.0 + vals * vals) ** 2
            b = np.einsum("mqd,iqd->mqi", grads, dn)
            bw = b.transpose(0, 2, 1) * (cp * wts * h[:, None])[:, None, :]
            loc += np.matmul(bw, np.broadcast_to(n.T, (m, q, ndl)))

        dofs = grp["dofs"].astype(np.int32)  # dof counts stay far below 2**31
        blocks_r.append(np.repeat(dofs, ndl, axis=1).ravel())
        blocks_c.append(np.tile(dofs, (1, ndl)).ravel())
        blocks_v.append(loc.ravel())
    mat = sp.coo_matrix(
        (np.concatenate(blocks_v), (np.concatenate(blocks_r), np.concatenate(blocks_c))),
        shape=(space.n_dofs, space.n_dofs),
    )
    return mat.tocsr()


# -- public condensed operations --------------------------------------------


def _check_spaces(u: DiscreteField, space: FunctionSpace):
    if u.space is not space and (
        u.space.mesh is not space.mesh or u.space.degree != space.degree
    ):
        raise ValueError("field and test space live on different meshes")


def residual(u: DiscreteField, test_space: FunctionSpace, params: ModelParams) -> np.ndarray:
    """Condensed residual: constrained rows folded into masters, then zeroed."""
    _check_spaces(u, test_space)
    return test_space.condense_vector(residual_raw(u.coefficients, test_space, params))


def jacobian(u: DiscreteField, space: FunctionSpace, params: ModelParams) -> sp.csr_matrix:
    """Condensed Jacobian with unit diagonal on constrained rows/columns."""
    _check_spaces(u, space)
    return space.condense_matrix(jacobian_raw(u.coefficients, space, params))
