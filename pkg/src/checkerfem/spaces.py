"""Nodal Q1/Q2 finite-element spaces on an adaptive quadrilateral mesh.

Degrees of freedom sit at the tensor-product Lagrange nodes of the active
cells (vertices for Q1; vertices, edge midpoints and cell centres for Q2)
and are numbered lexicographically by their exact dyadic coordinates, so
the numbering is independent of refinement history.  Two kinds of
constraints make the spaces conforming:

* every node on the outer boundary is fixed to zero, and
* nodes on the fine side of a hanging edge are interpolated from the
  coarse side (midpoint average for Q1; the coarse edge quadratic
  evaluated at the quarter points for Q2, where the shared midpoint node
  itself stays unconstrained).

``FunctionSpace.proj`` is the linear map that overwrites constrained
entries with their master combination; it is a projection because masters
are never constrained themselves (zero-valued boundary masters are folded
away at build time).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .mesh import SCALE, UNIT, AdaptiveMesh, locate, locate_many, pack_keys

# -- reference element ----------------------------------------------------


def shape_1d(degree: int, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the 1D Lagrange basis on [0,1].

    Returns arrays of shape (degree+1,) + t.shape.
    """
    t = np.asarray(t, dtype=np.float64)
    if degree == 1:
        vals = np.stack([1.0 - t, t])
        ders = np.stack([np.full_like(t, -1.0), np.ones_like(t)])
    elif degree == 2:
        vals = np.stack([(2 * t - 1) * (t - 1), 4 * t * (1 - t), t * (2 * t - 1)])
        ders = np.stack([4 * t - 3, 4 - 8 * t, 4 * t - 1])
    else:
        raise ValueError(f"unsupported degree {degree}")
    return vals, ders


def shape_matrix(degree: int, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tensor-product shapes at reference points, shapes (ndl,q) and (ndl,q,2).

    Local node k = i + (degree+1)*j sits at ((i, j)/degree) on [0,1]^2.
    """
    pts = np.asarray(pts, dtype=np.float64)
    sx, dx = shape_1d(degree, pts[:, 0])
    sy, dy = shape_1d(degree, pts[:, 1])
    m = degree + 1
    n = np.empty((m * m, len(pts)))
    dn = np.empty((m * m, len(pts), 2))
    for j in range(m):
        for i in range(m):
            k = i + m * j
            n[k] = sx[i] * sy[j]
            dn[k, :, 0] = dx[i] * sy[j]
            dn[k, :, 1] = sx[i] * dy[j]
    return n, dn


@dataclass(frozen=True)
class QuadratureRule:
    """Points and positive weights; on the reference cell weights sum to 1."""

    points: np.ndarray
    weights: np.ndarray


@lru_cache(maxsize=None)
def reference_quadrature(order: int) -> QuadratureRule:
    """Tensor Gauss rule on [0,1]^2 exact for polynomial degree ``order``."""
    if order < 1:
        raise ValueError("quadrature order must be >= 1")
    m = (order + 2) // 2
    x, w = np.polynomial.legendre.leggauss(m)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    px, py = np.meshgrid(x, x, indexing="xy")
    wx, wy = np.meshgrid(w, w, indexing="xy")
    pts = np.column_stack([px.ravel(), py.ravel()])
    wts = (wx * wy).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts)


def cell_quadrature(mesh: AdaptiveMesh, cell_index: int, order: int) -> QuadratureRule:
    """Gauss rule mapped to a cell: physical points, weights sum to its area."""
    ref = reference_quadrature(order)
    x0, y0, side = mesh.cell_box(cell_index)
    pts = np.array([x0, y0]) + side * ref.points
    return QuadratureRule(pts, side * side * ref.weights)


@lru_cache(maxsize=None)
def _shapes_at(degree: int, order: int):
    ref = reference_quadrature(order)
    n, dn = shape_matrix(degree, ref.points)
    return ref, n, dn


# -- function space --------------------------------------------------------


@dataclass(frozen=True)
class ConstraintSet:
    """Affine constraints with zero inhomogeneity.

    ``entries`` maps a constrained dof to its master/weight pairs; boundary
    dofs map to the empty tuple (value pinned to zero).  Hanging entries
    keep the full interpolation weights, including masters that are
    themselves boundary dofs.
    """

    entries: dict[int, tuple[tuple[int, float], ...]]

    def __contains__(self, dof: int) -> bool:
        return dof in self.entries

    def __len__(self) -> int:
        return len(self.entries)


# Q2 interpolation weights of the coarse-edge basis (nodes 0, 1/2, 1)
# evaluated at the quarter points 1/4 and 3/4.
_Q2_QUARTER = (3.0 / 8.0, 3.0 / 4.0, -1.0 / 8.0)


class FunctionSpace:
    """Q1 or Q2 nodal space on the active cells of a mesh."""

    def __init__(self, mesh: AdaptiveMesh, degree: int):
        if degree not in (1, 2):
            raise ValueError(f"degree must be 1 or 2, got {degree}")
        self.mesh = mesh
        self.degree = degree
        self.ndl = (degree + 1) ** 2

        sw, levels, subs, _ = mesh.active_arrays()
        side = (UNIT >> levels).astype(np.int64)
        step = side // degree
        m = degree + 1
        ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing="xy")
        ii, jj = ii.ravel(), jj.ravel()
        nodes_x = sw[:, 0, None] + ii[None, :] * step[:, None]
        nodes_y = sw[:, 1, None] + jj[None, :] * step[:, None]
        keys = pack_keys(nodes_x, nodes_y)
        uniq, inv = np.unique(keys.ravel(), return_inverse=True)
        self.node_keys = uniq
        self.cell_dofs = inv.reshape(len(sw), self.ndl).astype(np.int64)
        self.n_dofs = len(uniq)
        self.node_int = np.column_stack(
            [uniq.real.astype(np.int64), uniq.imag.astype(np.int64)]
        )
        self.dof_coords = self.node_int / UNIT - 1.0
        self.cell_levels = levels
        self.cell_subdomains = subs
        self.cell_sides = side / UNIT
        self.cell_origins = sw / UNIT - 1.0

        hi = 2 * UNIT
        self.dirichlet = (
            (self.node_int[:, 0] == 0)
            | (self.node_int[:, 0] == hi)
            | (self.node_int[:, 1] == 0)
            | (self.node_int[:, 1] == hi)
        )

        self.hanging = self._build_hanging()
        entries: dict[int, tuple[tuple[int, float], ...]] = {
            int(d): () for d in np.flatnonzero(self.dirichlet)
        }
        entries.update(self.hanging)
        self.constraints = ConstraintSet(entries)

        self.free_mask = ~self.dirichlet
        for dof in self.hanging:
            self.free_mask[dof] = False
        self.n_free = int(self.free_mask.sum())
        self.proj = self._build_projection()
        self._asm: dict = {}

    # -- constraint machinery ------------------------------------------

    def _build_hanging(self) -> dict[int, tuple[tuple[int, float], ...]]:
        edges = self.mesh.hanging_edges
        if not edges:
            return {}
        vx = np.asarray(self.mesh._vx, dtype=np.int64)
        vy = np.asarray(self.mesh._vy, dtype=np.int64)
        mids = np.fromiter(edges.keys(), dtype=np.int64, count=len(edges))
        ab = np.array(list(edges.values()), dtype=np.int64)
        ax, ay = vx[ab[:, 0]], vy[ab[:, 0]]
        bx, by = vx[ab[:, 1]], vy[ab[:, 1]]
        da = self.dof_index(ax, ay)
        db = self.dof_index(bx, by)
        dm = self.dof_index(vx[mids], vy[mids])
        out: dict[int, tuple[tuple[int, float], ...]] = {}
        if self.degree == 1:
            for c, a, b in zip(dm, da, db):
                out[int(c)] = ((int(a), 0.5), (int(b), 0.5))
        else:
            wa, wm, wb = _Q2_QUARTER
            q1 = self.dof_index((3 * ax + bx) >> 2, (3 * ay + by) >> 2)
            q2 = self.dof_index((ax + 3 * bx) >> 2, (ay + 3 * by) >> 2)
            for c1, c2, a, m, b in zip(q1, q2, da, dm, db):
                out[int(c1)] = ((int(a), wa), (int(m), wm), (int(b), wb))
                out[int(c2)] = ((int(a), wb), (int(m), wm), (int(b), wa))
        for masters in out.values():
            assert all(m not in out for m, _ in masters), "chained constraint"
        return out

    def _build_projection(self) -> sp.csr_matrix:
        free = np.flatnonzero(self.free_mask)
        rows = [free]
        cols = [free]
        vals = [np.ones(len(free))]
        for c, masters in self.hanging.items():
            for m, w in masters:
                if not self.dirichlet[m]:
                    rows.append([c])
                    cols.append([m])
                    vals.append([w])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        return sp.csr_matrix(
            (vals, (rows, cols)), shape=(self.n_dofs, self.n_dofs)
        )

    def distribute(self, values: np.ndarray) -> np.ndarray:
        """Overwrite constrained entries with their master combinations."""
        return self.proj @ values

    def condense_vector(self, raw: np.ndarray) -> np.ndarray:
        """Fold constrained test rows into masters and zero them."""
        return self.proj.T @ raw

    def condense_matrix(self, raw: sp.spmatrix) -> sp.csr_matrix:
        """Condense rows and columns; constrained diagonal entries become 1."""
        out = self.proj.T @ raw
        out = (out @ self.proj).tocsr()
        d = np.where(self.free_mask, 0.0, 1.0)
        return (out + sp.diags(d)).tocsr()

    # -- lookups ---------------------------------------------------------

    def dof_index(self, xi, yi):
        """Dof ids of integer-grid node coordinates (scalar or arrays)."""
        keys = pack_keys(xi, yi)
        pos = np.searchsorted(self.node_keys, keys)
        if not np.all(self.node_keys[np.minimum(pos, self.n_dofs - 1)] == keys):
            raise KeyError("coordinates are not nodes of this space")
        if np.isscalar(xi):
            return int(pos)
        return pos.astype(np.int64)

    def zero_field(self) -> "DiscreteField":
        return DiscreteField(self, np.zeros(self.n_dofs))


def build_space(mesh: AdaptiveMesh, degree: int) -> FunctionSpace:
    """Construct the conforming Q1 (degree 1) or Q2 (degree 2) space."""
    return FunctionSpace(mesh, degree)


@dataclass
class DiscreteField:
    """Coefficient vector attached to its space."""

    space: FunctionSpace
    coefficients: np.ndarray

    def copy(self) -> "DiscreteField":
        return DiscreteField(self.space, self.coefficients.copy())


# -- evaluation and inter-space maps ---------------------------------------


def evaluate(field: DiscreteField, point) -> float:
    """Point value of the piecewise polynomial (deterministic cell choice)."""
    space = field.space
    ci = locate(space.mesh, point)
    x0, y0, side = space.mesh.cell_box(ci)
    xi = np.array([[(point[0] - x0) / side, (point[1] - y0) / side]])
    n, _ = shape_matrix(space.degree, xi)
    arow = int(np.searchsorted(space.mesh.active_cells, ci))
    dofs = space.cell_dofs[arow]
    return float(n[:, 0] @ field.coefficients[dofs])


def _values_at_nodes(field: DiscreteField, xi: np.ndarray, yi: np.ndarray) -> np.ndarray:
    """Field values at integer-grid points, vectorised over points."""
    space = field.space
    mesh = space.mesh
    cells = locate_many(mesh, xi, yi)
    arow = np.searchsorted(mesh.active_cells, cells)
    sw, levels, _, _ = mesh.active_arrays()
    side = (UNIT >> levels[arow]).astype(np.float64)
    tx = (xi - sw[arow, 0]) / side
    ty = (yi - sw[arow, 1]) / side
    vx, _ = shape_1d(space.degree, tx)
    vy, _ = shape_1d(space.degree, ty)
    m = space.degree + 1
    coeffs = field.coefficients[space.cell_dofs[arow]]
    out = np.zeros(len(xi))
    for j in range(m):
        for i in range(m):
            out += coeffs[:, i + m * j] * vx[i] * vy[j]
    return out


def embed_q1_in_q2(field: DiscreteField, q2_space: FunctionSpace) -> DiscreteField:
    """Represent a Q1 field exactly in the Q2 space on the same mesh."""
    if field.space.degree != 1 or q2_space.degree != 2:
        raise ValueError("embedding maps a degree-1 field into a degree-2 space")
    if field.space.mesh is not q2_space.mesh:
        raise ValueError("embedding requires both spaces on the same mesh")
    nodes = np.array(
        [[i / 2.0, j / 2.0] for j in range(3) for i in range(3)]
    )
    emb, _ = shape_matrix(1, nodes)  # (4, 9)
    local = field.coefficients[field.space.cell_dofs] @ emb
    out = np.zeros(q2_space.n_dofs)
    out[q2_space.cell_dofs] = local
    # hanging consistency is automatic: the written values are traces of
    # one continuous function, so no constraint distribution is needed
    # (and none is wanted, it would zero inhomogeneous boundary values)
    return DiscreteField(q2_space, out)


def transfer(field: DiscreteField, new_space: FunctionSpace) -> DiscreteField:
    """Interpolate a field onto a space over a refinement of its mesh.

    Refinement only adds nodes, so the result represents the same function
    whenever the target mesh refines the source mesh cell by cell.
    """
    if new_space.degree != field.space.degree:
        raise ValueError("transfer keeps the polynomial degree")
    xi = new_space.node_int[:, 0]
    yi = new_space.node_int[:, 1]
    vals = _values_at_nodes(field, xi, yi)
    return DiscreteField(new_space, vals)
