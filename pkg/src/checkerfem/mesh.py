"""Adaptive quadrilateral mesh on the square (-1,1)^2.

The domain is split into four unit quadrants by the lines x1=0 and x2=0;
every cell is an axis-aligned dyadic square that never straddles those
lines, so each cell carries a unique quadrant tag.  Refinement is the
isotropic 1->4 split with closure refinement keeping the mesh 1-irregular
(edge-adjacent active cells differ by at most one level).  A vertex sitting
at the midpoint of a coarser neighbour's edge is a hanging vertex; the map
``AdaptiveMesh.hanging_edges`` records it together with the two corner
vertices of that coarse edge.

All vertex coordinates are dyadic rationals.  They are stored as integers
on a fixed grid of 2**SCALE subdivisions per unit length, which makes
vertex identity and midpoint computation exact; floating-point coordinates
are derived views.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

#: Number of dyadic subdivisions of one unit length.  Levels up to
#: SCALE - 2 are representable (the level-(SCALE-1) cells could not be
#: split without leaving the integer grid).
SCALE = 48
UNIT = 1 << SCALE  #: integer side length of a level-0 cell


class Subdomain(enum.IntEnum):
    """Quadrant tags for the four locally different models."""

    NW = 1  # x1 < 0, x2 > 0: diffusion with cubic reaction
    NE = 2  # x1 > 0, x2 > 0: variable-exponent power-law diffusion
    SE = 3  # x1 > 0, x2 < 0: plain diffusion
    SW = 4  # x1 < 0, x2 < 0: solution-dependent rational diffusivity


@dataclass(slots=True)
class Cell:
    """One quadrilateral cell of the refinement forest.

    ``vertex_ids`` lists the corners counterclockwise starting at the
    south-west corner.  ``children`` holds the four quadrant children in
    the order SW, SE, NW, NE once the cell has been split; exactly one of
    ``children is not None`` and ``active`` holds.
    """

    vertex_ids: tuple[int, int, int, int]
    level: int
    subdomain: Subdomain
    parent: int | None = None
    children: tuple[int, int, int, int] | None = None
    active: bool = True


def pack_keys(xi, yi):
    """Pack integer coordinate pairs into complex128 sort keys.

    Both coordinates stay below 2**(SCALE+1) < 2**53, so the conversion is
    exact and lexicographic complex ordering equals ordering by (x, y).
    """
    return np.asarray(xi, dtype=np.float64) + 1j * np.asarray(yi, dtype=np.float64)


class AdaptiveMesh:
    """Forest-of-quadtrees mesh with hanging-node bookkeeping.

    Never instantiate directly; use :func:`initial_mesh` and
    :func:`refine`.  Mutation happens only inside :func:`refine`, which
    works on a copy; all query methods are read-only and safe to call
    concurrently between refinements.
    """

    def __init__(self):
        self._vx: list[int] = []
        self._vy: list[int] = []
        self._vindex: dict[tuple[int, int], int] = {}
        self.cells: list[Cell] = []
        self._cell_at: dict[tuple[int, int, int], int] = {}
        self._caches: dict = {}

    # -- construction ------------------------------------------------

    def _vertex(self, xi: int, yi: int) -> int:
        key = (xi, yi)
        idx = self._vindex.get(key)
        if idx is None:
            idx = len(self._vx)
            self._vindex[key] = idx
            self._vx.append(xi)
            self._vy.append(yi)
        return idx

    def _add_cell(self, cell: Cell) -> int:
        idx = len(self.cells)
        self.cells.append(cell)
        side = UNIT >> cell.level
        x0, y0 = self.vertex_int(cell.vertex_ids[0])
        self._cell_at[(cell.level, x0 // side, y0 // side)] = idx
        return idx

    def _clone(self) -> "AdaptiveMesh":
        other = AdaptiveMesh()
        other._vx = list(self._vx)
        other._vy = list(self._vy)
        other._vindex = dict(self._vindex)
        other.cells = list(self.cells)  # Cell objects replaced on write
        other._cell_at = dict(self._cell_at)
        return other

    # -- basic queries -----------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self._vx)

    def vertex_int(self, i: int) -> tuple[int, int]:
        return self._vx[i], self._vy[i]

    @property
    def vertex_coords(self) -> np.ndarray:
        """Float coordinates of all vertices, shape (n_vertices, 2)."""
        cached = self._caches.get("vertex_coords")
        if cached is None or len(cached) != self.n_vertices:
            xs = np.asarray(self._vx, dtype=np.float64) / UNIT - 1.0
            ys = np.asarray(self._vy, dtype=np.float64) / UNIT - 1.0
            cached = np.column_stack([xs, ys])
            self._caches["vertex_coords"] = cached
        return cached

    @property
    def active_cells(self) -> np.ndarray:
        """Indices of active cells, ascending."""
        cached = self._caches.get("active_cells")
        if cached is None:
            cached = np.array(
                [i for i, c in enumerate(self.cells) if c.active], dtype=np.int64
            )
            self._caches["active_cells"] = cached
        return cached

    @property
    def n_active(self) -> int:
        return len(self.active_cells)

    def active_arrays(self):
        """Columnar view of the active cells.

        Returns (sw_int, levels, subdomains, corners): the integer SW
        corner coordinates (n, 2), refinement levels (n,), subdomain codes
        (n,) and corner vertex ids (n, 4) in CCW order.
        """
        cached = self._caches.get("active_arrays")
        if cached is None:
            act = self.active_cells
            corners = np.array([self.cells[i].vertex_ids for i in act], dtype=np.int64)
            corners = corners.reshape(-1, 4)
            vx = np.asarray(self._vx, dtype=np.int64)
            vy = np.asarray(self._vy, dtype=np.int64)
            sw = np.column_stack([vx[corners[:, 0]], vy[corners[:, 0]]])
            levels = np.array([self.cells[i].level for i in act], dtype=np.int64)
            subs = np.array([int(self.cells[i].subdomain) for i in act], dtype=np.int64)
            cached = (sw, levels, subs, corners)
            self._caches["active_arrays"] = cached
        return cached

    def _vertex_key_index(self):
        """Sorted packed vertex keys plus the matching vertex ids."""
        cached = self._caches.get("vertex_key_index")
        if cached is None or len(cached[0]) != self.n_vertices:
            keys = pack_keys(self._vx, self._vy)
            order = np.argsort(keys)
            cached = (keys[order], order)
            self._caches["vertex_key_index"] = cached
        return cached

    def _active_edges(self):
        """Corner vertex ids (n_edges, 2) of every active cell edge."""
        cached = self._caches.get("active_edges")
        if cached is None:
            _, _, _, corners = self.active_arrays()
            cached = np.stack(
                [
                    corners[:, [0, 1]],
                    corners[:, [1, 2]],
                    corners[:, [2, 3]],
                    corners[:, [3, 0]],
                ],
                axis=1,
            ).reshape(-1, 2)
            self._caches["active_edges"] = cached
        return cached

    @property
    def hanging_edges(self) -> dict[int, tuple[int, int]]:
        """Map hanging vertex id -> (corner a, corner b) of its coarse edge."""
        cached = self._caches.get("hanging_edges")
        if cached is None:
            edges = self._active_edges()
            vx = np.asarray(self._vx, dtype=np.int64)
            vy = np.asarray(self._vy, dtype=np.int64)
            mx = (vx[edges[:, 0]] + vx[edges[:, 1]]) >> 1
            my = (vy[edges[:, 0]] + vy[edges[:, 1]]) >> 1
            keys, ids = self._vertex_key_index()
            mk = pack_keys(mx, my)
            pos = np.searchsorted(keys, mk)
            pos = np.minimum(pos, len(keys) - 1)
            hit = keys[pos] == mk
            cached = {
                int(ids[p]): (int(a), int(b))
                for p, (a, b) in zip(pos[hit], edges[hit])
            }
            self._caches["hanging_edges"] = cached
        return cached

    # -- refinement ---------------------------------------------------

    def _split(self, idx: int) -> None:
        cell = self.cells[idx]
        if not cell.active:
            return
        level = cell.level
        if level >= SCALE - 2:
            raise RuntimeError(f"refinement level limit reached at cell {idx}")
        side = UNIT >> level
        x0, y0 = self.vertex_int(cell.vertex_ids[0])
        cx, cy = x0 // side, y0 // side
        top = 2 << level  # number of level cells per direction

        # Closure: a coarser active edge neighbour must split first,
        # otherwise our children would sit two levels below it.
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nx, ny = cx + dx, cy + dy
            if not (0 <= nx < top and 0 <= ny < top):
                continue
            if (level, nx, ny) in self._cell_at:
                continue
            j = self._cell_at.get((level - 1, nx >> 1, ny >> 1))
            if j is None:
                raise AssertionError("1-irregularity broken before refinement")
            if self.cells[j].active:
                self._split(j)

        half = side >> 1
        kids = []
        for dy in (0, 1):
            for dx in (0, 1):
                ax, ay = x0 + dx * half, y0 + dy * half
                corners = (
                    self._vertex(ax, ay),
                    self._vertex(ax + half, ay),
                    self._vertex(ax + half, ay + half),
                    self._vertex(ax, ay + half),
                )
                kids.append(
                    self._add_cell(
                        Cell(corners, level + 1, cell.subdomain, parent=idx)
                    )
                )
        self.cells[idx] = replace(cell, active=False, children=tuple(kids))

    # -- geometric queries ---------------------------------------------

    def cell_box(self, idx: int) -> tuple[float, float, float]:
        """(x0, y0, side) of a cell in float coordinates (exact dyadics)."""
        cell = self.cells[idx]
        x0, y0 = self.vertex_int(cell.vertex_ids[0])
        side = UNIT >> cell.level
        return x0 / UNIT - 1.0, y0 / UNIT - 1.0, side / UNIT

    def check_invariants(self) -> None:
        """Raise AssertionError if tiling or 1-irregularity is violated."""
        _, levels, _, _ = self.active_arrays()
        counts = np.bincount(levels)
        total = sum(
            int(c) * (UNIT >> lvl) ** 2 for lvl, c in enumerate(counts)
        )  # exact big ints
        assert total == (2 * UNIT) ** 2, "active cells do not tile the domain"

        # An interior vertex on an active edge is legal only at the edge
        # midpoint (one hanging level); a vertex at a quarter point would
        # mean a neighbour two levels finer.
        edges = self._active_edges()
        vx = np.asarray(self._vx, dtype=np.int64)
        vy = np.asarray(self._vy, dtype=np.int64)
        ax, ay = vx[edges[:, 0]], vy[edges[:, 0]]
        bx, by = vx[edges[:, 1]], vy[edges[:, 1]]
        keys, _ = self._vertex_key_index()
        for t in (1, 3):
            qk = pack_keys(ax + (t * (bx - ax)) // 4, ay + (t * (by - ay)) // 4)
            pos = np.minimum(np.searchsorted(keys, qk), len(keys) - 1)
            assert not np.any(keys[pos] == qk), "mesh is not 1-irregular"


def initial_mesh() -> AdaptiveMesh:
    """The four-cell mesh of unit quadrant cells on the 3x3 vertex grid."""
    mesh = AdaptiveMesh()
    for sub in Subdomain:  # NW, NE, SE, SW
        west = sub in (Subdomain.NW, Subdomain.SW)
        south = sub in (Subdomain.SE, Subdomain.SW)
        x0 = 0 if west else UNIT
        y0 = 0 if south else UNIT
        corners = (
            mesh._vertex(x0, y0),
            mesh._vertex(x0 + UNIT, y0),
            mesh._vertex(x0 + UNIT, y0 + UNIT),
            mesh._vertex(x0, y0 + UNIT),
        )
        mesh._add_cell(Cell(corners, 0, sub))
    return mesh


def refine(mesh: AdaptiveMesh, flags) -> AdaptiveMesh:
    """Split the flagged active cells, plus closure splits, on a copy.

    Each flagged cell is replaced by its four congruent children; coarser
    neighbours are split as needed so the result stays 1-irregular.  The
    input mesh is left untouched.  Raises ValueError for a flag that is
    not an active cell of ``mesh``.
    """
    flags = sorted(set(int(f) for f in flags))
    for f in flags:
        if not (0 <= f < len(mesh.cells)):
            raise ValueError(f"refinement flag {f} is not a cell index")
        if not mesh.cells[f].active:
            raise ValueError(f"refinement flag {f} points at an inactive cell")
    out = mesh._clone()
    for f in flags:
        out._split(f)  # no-op if a closure split got there first
    return out


def locate(mesh: AdaptiveMesh, point) -> int:
    """Active cell whose closure contains ``point``.

    On shared edges and corners the candidate with the lowest cell index
    wins, which makes the result deterministic.  Points outside the closed
    domain are rejected.
    """
    x, y = float(point[0]), float(point[1])
    eps = 1e-12
    if abs(x) > 1.0 + eps or abs(y) > 1.0 + eps:
        raise ValueError(f"point {(x, y)} lies outside the domain")
    x = min(1.0, max(-1.0, x))
    y = min(1.0, max(-1.0, y))

    best = None
    stack = [0, 1, 2, 3]
    while stack:
        i = stack.pop()
        x0, y0, s = mesh.cell_box(i)
        if not (x0 <= x <= x0 + s and y0 <= y <= y0 + s):
            continue
        cell = mesh.cells[i]
        if cell.active:
            best = i if best is None else min(best, i)
        else:
            stack.extend(cell.children)
    assert best is not None
    return best


def locate_many(mesh: AdaptiveMesh, xi: np.ndarray, yi: np.ndarray) -> np.ndarray:
    """Vectorised :func:`locate` for integer-grid points.

    Tie-break differs from :func:`locate`: on internal split lines the
    east/north child is chosen.  Callers use this only to evaluate
    continuous fields, where the choice does not matter.
    """
    xi = np.asarray(xi, dtype=np.int64)
    yi = np.asarray(yi, dtype=np.int64)
    ncell = len(mesh.cells)
    children = np.full((ncell, 4), -1, dtype=np.int64)
    sw = np.zeros((ncell, 2), dtype=np.int64)
    lev = np.zeros(ncell, dtype=np.int64)
    for i, c in enumerate(mesh.cells):
        if c.children is not None:
            children[i] = c.children
        sw[i] = mesh.vertex_int(c.vertex_ids[0])
        lev[i] = c.level

    # root cell indices follow the creation order NW, NE, SE, SW
    cur = np.where(
        yi >= UNIT,
        np.where(xi < UNIT, 0, 1),
        np.where(xi < UNIT, 3, 2),
    ).astype(np.int64)

    while True:
        kid0 = children[cur, 0]
        todo = kid0 >= 0
        if not todo.any():
            break
        half = (UNIT >> lev[cur[todo]]) >> 1
        dx = (xi[todo] - sw[cur[todo], 0]) >= half
        dy = (yi[todo] - sw[cur[todo], 1]) >= half
        quad = dx.astype(np.int64) + 2 * dy.astype(np.int64)
        cur[todo] = children[cur[todo], quad]
    return cur
