"""Legacy-ASCII VTK output of meshes, fields and indicator maps.

Only the vertices referenced by active cells are written (quad cell type
9); subdomain tags and refinement levels always go out as CELL_DATA.
Scalar fields are attached as POINT_DATA: degree-1 fields by their vertex
coefficients, degree-2 fields sampled at the vertices.
"""

from __future__ import annotations

import numpy as np

from .mesh import AdaptiveMesh
from .spaces import DiscreteField


def _active_vertex_map(mesh: AdaptiveMesh):
    _, _, _, corners = mesh.active_arrays()
    used = np.unique(corners)
    remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return used, remap, corners


def vertex_values(field: DiscreteField) -> np.ndarray:
    """Field values at the mesh vertices, indexed by vertex id."""
    space = field.space
    mesh = space.mesh
    used, _, _ = _active_vertex_map(mesh)
    vx = np.asarray(mesh._vx, dtype=np.int64)[used]
    vy = np.asarray(mesh._vy, dtype=np.int64)[used]
    out = np.zeros(mesh.n_vertices)
    out[used] = field.coefficients[space.dof_index(vx, vy)]
    return out


def dof_values_to_vertices(space, values: np.ndarray) -> np.ndarray:
    """Per-vertex array from per-dof values of a degree-1 space."""
    return vertex_values(DiscreteField(space, np.asarray(values, dtype=float)))


def write_vtk(
    path,
    mesh: AdaptiveMesh,
    point_data: dict[str, np.ndarray] | None = None,
    cell_data: dict[str, np.ndarray] | None = None,
    title: str = "checkerfem output",
) -> None:
    """Write the active mesh as an unstructured grid with attached data.

    ``point_data`` arrays are indexed by mesh vertex id, ``cell_data``
    arrays by active-cell position.
    """
    used, remap, corners = _active_vertex_map(mesh)
    coords = mesh.vertex_coords[used]
    sw, levels, subs, _ = mesh.active_arrays()
    ncell = len(corners)

    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(used)} double",
    ]
    lines.extend(f"{x:.17g} {y:.17g} 0" for x, y in coords)
    lines.append(f"CELLS {ncell} {5 * ncell}")
    cells = remap[corners]
    lines.extend(
        f"4 {a} {b} {c} {d}" for a, b, c, d in cells
    )
    lines.append(f"CELL_TYPES {ncell}")
    lines.extend("9" for _ in range(ncell))

    lines.append(f"CELL_DATA {ncell}")
    lines.append("SCALARS subdomain int 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(str(int(s)) for s in subs)
    lines.append("SCALARS level int 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(str(int(l)) for l in levels)
    for name, values in (cell_data or {}).items():
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(f"{v:.17g}" for v in np.asarray(values, dtype=float))

    if point_data:
        lines.append(f"POINT_DATA {len(used)}")
        for name, values in point_data.items():
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            arr = np.asarray(values, dtype=float)[used]
            lines.extend(f"{v:.17g}" for v in arr)

    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
