import numpy as np
import pytest

from checkerfem.mesh import Subdomain, UNIT, initial_mesh, locate, refine


def area_of(mesh):
    total = 0
    for i in mesh.active_cells:
        total += (UNIT >> mesh.cells[i].level) ** 2
    return total / UNIT**2


def test_initial_mesh_counts(square4):
    assert square4.n_active == 4
    assert square4.n_vertices == 9
    assert len(square4.hanging_edges) == 0


def test_initial_mesh_subdomains(square4):
    ci = locate(square4, (-0.5, 0.5))
    assert square4.cells[ci].subdomain == Subdomain.NW
    assert square4.cells[locate(square4, (0.5, 0.5))].subdomain == Subdomain.NE
    assert square4.cells[locate(square4, (0.5, -0.5))].subdomain == Subdomain.SE
    assert square4.cells[locate(square4, (-0.5, -0.5))].subdomain == Subdomain.SW


def test_initial_mesh_area(square4):
    assert area_of(square4) == 4.0


def test_refine_single_cell_hanging(square4):
    out = refine(square4, {1})  # the NE root
    assert out.n_active == 7
    hanging = {
        tuple(out.vertex_coords[mid]): {
            tuple(out.vertex_coords[a]),
            tuple(out.vertex_coords[b]),
        }
        for mid, (a, b) in out.hanging_edges.items()
    }
    assert hanging == {
        (0.0, 0.5): {(0.0, 0.0), (0.0, 1.0)},
        (0.5, 0.0): {(0.0, 0.0), (1.0, 0.0)},
    }
    out.check_invariants()
    # children inherit the subdomain tag
    for child in out.cells[1].children:
        assert out.cells[child].subdomain == Subdomain.NE


def test_uniform_refine_conforming(square4):
    out = refine(square4, {0, 1, 2, 3})
    assert out.n_active == 16
    assert len(out.hanging_edges) == 0
    assert area_of(out) == 4.0


def test_refine_empty_is_identity(square4):
    out = refine(square4, set())
    assert out.n_active == square4.n_active
    assert out.n_vertices == square4.n_vertices


def test_refine_leaves_input_untouched(square4):
    refine(square4, {0, 1, 2, 3})
    assert square4.n_active == 4
    assert square4.cells[0].active


def test_refine_rejects_bad_flags(square4):
    with pytest.raises(ValueError):
        refine(square4, {99})
    once = refine(square4, {1})
    with pytest.raises(ValueError):
        refine(once, {1})  # now inactive


def test_refine_closure_keeps_one_irregularity(square4):
    mesh = square4
    # keep splitting the cell nearest the origin in the NE quadrant
    for _ in range(6):
        target = locate(mesh, (1e-9, 1e-9))
        if mesh.cells[target].subdomain != Subdomain.NE:
            target = min(
                i
                for i in mesh.active_cells
                if mesh.cells[i].subdomain == Subdomain.NE
            )
        mesh = refine(mesh, {target})
        mesh.check_invariants()
        assert area_of(mesh) == 4.0


def test_refine_idempotent_after_closure(square4):
    mesh = refine(square4, {1})
    flagged = {mesh.cells[1].children[0]}
    once = refine(mesh, flagged)
    twice = refine(once, set())
    boxes = lambda m: sorted(m.cell_box(i) for i in m.active_cells)
    assert boxes(once) == boxes(twice)


def test_refine_deterministic(square4):
    a = refine(square4, {0, 2})
    b = refine(square4, {2, 0})
    assert [a.cell_box(i) for i in a.active_cells] == [
        b.cell_box(i) for i in b.active_cells
    ]
    assert a._vx == b._vx and a._vy == b._vy


def test_locate_tie_break(square4):
    # (0, 0.5) sits on the NW/NE shared edge; the lower index wins
    assert locate(square4, (0.0, 0.5)) == 0
    assert locate(square4, (-0.5, -0.5)) == 3


def test_locate_on_refined_mesh(square4):
    out = refine(square4, {0, 1, 2, 3})
    ci = locate(out, (0.25, 0.25))
    x0, y0, side = out.cell_box(ci)
    assert (x0, y0, side) == (0.0, 0.0, 0.5)


def test_locate_lowest_index_among_all_candidates(square4):
    mesh = refine(square4, {0, 1, 2, 3})
    point = (0.5, 0.5)  # corner shared by four level-1 cells
    found = locate(mesh, point)
    candidates = [
        i
        for i in mesh.active_cells
        if (lambda b: b[0] <= point[0] <= b[0] + b[2] and b[1] <= point[1] <= b[1] + b[2])(
            mesh.cell_box(i)
        )
    ]
    assert found == min(candidates)


def test_locate_rejects_outside(square4):
    with pytest.raises(ValueError):
        locate(square4, (1.5, 0.0))
