import numpy as np
import pytest

from checkerfem.mesh import UNIT, refine
from checkerfem.spaces import (
    DiscreteField,
    build_space,
    cell_quadrature,
    embed_q1_in_q2,
    evaluate,
    reference_quadrature,
    transfer,
)

from conftest import conforming_field, interpolant


def test_dof_counts_initial(square4):
    q1 = build_space(square4, 1)
    assert q1.n_dofs == 9
    assert q1.n_free == 1
    assert int(q1.dirichlet.sum()) == 8
    q2 = build_space(square4, 2)
    assert q2.n_dofs == 25
    assert q2.n_free == 9
    assert int(q2.dirichlet.sum()) == 16


def test_degree_rejected(square4):
    with pytest.raises(ValueError):
        build_space(square4, 3)


def test_q1_hanging_weights(square4):
    mesh = refine(square4, {1})
    space = build_space(mesh, 1)
    assert len(space.hanging) == 2
    for dof, masters in space.hanging.items():
        assert sorted(w for _, w in masters) == [0.5, 0.5]
        x, y = space.dof_coords[dof]
        mids = {(0.0, 0.5), (0.5, 0.0)}
        assert (x, y) in mids


def test_q2_hanging_weights(square4):
    mesh = refine(square4, {1})
    space = build_space(mesh, 2)
    # two hanging edges, two constrained quarter nodes each
    assert len(space.hanging) == 4
    for dof, masters in space.hanging.items():
        weights = sorted(w for _, w in masters)
        assert np.allclose(weights, [-0.125, 0.375, 0.75])
        # the shared midpoint node itself stays a real dof
        coords = space.dof_coords[dof]
        assert not any(np.allclose(coords, space.dof_coords[m]) for m, _ in masters)


def test_constraints_listed_for_dirichlet(square4):
    space = build_space(square4, 1)
    empty = [dof for dof in space.constraints.entries if not space.constraints.entries[dof]]
    assert len(empty) == 8


def test_evaluate_zero_and_reproduction(square4, rng):
    mesh = refine(square4, {0, 3})
    q1 = build_space(mesh, 1)
    assert evaluate(q1.zero_field(), (0.31, -0.7)) == 0.0
    lin = interpolant(q1, lambda x, y: x)
    assert abs(evaluate(lin, (0.3, -0.2)) - 0.3) < 1e-14
    q2 = build_space(mesh, 2)
    quad = interpolant(q2, lambda x, y: x * x)
    assert abs(evaluate(quad, (0.25, 0.75)) - 0.0625) < 1e-14


@pytest.mark.parametrize(
    "degree,monomials",
    [
        (1, [(0, 0), (1, 0), (0, 1), (1, 1)]),
        (2, [(a, b) for a in range(3) for b in range(3)]),
    ],
)
def test_polynomial_reproduction(hanging_mesh, rng, degree, monomials):
    space = build_space(hanging_mesh, degree)
    pts = rng.uniform(-1, 1, size=(40, 2))
    for a, b in monomials:
        fn = lambda x, y: x**a * y**b
        field = interpolant(space, fn)
        for x, y in pts:
            assert abs(evaluate(field, (x, y)) - fn(x, y)) < 1e-12


def test_partition_of_unity(hanging_mesh, rng):
    space = build_space(hanging_mesh, 1)
    ones = DiscreteField(space, np.ones(space.n_dofs))
    pts = rng.uniform(-1, 1, size=(100, 2))
    for x, y in pts:
        assert abs(evaluate(ones, (x, y)) - 1.0) < 1e-13


def test_projection_idempotent(hanging_mesh, rng):
    for degree in (1, 2):
        space = build_space(hanging_mesh, degree)
        v = rng.standard_normal(space.n_dofs)
        once = space.distribute(v)
        assert np.abs(space.distribute(once) - once).max() < 1e-15


def test_embed_exactness(hanging_mesh, rng):
    q1 = build_space(hanging_mesh, 1)
    q2 = build_space(hanging_mesh, 2)
    assert not embed_q1_in_q2(q1.zero_field(), q2).coefficients.any()
    field = interpolant(q1, lambda x, y: x * y)
    emb = embed_q1_in_q2(field, q2)
    pts = rng.uniform(-1, 1, size=(50, 2))
    for x, y in pts:
        assert abs(evaluate(emb, (x, y)) - evaluate(field, (x, y))) < 1e-13


def test_embed_constraint_consistency(hanging_mesh, rng):
    q1 = build_space(hanging_mesh, 1)
    q2 = build_space(hanging_mesh, 2)
    emb = embed_q1_in_q2(conforming_field(q1, rng), q2)
    drift = q2.distribute(emb.coefficients) - emb.coefficients
    assert np.abs(drift).max() < 1e-14


def test_embed_requires_same_mesh(square4, hanging_mesh):
    q1 = build_space(square4, 1)
    q2 = build_space(hanging_mesh, 2)
    with pytest.raises(ValueError):
        embed_q1_in_q2(q1.zero_field(), q2)


def test_cell_quadrature_midpoint(square4):
    rule = cell_quadrature(square4, 0, 1)
    assert rule.points.shape == (1, 2)
    assert np.allclose(rule.points[0], [-0.5, 0.5])  # centre of the NW cell
    assert np.allclose(rule.weights, [1.0])


def test_cell_quadrature_exactness(square4):
    rule = cell_quadrature(square4, 1, 3)  # NE unit cell: (0,1)^2
    assert rule.points.shape == (4, 2)
    assert abs(rule.weights.sum() - 1.0) < 1e-15
    got = float(rule.weights @ (rule.points[:, 0] * rule.points[:, 1]))
    assert abs(got - 0.25) < 1e-15  # integral of x*y over (0,1)^2


def test_cell_quadrature_area_scaling(square4):
    mesh = refine(square4, {0, 1, 2, 3})
    mesh = refine(mesh, set(mesh.active_cells))
    cell = int(mesh.active_cells[0])
    rule = cell_quadrature(mesh, cell, 5)
    assert rule.points.shape == (9, 2)
    assert abs(rule.weights.sum() - 1.0 / 16.0) < 1e-16


def test_quadrature_order_validation():
    with pytest.raises(ValueError):
        reference_quadrature(0)


def test_transfer_preserves_function(hanging_mesh, rng):
    q1 = build_space(hanging_mesh, 1)
    field = conforming_field(q1, rng)
    finer = refine(hanging_mesh, set(hanging_mesh.active_cells[:3]))
    moved = transfer(field, build_space(finer, 1))
    pts = rng.uniform(-1, 1, size=(30, 2))
    for x, y in pts:
        assert abs(evaluate(moved, (x, y)) - evaluate(field, (x, y))) < 1e-13


def test_interface_values_agree_between_cells(hanging_mesh, rng):
    # continuity makes the locate tie-break irrelevant for evaluation
    space = build_space(hanging_mesh, 2)
    field = conforming_field(space, rng)
    for y in (0.125, 0.375, 0.8):
        left = evaluate(field, (-1e-13, y))
        right = evaluate(field, (1e-13, y))
        at = evaluate(field, (0.0, y))
        assert abs(left - at) < 1e-10 and abs(right - at) < 1e-10
