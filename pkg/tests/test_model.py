import numpy as np
import pytest

from checkerfem.mesh import Subdomain, UNIT, refine
from checkerfem.model import (
    ModelParams,
    _power_weights,
    diffusion_exponent,
    jacobian,
    jacobian_action_raw,
    residual,
)
from checkerfem.spaces import DiscreteField, build_space
from checkerfem.verify import residual_oracle

from conftest import conforming_field


def test_exponent_values():
    assert diffusion_exponent((-0.5, 0.5)) == 2.0
    assert diffusion_exponent((0.5, 0.5)) == 4.0
    assert diffusion_exponent((0.25, 0.75)) == 3.75
    assert diffusion_exponent((0.5, -0.5)) == 2.0


def test_exponent_rejections():
    with pytest.raises(ValueError):
        diffusion_exponent((0.0, 0.5))
    with pytest.raises(ValueError):
        diffusion_exponent((0.5, 0.0))
    with pytest.raises(ValueError):
        diffusion_exponent((1.5, 0.5))


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(epsilon=0.0)
    with pytest.raises(ValueError):
        ModelParams(f=float("inf"))
    with pytest.raises(ValueError):
        ModelParams(quad_orders={"bogus": 3})


def test_residual_at_zero(square4, params):
    space = build_space(square4, 1)
    r = residual(space.zero_field(), space, params)
    origin = space.dof_index(UNIT, UNIT)
    assert r[origin] == -10.0
    r[origin] = 0.0
    assert not r.any()


def test_residual_constrained_rows_zero(hanging_mesh, params, rng):
    space = build_space(hanging_mesh, 1)
    r = residual(conforming_field(space, rng), space, params)
    constrained = ~space.free_mask
    assert np.abs(r[constrained]).max() == 0.0


def test_residual_mesh_mismatch(square4, hanging_mesh, params):
    space_a = build_space(square4, 1)
    space_b = build_space(hanging_mesh, 1)
    with pytest.raises(ValueError):
        residual(space_a.zero_field(), space_b, params)


def test_residual_against_independent_oracle(square4, params):
    # single-hat state on the four-cell mesh, checked against per-cell
    # order-10 quadrature written independently of the grouped assembly
    space = build_space(square4, 1)
    coeffs = np.zeros(space.n_dofs)
    coeffs[space.dof_index(UNIT, UNIT)] = 0.1
    u = DiscreteField(space, coeffs)
    fast = residual(u, space, params)
    slow = space.condense_vector(residual_oracle(u, params))
    assert np.abs(fast - slow).max() < 1e-7 * (1.0 + np.abs(slow).max())


def test_residual_oracle_on_random_state(hanging_mesh, params, rng):
    space = build_space(hanging_mesh, 2)
    u = conforming_field(space, rng, scale=0.5)
    fast = residual(u, space, params)
    slow = space.condense_vector(residual_oracle(u, params))
    assert np.abs(fast - slow).max() < 1e-5 * (1.0 + np.abs(slow).max())


def test_jacobian_at_zero_is_weighted_stiffness(square4, params):
    space = build_space(square4, 1)
    a = jacobian(space.zero_field(), space, params).toarray()
    assert np.abs(a - a.T).max() < 1e-12
    lap = jacobian(
        space.zero_field(), space, ModelParams(laplace_only=True)
    ).toarray()
    origin = space.dof_index(UNIT, UNIT)
    # per-quadrant coefficients at zero state: cubic and laplace are 1,
    # rational is 1/10 + 1 = 1.1, the power-law weight eps^(p-2) is tiny;
    # each quadrant contributes 2/3 to the origin diagonal of the plain
    # stiffness.
    expected = (1.0 + 1.0 + 1.1) * (2.0 / 3.0)
    assert abs(a[origin, origin] - expected) < 1e-3
    assert abs(lap[origin, origin] - 4 * (2.0 / 3.0)) < 1e-12


def test_jacobian_matches_finite_differences(hanging_mesh, params, rng):
    for degree in (1, 2):
        space = build_space(hanging_mesh, degree)
        free = space.free_mask
        for _ in range(10):
            u = space.distribute(rng.standard_normal(space.n_dofs))
            a = jacobian(DiscreteField(space, u), space, params)
            for _ in range(5):
                w = space.distribute(rng.standard_normal(space.n_dofs))
                h = 1e-6 * (1.0 + float(np.abs(u).max()))
                rp = residual(DiscreteField(space, u + h * w), space, params)
                rm = residual(DiscreteField(space, u - h * w), space, params)
                fd = (rp - rm) / (2.0 * h)
                jw = a @ w
                err = np.abs(fd[free] - jw[free]).max()
                assert err <= 1e-5 * (1.0 + np.abs(jw[free]).max())


def test_jacobian_action_matches_matrix(hanging_mesh, params, rng):
    space = build_space(hanging_mesh, 2)
    u = space.distribute(rng.standard_normal(space.n_dofs))
    w = space.distribute(rng.standard_normal(space.n_dofs))
    a = jacobian(DiscreteField(space, u), space, params)
    act = space.condense_vector(jacobian_action_raw(u, w, space, params))
    free = space.free_mask
    assert np.abs(act[free] - (a @ w)[free]).max() < 1e-12 * (
        1.0 + np.abs(a @ w).max()
    )


def test_subdomain_additivity(hanging_mesh, params, rng):
    # assembling one quadrant at a time sums to the full residual
    from checkerfem.model import _eval_group, _flux_react, _groups, _scatter_functional

    space = build_space(hanging_mesh, 2)
    u = space.distribute(rng.standard_normal(space.n_dofs))
    full = np.zeros(space.n_dofs)
    for grp in _groups(space, params):
        part = np.zeros(space.n_dofs)
        vals, grads = _eval_group(grp, u)
        flux, react = _flux_react(space, grp, vals, grads, params)
        _scatter_functional(space, grp, flux, react, part)
        full += part
    from checkerfem.model import residual_raw

    assert np.abs(full - residual_raw(u, space, params)).max() <= 1e-13 * (
        1.0 + np.abs(full).max()
    )


def test_power_weight_stays_finite():
    grads = np.zeros((1, 3, 2))
    p = np.array([[1.05, 2.0, 9.0]])
    a, d = _power_weights(grads, p, 1e-10, with_derivative=True)
    assert np.all(np.isfinite(a)) and np.all(np.isfinite(d))
    assert a[0, 0] > 1.0  # p < 2: weight eps^(p-2) exceeds one
    assert 0.0 < a[0, 2] < 1.0  # p > 2: weight collapses but not to zero
    assert a[0, 2] > 0.0


def test_laplace_only_is_symmetric(hanging_mesh, rng):
    space = build_space(hanging_mesh, 2)
    u = space.distribute(rng.standard_normal(space.n_dofs))
    a = jacobian(DiscreteField(space, u), space, ModelParams(laplace_only=True))
    assert abs(a - a.T).max() < 1e-14
