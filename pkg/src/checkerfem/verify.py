"""Self-contained property suites behind the ``verify`` command.

Each suite checks one contract on small meshes and reports pass/fail; all
of them together run in well under a minute and need no reference values.
The residual accuracy suite compares the grouped assembly against a
deliberately independent oracle: a plain per-cell loop with order-10
quadrature and explicitly written integrands.
"""

from __future__ import annotations

import numpy as np

from . import adapt, dwr, goals, model, solver, spaces
from .mesh import Subdomain, initial_mesh, refine
from .spaces import DiscreteField, build_space, cell_quadrature, shape_matrix


def residual_oracle(
    u: DiscreteField, params: model.ModelParams, order: int = 10
) -> np.ndarray:
    """Residual assembled cell by cell, independent of the grouped path."""
    space = u.space
    mesh = space.mesh
    out = np.zeros(space.n_dofs)
    for row, ci in enumerate(mesh.active_cells):
        cell = mesh.cells[ci]
        rule = cell_quadrature(mesh, int(ci), order)
        x0, y0, side = mesh.cell_box(int(ci))
        ref = (rule.points - [x0, y0]) / side
        shp, dshp = shape_matrix(space.degree, ref)
        dofs = space.cell_dofs[row]
        coeffs = u.coefficients[dofs]
        kind = params.kind(cell.subdomain)
        for q, (pt, w) in enumerate(zip(rule.points, rule.weights)):
            val = float(coeffs @ shp[:, q])
            grad = (coeffs @ dshp[:, q, :]) / side
            if params.laplace_only or kind == "laplace":
                flux = grad
                react = -params.f
            elif kind == "cubic":
                flux = grad
                react = val**3 - params.f
            elif kind == "power":
                p = model.diffusion_exponent(pt)
                s = float(grad @ grad) + params.epsilon**2
                flux = np.exp(0.5 * (p - 2.0) * np.log(s)) * grad
                react = -params.f
            else:  # rational
                flux = (0.1 + 1.0 / (1.0 + val * val)) * grad
                react = -params.f
            for n in range(space.ndl):
                gphi = dshp[n, q, :] / side
                out[dofs[n]] += w * (flux @ gphi + react * shp[n, q])
    return out


def _hanging_test_mesh():
    mesh = refine(initial_mesh(), {1})
    return refine(mesh, {mesh.cells[1].children[0]})


def suite_quadrature(params=None, newton=None):
    """Gauss rules integrate monomials exactly; weights scale with area."""
    for order in (1, 2, 3, 5, 7, 9):
        rule = spaces.reference_quadrature(order)
        for a in range(order + 1):
            for b in range(order + 1 - a):
                exact = 1.0 / ((a + 1) * (b + 1))
                got = float(
                    rule.weights @ (rule.points[:, 0] ** a * rule.points[:, 1] ** b)
                )
                if abs(got - exact) > 1e-14 * max(1.0, abs(exact)):
                    return False, f"order {order} misses x^{a} y^{b}"
    mesh = refine(initial_mesh(), {0, 1, 2, 3})
    mesh = refine(mesh, set(mesh.active_cells))
    rule = cell_quadrature(mesh, int(mesh.active_cells[0]), 5)
    if abs(rule.weights.sum() - 0.25**2) > 1e-15:
        return False, "mapped weights do not sum to the cell area"
    return True, "exact through order 9"


def suite_constraints(params=None, newton=None):
    """The constraint distribution is a projection on both spaces."""
    mesh = _hanging_test_mesh()
    rng = np.random.default_rng(7)
    for degree in (1, 2):
        space = build_space(mesh, degree)
        v = rng.standard_normal(space.n_dofs)
        once = space.distribute(v)
        twice = space.distribute(once)
        if np.abs(twice - once).max() > 1e-15 * (1 + np.abs(once).max()):
            return False, f"distribution not idempotent for degree {degree}"
        p2 = (space.proj @ space.proj - space.proj)
        if abs(p2).max() > 1e-15:
            return False, f"projection matrix not idempotent for degree {degree}"
    return True, "projection idempotent for Q1 and Q2"


def suite_jacobian_fd(params=None, newton=None):
    """Central differences match the Jacobian; assembly matches the oracle."""
    params = params or model.ModelParams()
    rng = np.random.default_rng(3)
    for mesh in (initial_mesh(), _hanging_test_mesh()):
        for degree in (1, 2):
            space = build_space(mesh, degree)
            for _ in range(10):
                u = space.distribute(rng.standard_normal(space.n_dofs))
                a = model.jacobian(DiscreteField(space, u), space, params)
                for _ in range(5):
                    w = space.distribute(rng.standard_normal(space.n_dofs))
                    h = 1e-6 * (1.0 + float(np.abs(u).max()))
                    rp = model.residual(DiscreteField(space, u + h * w), space, params)
                    rm = model.residual(DiscreteField(space, u - h * w), space, params)
                    fd = (rp - rm) / (2 * h)
                    jw = a @ w
                    free = space.free_mask
                    err = np.abs(fd[free] - jw[free]).max()
                    if err > 1e-5 * (1.0 + np.abs(jw[free]).max()):
                        return False, f"finite differences disagree ({err:.2e})"
    mesh = _hanging_test_mesh()
    space = build_space(mesh, 2)
    u = DiscreteField(space, space.distribute(rng.standard_normal(space.n_dofs)))
    fast = model.residual(u, space, params)
    slow = space.condense_vector(residual_oracle(u, params))
    scale = 1.0 + np.abs(slow).max()
    err = float(np.abs(fast - slow).max() / scale)
    if err > 1e-4:
        return False, f"assembly deviates from the order-10 oracle ({err:.2e})"
    return True, "finite differences and order-10 oracle agree"


def suite_step_identities(params=None, newton=None):
    """Ten adaptive steps: localisation sum, iteration budget, invariants."""
    params = params or model.ModelParams()
    newton = newton or solver.NewtonConfig()
    issues = []

    def on_step(state):
        rep = state.report
        pu_err = abs(rep.vertex_indicators.sum() - rep.eta_h)
        if pu_err > 1e-10 * (1.0 + abs(rep.eta_h)):
            issues.append(f"step {state.record.step}: localisation sum {pu_err:.2e}")
        if abs(rep.iteration_error) > 1e-10:
            issues.append(
                f"step {state.record.step}: iteration error {rep.iteration_error:.2e}"
            )
        for field in (state.u_h, state.u_h2, state.z_h, state.z_h2):
            drift = np.abs(
                field.space.distribute(field.coefficients) - field.coefficients
            ).max()
            if drift > 1e-12:
                issues.append(f"step {state.record.step}: constraint drift {drift:.2e}")

    adapt.run(
        adapt.AdaptConfig(max_dofs=10**9, max_steps=10),
        params,
        newton=newton,
        on_step=on_step,
    )
    if issues:
        return False, "; ".join(issues[:3])
    return True, "localisation sums, iteration budget and invariants hold"


def suite_linear_exactness(params=None, newton=None):
    """Plain-diffusion configuration: the primal estimate is exact."""
    base = params or model.ModelParams()
    lap = model.ModelParams(
        f=base.f, epsilon=base.epsilon, quad_orders=dict(base.quad_orders),
        laplace_only=True,
    )
    mesh = _hanging_test_mesh()
    q1, q2 = build_space(mesh, 1), build_space(mesh, 2)
    u1 = solver.newton_solve(q1, lap)
    u2 = solver.newton_solve(q2, lap)
    weights = goals.CombinedWeights(
        values=np.array([0.0, 0.0, 0.0, 1.0, 0.0]),
        coarse=np.zeros(5), enriched=np.zeros(5), mesh=mesh,
    )
    z1 = solver.adjoint_solve(q1, u1, goals.combined_derivative(weights, q1), lap)
    z2 = solver.adjoint_solve(q2, u2, goals.combined_derivative(weights, q2), lap)
    rep = dwr.estimate(u1, z1, u2, z2, weights, lap)
    gap = goals.evaluate_qoi(4, u2) - goals.evaluate_qoi(4, u1)
    err = abs(rep.eta_primal - gap) / abs(gap)
    if err > 1e-10:
        return False, f"primal estimate misses the enrichment gap ({err:.2e})"
    if abs(rep.eta_adjoint - rep.eta_primal) > 0.1 * abs(rep.eta_primal):
        return False, "adjoint part strays beyond 10% in the linear case"
    return True, f"primal part exact to {err:.1e}"


SUITES = (
    ("quadrature", suite_quadrature),
    ("constraints", suite_constraints),
    ("jacobian_fd", suite_jacobian_fd),
    ("step_identities", suite_step_identities),
    ("linear_exactness", suite_linear_exactness),
)


def run_all(params=None, newton=None):
    """Run every suite; returns a list of (name, passed, detail)."""
    results = []
    for name, fn in SUITES:
        try:
            ok, detail = fn(params, newton)
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append((name, ok, detail))
    return results
