"""Newton solver for the primal problems and transposed-Jacobian adjoints.

Linear systems are solved by sparse LU factorisation up to
``DIRECT_LIMIT`` unknowns and by BiCGStab with a smoothed-aggregation
multigrid preconditioner above it (factor memory grows superlinearly in
2D, the multigrid hierarchy does not).  One setup serves both
orientations: the LU factors solve transposed systems natively, and the
nearly symmetric Jacobian lets the same hierarchy precondition transposed
Krylov runs.  Every solve is finished with iterative refinement until the
true residual satisfies ``|b - A x| <= 1e-12 (1 + |b|)``, so downstream
error estimates never see linear-solver noise.

Newton uses backtracking damping (halving, at most ten times), accepts
only steps that strictly decrease the residual max-norm, and keeps
reusing a factorisation while its steps still pay for themselves; the
same mechanism polishes the converged state toward machine precision at
the cost of triangular solves only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pyamg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import ModelParams, jacobian, residual
from .spaces import DiscreteField, FunctionSpace

logger = logging.getLogger(__name__)

#: Largest system handed to the sparse direct factorisation.
DIRECT_LIMIT = 200_000

_REFINE_ROUNDS = 4
_POLISH_TARGET = 1e-14
_POLISH_MAX = 3

#: Inner relative tolerance of the Newton step solves (inexact Newton);
#: the assembled nonlinear residual is what certifies convergence.
_INNER_RTOL = 1e-4
#: Krylov iterations after which a stale multigrid setup is rebuilt.
_STALE_REBUILD_ITS = 150


@dataclass
class NewtonConfig:
    """Stopping and damping parameters of the Newton iteration."""

    abs_tol: float = 1e-11
    max_iters: int = 30
    max_halvings: int = 10

    def __post_init__(self):
        if not (self.abs_tol <= 1e-10):
            raise ValueError("abs_tol must not exceed the 1e-10 iteration budget")


@dataclass
class LinearSolveStats:
    """Outcome of one linear solve."""

    method: str
    residual_norm: float
    iterations: int | None = None


class FactorizedOperator:
    """One-time setup (LU factors or multigrid hierarchy) plus solves.

    ``solve`` drives the true residual of ``against`` (defaulting to the
    setup matrix, transposed on request) below ``1e-12 (1 + |b|)``.
    Passing a nearby matrix as ``against`` turns the held setup into a
    preconditioner, which is how Newton leftovers are recycled for the
    adjoint systems.
    """

    def __init__(self, a: sp.spmatrix):
        self.a = a.tocsr()
        self.n = a.shape[0]
        self._at: sp.csr_matrix | None = None
        self.stats: LinearSolveStats | None = None
        if self.n <= DIRECT_LIMIT:
            self.method = "splu"
            self._lu = spla.splu(a.tocsc())
            self._m = None
        else:
            self.method = "amg"
            self._lu = None
            self._m = pyamg.smoothed_aggregation_solver(
                self.a, max_coarse=500
            ).aspreconditioner(cycle="V")

    def _transposed(self) -> sp.csr_matrix:
        if self._at is None:
            self._at = self.a.T.tocsr()
        return self._at

    def retarget(self, a_new: sp.spmatrix) -> None:
        """Point the operator at a nearby matrix, keeping the old setup.

        The held factors or hierarchy then act as a preconditioner for the
        new matrix; callers watch the solve statistics and build a fresh
        operator once the reused setup stops converging.
        """
        self.a = a_new.tocsr()
        self._at = None

    def solve(
        self,
        b: np.ndarray,
        transpose: bool = False,
        strict: bool = True,
        against: sp.csr_matrix | None = None,
        rtol: float | None = None,
    ) -> np.ndarray:
        """Solve ``K x = b`` with K = ``against`` or the held operator.

        With ``strict=False`` a stalled iteration returns the best iterate
        instead of raising; Newton uses this for intermediate steps, whose
        accuracy is governed by the nonlinear residual check anyway.  A
        loose ``rtol`` widens the target accordingly (inexact Newton).
        """
        k = against if against is not None else (
            self._transposed() if transpose else self.a
        )
        bnorm = float(np.linalg.norm(b))
        tol = 1e-12 * (1.0 + bnorm)
        if rtol is not None:
            tol = max(tol, rtol * bnorm)
        if bnorm == 0.0:
            self.stats = LinearSolveStats(self.method, 0.0, 0)
            return np.zeros_like(b)

        iters = 0
        if self._lu is not None:
            trans = "T" if transpose else "N"
            x = self._lu.solve(b, trans=trans)
            res = b - k @ x
            rnorm = float(np.linalg.norm(res))
            best_x, best_norm = x, rnorm
            rounds = 0
            while rnorm > tol and rounds < _REFINE_ROUNDS:
                x = x + self._lu.solve(res, trans=trans)
                res = b - k @ x
                rnorm = float(np.linalg.norm(res))
                if np.isfinite(rnorm) and rnorm < best_norm:
                    best_x, best_norm = x, rnorm
                rounds += 1
        else:
            def count(*_):
                nonlocal iters
                iters += 1

            x, _ = spla.bicgstab(
                k,
                b,
                M=self._m,
                rtol=(tol / bnorm if bnorm else 1e-13),
                atol=tol,
                maxiter=300,
                callback=count,
            )
            best_x = x
            best_norm = float(np.linalg.norm(b - k @ x))
            if not (np.isfinite(best_norm) and best_norm <= tol):
                x, _ = spla.gmres(
                    k,
                    b,
                    x0=best_x if np.all(np.isfinite(best_x)) else None,
                    M=self._m,
                    rtol=1e-14,
                    atol=0.0,
                    restart=150,
                    maxiter=6,
                    callback=count,
                    callback_type="pr_norm",
                )
                rnorm = float(np.linalg.norm(b - k @ x))
                if np.isfinite(rnorm) and rnorm < best_norm:
                    best_x, best_norm = x, rnorm

        if not np.isfinite(best_norm):
            raise RuntimeError(f"linear solve broke down ({self.method}, n={self.n})")
        if best_norm > tol:
            if strict:
                raise RuntimeError(
                    f"linear solve stalled at residual {best_norm:.3e} "
                    f"(tol {tol:.3e}, method {self.method}, n={self.n})"
                )
            logger.debug(
                "inexact linear solve: residual %.3e above tol %.3e (n=%d)",
                best_norm,
                tol,
                self.n,
            )
        self.stats = LinearSolveStats(self.method, best_norm, iters)
        return best_x


def _newton(
    space: FunctionSpace,
    params: ModelParams,
    u0: DiscreteField | None,
    cfg: NewtonConfig,
) -> tuple[DiscreteField, FactorizedOperator | None]:
    """Newton iteration returning the solution and the last factorisation.

    Steps reuse the current factorisation as long as each one cuts the
    residual max-norm by ``_REUSE_REDUCTION``; otherwise the Jacobian is
    refactored at the current state (counted toward ``cfg.max_iters``).
    After the tolerance is met, a few reused-factorisation polish steps
    push the residual toward machine precision so that residual pairings
    of the converged state carry no solver noise.
    """
    u = space.distribute(
        np.zeros(space.n_dofs) if u0 is None else np.asarray(u0.coefficients, float)
    )
    if not params.laplace_only and not u.any():
        # A zero state is doubly degenerate for the power-law form (its
        # stiffness is eps^(p-2): huge where p < 2, vanishing where p > 2),
        # so bootstrap with the plain-diffusion solution, whose O(1)
        # gradients put every coefficient on a sane scale.
        boot = ModelParams(
            f=params.f,
            epsilon=params.epsilon,
            quad_orders=dict(params.quad_orders),
            laplace_only=True,
        )
        u = _newton(space, boot, None, cfg)[0].coefficients

    def res_vec(coeffs):
        return residual(DiscreteField(space, coeffs), space, params)

    def line_search(u, r, res, du):
        """Damped update along du; None if no decrease found."""
        alpha = 1.0
        for _ in range(cfg.max_halvings + 1):
            u_try = u + alpha * du
            r_try = res_vec(u_try)
            res_try = float(np.abs(r_try).max())
            if res_try < res:
                return u_try, r_try, res_try
            alpha *= 0.5
        return None

    r = res_vec(u)
    res = float(np.abs(r).max())
    op: FactorizedOperator | None = None
    setup_stale = False
    iters = 0
    setups = 0
    while res > cfg.abs_tol:
        if iters >= cfg.max_iters:
            raise RuntimeError(
                f"Newton did not converge in {cfg.max_iters} iterations "
                f"(degree {space.degree}, {space.n_dofs} dofs, residual {res:.3e})"
            )
        a = jacobian(DiscreteField(space, u), space, params)
        if op is None:
            op = FactorizedOperator(a)
            setups += 1
            setup_stale = False
        else:
            op.retarget(a)

        def solve_here():
            return space.distribute(op.solve(-r, strict=False, rtol=_INNER_RTOL))

        du = solve_here()
        missed = op.stats.residual_norm > max(
            1e-12 * (1.0 + float(np.linalg.norm(r))),
            _INNER_RTOL * float(np.linalg.norm(r)),
        )
        if setup_stale and (
            missed
            or (op.stats.iterations or 0) > _STALE_REBUILD_ITS
        ):
            op = FactorizedOperator(a)
            setups += 1
            setup_stale = False
            du = solve_here()
        iters += 1
        step = line_search(u, r, res, du)
        if step is None and setup_stale:
            op = FactorizedOperator(a)
            setups += 1
            setup_stale = False
            step = line_search(u, r, res, solve_here())
        if step is None:
            raise RuntimeError(
                f"Newton line search failed at iteration {iters} "
                f"(residual {res:.3e}, degree {space.degree})"
            )
        u, r, res = step
        setup_stale = True

    polish = 0
    while op is not None and res > _POLISH_TARGET and polish < _POLISH_MAX:
        du = space.distribute(op.solve(-r, strict=False, rtol=_INNER_RTOL))
        step = line_search(u, r, res, du)
        if step is None:
            break
        u, r, res = step
        polish += 1

    logger.info(
        "newton: degree=%d dofs=%d iters=%d setups=%d polish=%d res=%.3e",
        space.degree,
        space.n_dofs,
        iters,
        setups,
        polish,
        res,
    )
    return DiscreteField(space, u), op


def newton_solve(
    space: FunctionSpace,
    params: ModelParams,
    u0: DiscreteField | None = None,
    cfg: NewtonConfig | None = None,
) -> DiscreteField:
    """Solve the discrete problem on ``space`` by damped Newton iteration.

    Starts from ``u0`` (zero if omitted), iterates until the condensed
    residual max-norm drops below ``cfg.abs_tol``, and aborts with
    diagnostics if the iteration budget or the line search fails.
    """
    return _newton(space, params, u0, cfg or NewtonConfig())[0]


def adjoint_solve(
    space: FunctionSpace,
    u: DiscreteField,
    rhs: np.ndarray,
    params: ModelParams,
    warm_op: FactorizedOperator | None = None,
) -> DiscreteField:
    """Solve the transposed-Jacobian system at ``u`` for a condensed rhs.

    ``warm_op`` may pass the setup left over from the Newton solve; it was
    taken near the converged state, so it usually drives the transposed
    system to the 1e-12 target without a second factorisation.  The
    returned field has its constrained entries rebuilt through the
    constraint distribution.
    """
    a = jacobian(u, space, params)
    b = np.asarray(rhs, dtype=float)
    z = None
    if warm_op is not None and warm_op.n == a.shape[0]:
        at = a.T.tocsr()
        z = warm_op.solve(b, transpose=True, strict=False, against=at)
        tol = 1e-12 * (1.0 + float(np.linalg.norm(b)))
        if warm_op.stats.residual_norm > tol:
            z = None  # stale setup; pay for a fresh one
        else:
            method, rnorm = warm_op.method + "-reused", warm_op.stats.residual_norm
    if z is None:
        op = FactorizedOperator(a)
        z = op.solve(b, transpose=True)
        method, rnorm = op.stats.method, op.stats.residual_norm
    logger.info(
        "adjoint: degree=%d dofs=%d method=%s res=%.3e",
        space.degree,
        space.n_dofs,
        method,
        rnorm,
    )
    return DiscreteField(space, space.distribute(z))


def iteration_error(u: DiscreteField, z: DiscreteField, params: ModelParams) -> float:
    """The pairing of the residual at u with z (zero at convergence).

    Positive sign convention: this is the value of the forms at u tested
    with z, so a converged primal solution makes it vanish up to the
    solver tolerance.
    """
    if u.space is not z.space:
        raise ValueError("fields live on different spaces")
    r = residual(u, u.space, params)
    return float(r @ z.coefficients)
