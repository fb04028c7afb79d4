"""Inequality-constrained filtering by active-set projection and by QP gain restriction.

Both methods hand a dense QP to :mod:`ckf.qp`. The covariance is projected
with the *equality* rows only; active inequality rows still describe
inequalities and are left out of that projection. Optionally the outer
product of the last inner-iteration step (the "safety term") is added to
the covariance as a bound on the remaining convergence error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import qp as qpmod
from .constraints import ConstraintSet, is_feasible
from .equality import (
    DEGENERATE_NU,
    inverse_weight_factor,
    project_covariance,
    upsilon_from_factor,
    weight_matrix,
)
from .errors import DegenerateInnovationError, InfeasibleError
from .kalman import (
    GaussianState,
    Innovation,
    LinearModelStep,
    innovate,
    optimal_gain,
    predict,
    symmetrize,
    update,
    whitened_residual_norm,
)
from .matops import kron, unvec


@dataclass(frozen=True)
class FilterOptions:
    """Inner-loop settings shared by the inequality methods.

    ``tol`` is the step-size convergence threshold of the active-set loop and
    ``max_iter`` caps its working-set refreshes.
    """

    tol: float = 1e-10
    max_iter: int = 20
    safety_term: bool = True
    feas_tol: float = 1e-8


@dataclass
class Diagnostics:
    iterations: int = 0
    active_set: tuple = ()
    status: str = qpmod.CONVERGED
    safety_step: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objectives: list = field(default_factory=list)


def _safety(cov: np.ndarray, step: np.ndarray, opts: FilterOptions) -> np.ndarray:
    if not opts.safety_term or step.size == 0:
        return cov
    return symmetrize(cov + np.outer(step, step))


def _equality_projection(cov, cs: ConstraintSet, weighting, weight_cov) -> np.ndarray:
    if cs.n_eq == 0:
        return cov
    ups = upsilon_from_factor(cs.eq_mat, inverse_weight_factor(weighting, weight_cov))
    return project_covariance(cov, cs.eq_mat, ups)


def _diag_from(sol: qpmod.QpSolution, step: np.ndarray) -> Diagnostics:
    return Diagnostics(sol.iterations, sol.active_set, sol.status, step, list(sol.objectives))


def project_estimate_ineq(
    state: GaussianState,
    cs: ConstraintSet,
    weighting="identity",
    opts: FilterOptions | None = None,
) -> tuple[GaussianState, Diagnostics]:
    """Minimize ``(x - m)' W (x - m)`` over ``A x = b, C x <= d``.

    Raises :class:`InfeasibleError` when no feasible point exists.
    """
    opts = opts or FilterOptions()
    if cs.is_empty:
        return state, Diagnostics(safety_step=np.zeros(state.dim))
    w = weight_matrix(weighting, state.cov)
    problem = qpmod.QpProblem(
        2.0 * w, -2.0 * w @ state.mean, cs.eq_mat, cs.eq_rhs, cs.ineq_mat, cs.ineq_rhs
    )
    sol = qpmod.solve(problem, state.mean, tol=opts.tol, max_iter=opts.max_iter)
    if sol.status == qpmod.INFEASIBLE:
        raise InfeasibleError("constraint set has no feasible point")
    step = sol.last_step
    cov = _safety(state.cov, step, opts)
    cov = _equality_projection(cov, cs, weighting, state.cov)
    return GaussianState(sol.x, cov), _diag_from(sol, step)


def restricted_gain_ineq(
    pred: GaussianState,
    model: LinearModelStep,
    innov: Innovation,
    cs: ConstraintSet,
    opts: FilterOptions | None = None,
) -> tuple[np.ndarray, Diagnostics]:
    """Gain minimizing the updated-covariance trace subject to the update being feasible.

    The problem is posed in ``l = vec(K - K_opt)``: quadratic term
    ``2 (S kron I)``, equality rows ``nu' kron A`` and inequality rows
    ``nu' kron C``, with right-hand sides measured from the unconstrained
    update. ``l = 0`` is the unconstrained optimum.
    """
    opts = opts or FilterOptions()
    gain = optimal_gain(pred.cov, model, innov)
    n, m = gain.shape
    if cs.is_empty:
        return gain, Diagnostics(safety_step=np.zeros(n))
    nu = innov.residual
    x_upd = pred.mean + gain @ nu
    if whitened_residual_norm(innov) < DEGENERATE_NU and not is_feasible(x_upd, cs, opts.feas_tol):
        raise DegenerateInnovationError("innovation too small to reach the constraints")
    nu_row = nu[None, :]
    problem = qpmod.QpProblem(
        2.0 * kron(innov.residual_cov, np.eye(n)),
        np.zeros(n * m),
        kron(nu_row, cs.eq_mat) if cs.n_eq else None,
        cs.eq_rhs - cs.eq_mat @ x_upd,
        kron(nu_row, cs.ineq_mat) if cs.n_ineq else None,
        cs.ineq_rhs - cs.ineq_mat @ x_upd,
    )
    sol = qpmod.solve(problem, np.zeros(n * m), tol=opts.tol, max_iter=opts.max_iter)
    if sol.status == qpmod.INFEASIBLE:
        raise InfeasibleError("no gain makes the update feasible")
    step = unvec(sol.last_step, n, m) @ nu
    return gain + unvec(sol.x, n, m), _diag_from(sol, step)


def ineq_constrained_update(
    pred: GaussianState,
    model: LinearModelStep,
    innov: Innovation,
    cs: ConstraintSet,
    method: str = "project",
    weighting="identity",
    opts: FilterOptions | None = None,
    cov_weighting="identity",
) -> tuple[GaussianState, Diagnostics]:
    """Measurement update with ``method`` in ``{"unconstrained", "project", "restrict-gain"}``."""
    opts = opts or FilterOptions()
    if method == "unconstrained":
        upd = update(pred, optimal_gain(pred.cov, model, innov), innov, model)
        return upd, Diagnostics(safety_step=np.zeros(pred.dim))
    if method == "project":
        upd = update(pred, optimal_gain(pred.cov, model, innov), innov, model)
        return project_estimate_ineq(upd, cs, weighting, opts)
    if method == "restrict-gain":
        gain, diag = restricted_gain_ineq(pred, model, innov, cs, opts)
        upd = update(pred, gain, innov, model)
        cov = _safety(upd.cov, diag.safety_step, opts)
        cov = _equality_projection(cov, cs, cov_weighting, upd.cov)
        return GaussianState(upd.mean, cov), diag
    raise ValueError(f"unknown method {method!r}")


def ineq_constrained_step(
    state: GaussianState,
    model: LinearModelStep,
    z,
    cs: ConstraintSet,
    method: str = "project",
    weighting="identity",
    opts: FilterOptions | None = None,
    cov_weighting="identity",
) -> tuple[GaussianState, Diagnostics]:
    pred = predict(state, model)
    innov = innovate(pred, model, z)
    return ineq_constrained_update(pred, model, innov, cs, method, weighting, opts, cov_weighting)
