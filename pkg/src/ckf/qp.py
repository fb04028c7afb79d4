"""Dense convex quadratic programming by a primal active-set method.

Problems have the form::

    minimize    1/2 x' Q x + c' x
    subject to  A x  = b
                C x <= d

Multipliers follow the convention ``Q x + c + A' mu + C' lam = 0`` with
``lam >= 0`` at an optimum. Every equality-constrained subproblem is solved
through its KKT saddle-point system with :func:`ckf.matops.saddle_solve`.

The iteration starts from a feasible point with an empty working set. Each
pass solves the equality-constrained problem for the current working set
and walks from the previous iterate toward that solution until the first
inequality blocks the way; the blocking row joins the working set. When the
step vanishes the multipliers are inspected and the most negative one (lowest
row index on ties) is released. Since the problem is convex, the objective
never increases along the way.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CyclingError, DimensionError, SingularMatrixError
from .matops import SaddleSystem, saddle_solve

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
INFEASIBLE = "infeasible"


def _rows(mat, s):
    if mat is None:
        return np.zeros((0, s))
    mat = np.asarray(mat, dtype=float)
    if mat.size == 0:
        return np.zeros((0, s))
    mat = np.atleast_2d(mat)
    if mat.shape[1] != s:
        raise DimensionError(f"constraint matrix has {mat.shape[1]} columns, expected {s}")
    return mat


def _vec(v, size):
    v = np.zeros(0) if v is None else np.asarray(v, dtype=float).ravel()
    if v.size != size:
        raise DimensionError(f"right-hand side has length {v.size}, expected {size}")
    return v


@dataclass(frozen=True)
class QpProblem:
    quad: np.ndarray
    lin: np.ndarray
    eq_mat: np.ndarray = None
    eq_rhs: np.ndarray = None
    ineq_mat: np.ndarray = None
    ineq_rhs: np.ndarray = None

    def __post_init__(self):
        quad = np.atleast_2d(np.asarray(self.quad, dtype=float))
        s = quad.shape[0]
        if quad.shape != (s, s):
            raise DimensionError("quad must be square")
        scale = max(np.max(np.abs(quad)), 1.0)
        if np.max(np.abs(quad - quad.T)) > 1e-10 * scale:
            raise ValueError("quad must be symmetric")
        quad = 0.5 * (quad + quad.T)
        if s and np.linalg.eigvalsh(quad).min() < -1e-10 * scale:
            raise ValueError("quad must be positive semidefinite")
        a = _rows(self.eq_mat, s)
        c = _rows(self.ineq_mat, s)
        object.__setattr__(self, "quad", quad)
        object.__setattr__(self, "lin", _vec(self.lin, s))
        object.__setattr__(self, "eq_mat", a)
        object.__setattr__(self, "eq_rhs", _vec(self.eq_rhs, a.shape[0]))
        object.__setattr__(self, "ineq_mat", c)
        object.__setattr__(self, "ineq_rhs", _vec(self.ineq_rhs, c.shape[0]))

    @property
    def size(self) -> int:
        return self.quad.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.quad @ x + self.lin @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    active_set: tuple
    multipliers_eq: np.ndarray
    multipliers_ineq: np.ndarray
    status: str
    iterations: int = 0
    iterates: list = field(default_factory=list)
    objectives: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def last_step(self) -> np.ndarray:
        """Difference between the last two iterates (zero if there is only one)."""
        if len(self.iterates) < 2:
            return np.zeros_like(self.x)
        return self.iterates[-1] - self.iterates[-2]


def solve_eq_qp(quad, lin, eq_mat=None, eq_rhs=None) -> tuple[np.ndarray, np.ndarray]:
    """Minimize ``1/2 x'Qx + c'x`` subject to ``A x = b`` via the KKT system.

    When ``Q`` itself is singular but positive definite on the null space of
    ``A``, the equivalent system with ``Q + rho A'A`` in the leading block is
    solved instead; its solution is the same.
    """
    quad = np.atleast_2d(np.asarray(quad, dtype=float))
    s = quad.shape[0]
    lin = _vec(lin, s)
    a = _rows(eq_mat, s)
    b = _vec(eq_rhs, a.shape[0])
    system = SaddleSystem(quad, a, np.zeros((a.shape[0], a.shape[0])), -lin, b)
    try:
        return saddle_solve(system)
    except SingularMatrixError as exc:
        if exc.block != "a_block" or a.shape[0] == 0:
            raise
    rho = max(np.linalg.norm(quad, 1), 1.0) / max(np.linalg.norm(a, 1) ** 2, 1e-300)
    system = SaddleSystem(
        quad + rho * a.T @ a, a, np.zeros((a.shape[0], a.shape[0])), -lin + rho * a.T @ b, b
    )
    try:
        return saddle_solve(system)
    except SingularMatrixError as exc:
        raise SingularMatrixError("KKT system is singular", block="kkt") from exc


def max_step(x_prev, s_dir, ineq_mat, ineq_rhs, candidates=None) -> tuple[float, int | None]:
    """Largest ``tau`` in ``[0, 1]`` keeping ``x_prev + tau * s_dir`` feasible.

    Only rows listed in ``candidates`` (all rows by default) are checked.
    Returns ``(1.0, None)`` when the full step is feasible, otherwise the
    ratio and the lowest-index row that blocks first.
    """
    x_prev = np.asarray(x_prev, dtype=float).ravel()
    s_dir = np.asarray(s_dir, dtype=float).ravel()
    c = _rows(ineq_mat, x_prev.size)
    d = _vec(ineq_rhs, c.shape[0])
    if candidates is None:
        candidates = range(c.shape[0])
    snorm = np.linalg.norm(s_dir)
    tau, blocking = 1.0, None
    for i in sorted(candidates):
        rate = c[i] @ s_dir
        if rate <= 1e-12 * np.linalg.norm(c[i]) * snorm:
            continue
        ratio = max(d[i] - c[i] @ x_prev, 0.0) / rate
        if ratio < tau:
            tau, blocking = ratio, i
    return tau, blocking


def _null_projector(a: np.ndarray) -> np.ndarray:
    s = a.shape[1]
    if a.shape[0] == 0:
        return np.eye(s)
    q, _ = np.linalg.qr(a.T)
    return np.eye(s) - q @ q.T


def _onto_equalities(x, a, b):
    if a.shape[0] == 0:
        return x
    corr, *_ = np.linalg.lstsq(a, a @ x - b, rcond=None)
    return x - corr


def _eq_violation(qp: QpProblem, x) -> float:
    if qp.eq_mat.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(qp.eq_mat @ x - qp.eq_rhs)))


def _ineq_violation(qp: QpProblem, x) -> float:
    if qp.ineq_mat.shape[0] == 0:
        return 0.0
    return max(0.0, float(np.max(qp.ineq_mat @ x - qp.ineq_rhs)))


def _violation(qp: QpProblem, x) -> float:
    return max(_eq_violation(qp, x), _ineq_violation(qp, x))


def restore_feasibility(qp: QpProblem, x0, tol: float = 1e-9, sweeps: int = 100):
    """Move ``x0`` onto the feasible set. Returns ``(x, ok)``.

    ``x0`` is first projected onto ``A x = b``. Violated inequality rows are
    then satisfied one at a time, cyclically, by steps inside the null space
    of ``A`` (so the equalities stay exact), for up to ``sweeps`` passes.
    If that does not reach an exactly feasible point, a phase-one problem
    with one slack variable is solved instead (see :func:`_phase_one`).
    """
    a, b, c, d = qp.eq_mat, qp.eq_rhs, qp.ineq_mat, qp.ineq_rhs
    x = _onto_equalities(np.asarray(x0, dtype=float).ravel().copy(), a, b)
    if _eq_violation(qp, x) > tol:
        return x, False
    if c.shape[0] == 0:
        return x, True
    tight = 1e-15 * (1.0 + float(np.max(np.abs(d))))
    proj = _null_projector(a)
    dirs = c @ proj
    for _ in range(sweeps):
        if _ineq_violation(qp, x) <= tight:
            return x, True
        for i in range(c.shape[0]):
            r = c[i] @ x - d[i]
            if r <= 0.0:
                continue
            denom = dirs[i] @ c[i]
            if denom <= 1e-14 * (c[i] @ c[i]):
                continue
            x = x - (r / denom) * dirs[i]
    if _ineq_violation(qp, x) <= tight:
        return x, True
    return _phase_one(qp, x, tol)


def _phase_one(qp: QpProblem, x_c: np.ndarray, tol: float):
    """Exact-penalty feasibility problem over ``(x, t)``::

        minimize    eps/2 |x - x_c|^2 + t^2/2 + t
        subject to  A x = b,  C x - t <= d,  t >= 0

    ``(x_c, max violation)`` is feasible for it, so the active-set method
    applies directly. Once ``eps`` is small enough the penalty is exact and
    the solution has ``t = 0`` with ``x`` feasible for the original set.
    """
    s = qp.size
    c, d = qp.ineq_mat, qp.ineq_rhs
    p = c.shape[0]
    t0 = max(0.0, float(np.max(c @ x_c - d)))
    t0 = t0 * (1.0 + 1e-9) + 1e-12
    eq_aug = np.hstack([qp.eq_mat, np.zeros((qp.eq_mat.shape[0], 1))])
    ineq_aug = np.vstack(
        [np.hstack([c, -np.ones((p, 1))]), np.concatenate([np.zeros(s), [-1.0]])[None, :]]
    )
    rhs_aug = np.concatenate([d, [0.0]])
    best = x_c
    for eps in (1e-2, 1e-5, 1e-8):
        quad = np.diag(np.concatenate([np.full(s, eps), [1.0]]))
        lin = np.concatenate([-eps * x_c, [1.0]])
        aug = QpProblem(quad, lin, eq_aug, qp.eq_rhs, ineq_aug, rhs_aug)
        sol = solve(aug, np.concatenate([x_c, [t0]]), tol=tol, max_iter=100 + 2 * (s + p))
        best = sol.x[:s]
        if sol.converged and p in sol.active_set:
            break
    return best, _violation(qp, best) <= tol


def solve(qp: QpProblem, x0=None, tol: float = 1e-9, max_iter: int = 100) -> QpSolution:
    """Primal active-set solve of ``qp`` starting from ``x0``.

    An infeasible ``x0`` (default: the origin) is first repaired by
    :func:`restore_feasibility`; if that fails the returned status is
    ``"infeasible"``. Hitting ``max_iter`` returns the current iterate with
    status ``"max_iterations"``.
    """
    s = qp.size
    q, p = qp.eq_mat.shape[0], qp.ineq_mat.shape[0]
    x0 = np.zeros(s) if x0 is None else np.asarray(x0, dtype=float).ravel()
    if x0.size != s:
        raise DimensionError(f"x0 has length {x0.size}, expected {s}")
    x, ok = restore_feasibility(qp, x0, tol=tol)
    if not ok:
        return QpSolution(x, (), np.zeros(q), np.zeros(p), INFEASIBLE, 0, [x.copy()])

    working: list[int] = []
    iterates = [x.copy()]
    objectives = [qp.objective(x)]
    zero_run = 0
    mult = np.zeros(q)
    for it in range(1, max_iter + 1):
        rows = np.vstack([qp.eq_mat, qp.ineq_mat[working]]) if working else qp.eq_mat
        rhs = np.concatenate([qp.eq_rhs, qp.ineq_rhs[working]])
        x_eq, mult = solve_eq_qp(qp.quad, qp.lin, rows, rhs)
        step = x_eq - x
        if np.linalg.norm(step) <= tol * (1.0 + np.linalg.norm(x)):
            lam_w = mult[q:]
            slack = tol * max(1.0, float(np.max(np.abs(mult)))) if mult.size else tol
            if not working or lam_w.min() >= -slack:
                lam = np.zeros(p)
                lam[working] = lam_w
                x = x_eq
                iterates.append(x.copy())
                objectives.append(qp.objective(x))
                return QpSolution(
                    x,
                    tuple(sorted(working)),
                    mult[:q],
                    lam,
                    CONVERGED,
                    it,
                    iterates,
                    objectives,
                )
            # most negative multiplier leaves; argmin picks the lowest row on ties
            neg = np.flatnonzero(lam_w == lam_w.min())
            drop = min(working[j] for j in neg)
            working.remove(drop)
            continue
        others = [i for i in range(p) if i not in working]
        tau, block = max_step(x, step, qp.ineq_mat, qp.ineq_rhs, others)
        x = x + tau * step
        iterates.append(x.copy())
        objectives.append(qp.objective(x))
        if block is not None:
            working.append(block)
        if tau * np.linalg.norm(step) <= tol * (1.0 + np.linalg.norm(x)):
            zero_run += 1
            if zero_run > s + p:
                raise CyclingError(f"{zero_run} consecutive zero-length steps")
        else:
            zero_run = 0
    lam = np.zeros(p)
    if working and mult.size == q + len(working):
        lam[working] = mult[q:]
    return QpSolution(
        x, tuple(sorted(working)), mult[:q], lam, MAX_ITERATIONS, max_iter, iterates, objectives
    )
