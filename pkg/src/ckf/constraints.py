"""Linear constraint sets ``A x = b``, ``C x <= d`` and linearization of nonlinear ones."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionError, EvaluationError, RankError
from .kalman import numerical_jacobian

RANK_TOL = 1e-10
FEAS_TOL = 1e-8


def _as_rows(mat, n: int, name: str) -> np.ndarray:
    if mat is None:
        return np.zeros((0, n))
    mat = np.asarray(mat, dtype=float)
    if mat.size == 0:
        return np.zeros((0, n))
    mat = np.atleast_2d(mat)
    if mat.shape[1] != n:
        raise DimensionError(f"{name} has {mat.shape[1]} columns, state size is {n}")
    return mat


def _as_vec(v, size: int, name: str) -> np.ndarray:
    if v is None:
        v = np.zeros(0)
    v = np.asarray(v, dtype=float).ravel()
    if v.size != size:
        raise DimensionError(f"{name} has length {v.size}, expected {size}")
    return v


def row_rank(mat: np.ndarray, tol: float = RANK_TOL) -> int:
    if mat.shape[0] == 0:
        return 0
    s = np.linalg.svd(mat, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


@dataclass(frozen=True)
class ConstraintSet:
    """Equality rows ``eq_mat x = eq_rhs`` and inequality rows ``ineq_mat x <= ineq_rhs``.

    Either family may be empty. A rank-deficient ``eq_mat`` is rejected.
    """

    n: int
    eq_mat: np.ndarray = None
    eq_rhs: np.ndarray = None
    ineq_mat: np.ndarray = None
    ineq_rhs: np.ndarray = None

    def __post_init__(self):
        n = int(self.n)
        a = _as_rows(self.eq_mat, n, "eq_mat")
        b = _as_vec(self.eq_rhs, a.shape[0], "eq_rhs")
        c = _as_rows(self.ineq_mat, n, "ineq_mat")
        d = _as_vec(self.ineq_rhs, c.shape[0], "ineq_rhs")
        if row_rank(a) < a.shape[0]:
            raise RankError("equality constraint matrix lacks full row rank", block="eq_mat")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "eq_mat", a)
        object.__setattr__(self, "eq_rhs", b)
        object.__setattr__(self, "ineq_mat", c)
        object.__setattr__(self, "ineq_rhs", d)

    @classmethod
    def empty(cls, n: int) -> "ConstraintSet":
        return cls(n)

    @property
    def n_eq(self) -> int:
        return self.eq_mat.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.ineq_mat.shape[0]

    @property
    def is_empty(self) -> bool:
        return self.n_eq == 0 and self.n_ineq == 0

    def equality_only(self) -> "ConstraintSet":
        return ConstraintSet(self.n, self.eq_mat, self.eq_rhs)

    def combine(self, other: "ConstraintSet", tol: float = 1e-9) -> "ConstraintSet":
        """Stack two sets, dropping equality rows that duplicate earlier ones.

        A dependent equality row is kept out only when its right-hand side is
        consistent with the rows already present; otherwise the stacked system
        is inconsistent and :class:`RankError` is raised.
        """
        if other.n != self.n:
            raise DimensionError("cannot combine constraint sets of different size")
        rows = list(self.eq_mat)
        rhs = list(self.eq_rhs)
        for row, val in zip(other.eq_mat, other.eq_rhs):
            trial = np.vstack(rows + [row]) if rows else row[None, :]
            if row_rank(trial) == trial.shape[0]:
                rows.append(row)
                rhs.append(val)
                continue
            base = np.vstack(rows)
            coef, *_ = np.linalg.lstsq(base.T, row, rcond=None)
            if abs(coef @ np.asarray(rhs) - val) > tol * (1.0 + abs(val)):
                raise RankError("combined equality constraints are inconsistent", block="eq_mat")
        eq_mat = np.vstack(rows) if rows else None
        return ConstraintSet(
            self.n,
            eq_mat,
            np.asarray(rhs) if rows else None,
            np.vstack([self.ineq_mat, other.ineq_mat]),
            np.concatenate([self.ineq_rhs, other.ineq_rhs]),
        )


def violation(x, cs: ConstraintSet) -> float:
    """Largest violation: ``max(|A x - b|_inf, max(C x - d), 0)``."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != cs.n:
        raise DimensionError(f"state length {x.size} != constraint size {cs.n}")
    worst = 0.0
    if cs.n_eq:
        worst = max(worst, float(np.max(np.abs(cs.eq_mat @ x - cs.eq_rhs))))
    if cs.n_ineq:
        worst = max(worst, float(np.max(cs.ineq_mat @ x - cs.ineq_rhs)))
    return worst


def is_feasible(x, cs: ConstraintSet, tol: float = FEAS_TOL) -> bool:
    return violation(x, cs) <= tol


@dataclass(frozen=True)
class NonlinearConstraint:
    """``value_fn(x) <= rhs`` (``kind="inequality"``) or ``value_fn(x) = rhs``."""

    value_fn: Callable[[np.ndarray], np.ndarray]
    rhs: np.ndarray
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    kind: str = "inequality"

    def __post_init__(self):
        if self.kind not in ("inequality", "equality"):
            raise ValueError(f"kind must be 'inequality' or 'equality', got {self.kind!r}")
        object.__setattr__(self, "rhs", np.atleast_1d(np.asarray(self.rhs, dtype=float)))


def linearize_constraint(nc: NonlinearConstraint, x_ref) -> tuple[np.ndarray, np.ndarray]:
    """First-order model of ``nc`` about ``x_ref``.

    Returns ``(C, d)`` with ``C`` the Jacobian at ``x_ref`` and
    ``d = rhs + C x_ref - c(x_ref)``, so the linear row is tight exactly
    where the nonlinear one is.
    """
    x_ref = np.asarray(x_ref, dtype=float).ravel()
    val = np.atleast_1d(np.asarray(nc.value_fn(x_ref), dtype=float))
    if nc.jacobian is None:
        jac = numerical_jacobian(nc.value_fn, x_ref)
    else:
        jac = np.atleast_2d(np.asarray(nc.jacobian(x_ref), dtype=float))
    if not (np.all(np.isfinite(jac)) and np.all(np.isfinite(val))):
        raise EvaluationError(f"constraint or Jacobian is non-finite at {x_ref}")
    jac = jac.reshape(val.size, x_ref.size)
    return jac, nc.rhs + jac @ x_ref - val


def linearize_constraints(
    ncs: Sequence[NonlinearConstraint], x_ref, base: ConstraintSet | None = None
) -> ConstraintSet:
    """Linearize every constraint about ``x_ref`` and append them to ``base``."""
    x_ref = np.asarray(x_ref, dtype=float).ravel()
    cs = base if base is not None else ConstraintSet.empty(x_ref.size)
    for nc in ncs:
        mat, rhs = linearize_constraint(nc, x_ref)
        if nc.kind == "equality":
            extra = ConstraintSet(cs.n, mat, rhs)
        else:
            extra = ConstraintSet(cs.n, ineq_mat=mat, ineq_rhs=rhs)
        cs = cs.combine(extra)
    return cs


def relinearize_until_fixed(
    solve: Callable[[ConstraintSet], np.ndarray],
    ncs: Sequence[NonlinearConstraint],
    x_start,
    base: ConstraintSet | None = None,
    tol: float = 1e-8,
    max_iter: int = 10,
) -> tuple[np.ndarray, int]:
    """Iterated linearization: relinearize about each new estimate until it settles.

    ``solve`` maps a linear constraint set to a constrained estimate. Returns
    the final estimate and the number of solves performed.
    """
    x = np.asarray(x_start, dtype=float).ravel()
    for it in range(1, max_iter + 1):
        x_new = solve(linearize_constraints(ncs, x, base))
        if np.linalg.norm(x_new - x) <= tol:
            return x_new, it
        x = x_new
    return x, max_iter
