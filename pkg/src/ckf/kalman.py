"""Unconstrained Kalman and extended Kalman filter steps.

All operations are pure: they take a :class:`GaussianState` and return a
new one. Covariances are re-symmetrized after every arithmetic step and the
update always uses the Joseph form, which stays valid for the suboptimal
gains produced by the constrained filters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, EvaluationError, SingularMatrixError

Vector = np.ndarray
Matrix = np.ndarray


def symmetrize(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + m.T)


def covariance_ok(cov, sym_tol: float = 1e-10, psd_tol: float = 1e-10) -> bool:
    """Symmetric to ``sym_tol`` (relative) and PSD to ``-psd_tol * trace``."""
    cov = np.asarray(cov, dtype=float)
    scale = max(np.max(np.abs(cov)), 1e-300)
    if np.max(np.abs(cov - cov.T)) > sym_tol * scale:
        return False
    eig = np.linalg.eigvalsh(symmetrize(cov))
    return bool(eig.min() >= -psd_tol * max(np.trace(cov), 0.0))


@dataclass(frozen=True)
class GaussianState:
    """Filter state: mean vector and error covariance."""

    mean: Vector
    cov: Matrix

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise DimensionError(
                f"covariance shape {cov.shape} does not match mean length {mean.size}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class LinearModelStep:
    """Transition ``F``, process noise ``Q``, measurement ``H`` and noise ``R`` for one step."""

    f_mat: Matrix
    q_cov: Matrix
    h_mat: Matrix
    r_cov: Matrix

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.f_mat, dtype=float))
        n = f.shape[0]
        h = np.atleast_2d(np.asarray(self.h_mat, dtype=float))
        m = h.shape[0]
        q = np.atleast_2d(np.asarray(self.q_cov, dtype=float))
        r = np.atleast_2d(np.asarray(self.r_cov, dtype=float))
        if f.shape != (n, n) or q.shape != (n, n) or h.shape != (m, n) or r.shape != (m, m):
            raise DimensionError("model matrices do not conform")
        object.__setattr__(self, "f_mat", f)
        object.__setattr__(self, "h_mat", h)
        object.__setattr__(self, "q_cov", q)
        object.__setattr__(self, "r_cov", r)

    @property
    def n(self) -> int:
        return self.f_mat.shape[0]

    @property
    def m(self) -> int:
        return self.h_mat.shape[0]


@dataclass(frozen=True)
class NonlinearModel:
    """Nonlinear transition/measurement maps with optional analytic Jacobians.

    A Jacobian left as ``None`` is computed by central differences.
    """

    transition_fn: Callable[[Vector], Vector]
    measurement_fn: Callable[[Vector], Vector]
    q_cov: Matrix
    r_cov: Matrix
    transition_jacobian: Optional[Callable[[Vector], Matrix]] = None
    measurement_jacobian: Optional[Callable[[Vector], Matrix]] = None


@dataclass(frozen=True)
class Innovation:
    residual: Vector
    residual_cov: Matrix


def _check_conform(state: GaussianState, model: LinearModelStep):
    if state.dim != model.n:
        raise DimensionError(f"state dimension {state.dim} != model dimension {model.n}")


def predict(state: GaussianState, model: LinearModelStep) -> GaussianState:
    _check_conform(state, model)
    f = model.f_mat
    return GaussianState(f @ state.mean, symmetrize(f @ state.cov @ f.T + model.q_cov))


def innovate(pred: GaussianState, model: LinearModelStep, z) -> Innovation:
    """Residual ``z - H x`` and its covariance ``H P H' + R``."""
    _check_conform(pred, model)
    z = np.asarray(z, dtype=float).ravel()
    if z.size != model.m:
        raise DimensionError(f"measurement length {z.size} != {model.m}")
    h = model.h_mat
    return Innovation(z - h @ pred.mean, symmetrize(h @ pred.cov @ h.T + model.r_cov))


def _cho(s: np.ndarray, name: str = "residual_cov"):
    try:
        return sla.cho_factor(s, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"{name} is not positive definite", block=name) from exc


def optimal_gain(pred_cov, model: LinearModelStep, innov: Innovation) -> np.ndarray:
    """``K = P H' S^-1`` computed with a Cholesky solve on ``S``."""
    pred_cov = np.asarray(pred_cov, dtype=float)
    pht = pred_cov @ model.h_mat.T
    factor = _cho(innov.residual_cov)
    return sla.cho_solve(factor, pht.T).T


def whitened_residual_norm(innov: Innovation) -> float:
    """``nu' S^-1 nu``."""
    factor = _cho(innov.residual_cov)
    return float(innov.residual @ sla.cho_solve(factor, innov.residual))


def joseph_cov(pred_cov, gain, h_mat, r_cov) -> np.ndarray:
    """``(I - K H) P (I - K H)' + K R K'``."""
    gain = np.asarray(gain, dtype=float)
    ikh = np.eye(gain.shape[0]) - gain @ h_mat
    return symmetrize(ikh @ pred_cov @ ikh.T + gain @ r_cov @ gain.T)


def update(pred: GaussianState, gain, innov: Innovation, model: LinearModelStep) -> GaussianState:
    gain = np.asarray(gain, dtype=float).reshape(pred.dim, -1)
    if gain.shape[1] != innov.residual.size:
        raise DimensionError(f"gain shape {gain.shape} does not match residual")
    mean = pred.mean + gain @ innov.residual
    return GaussianState(mean, joseph_cov(pred.cov, gain, model.h_mat, model.r_cov))


def kalman_step(state: GaussianState, model: LinearModelStep, z) -> GaussianState:
    """One predict/innovate/gain/update cycle of the plain filter."""
    pred = predict(state, model)
    innov = innovate(pred, model, z)
    return update(pred, optimal_gain(pred.cov, model, innov), innov, model)


# -- linearization ---------------------------------------------------------


def numerical_jacobian(fn: Callable[[Vector], Vector], x) -> np.ndarray:
    """Central differences with step ``max(1e-7, 1e-7 |x_i|)`` per coordinate."""
    x = np.asarray(x, dtype=float).ravel()
    f0 = np.atleast_1d(np.asarray(fn(x), dtype=float))
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = max(1e-7, 1e-7 * abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fp = np.atleast_1d(np.asarray(fn(xp), dtype=float))
        fm = np.atleast_1d(np.asarray(fn(xm), dtype=float))
        jac[:, i] = (fp - fm) / (xp[i] - xm[i])
    return jac


def _jacobian(fn, jac_fn, x, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if jac_fn is None:
        jac = numerical_jacobian(fn, x)
    else:
        jac = np.atleast_2d(np.asarray(jac_fn(x), dtype=float))
    if not np.all(np.isfinite(jac)):
        raise EvaluationError(f"{what} Jacobian has non-finite entries at {x}")
    return jac


def linearize_transition(
    model: NonlinearModel, x_ref, mode: str = "at-point", x_pred=None
) -> np.ndarray:
    """Jacobian of the transition at ``x_ref``.

    In ``"midpoint"`` mode the Jacobian is taken at ``(x_ref + x_pred) / 2``;
    ``x_pred`` defaults to ``transition_fn(x_ref)``.
    """
    x_ref = np.asarray(x_ref, dtype=float).ravel()
    if mode == "midpoint":
        if x_pred is None:
            x_pred = model.transition_fn(x_ref)
        point = 0.5 * (x_ref + np.asarray(x_pred, dtype=float).ravel())
    elif mode == "at-point":
        point = x_ref
    else:
        raise ValueError(f"unknown linearization mode {mode!r}")
    return _jacobian(model.transition_fn, model.transition_jacobian, point, "transition")


def linearize_measurement(model: NonlinearModel, x_ref) -> np.ndarray:
    return _jacobian(model.measurement_fn, model.measurement_jacobian, x_ref, "measurement")


def ekf_predict(
    state: GaussianState, model: NonlinearModel, mode: str = "at-point"
) -> tuple[GaussianState, np.ndarray]:
    """Propagate the mean through ``f`` and the covariance through its Jacobian.

    Returns the prediction and the Jacobian used, so callers can reuse it.
    """
    mean = np.asarray(model.transition_fn(state.mean), dtype=float).ravel()
    if not np.all(np.isfinite(mean)):
        raise EvaluationError("transition produced non-finite state")
    f = linearize_transition(model, state.mean, mode=mode, x_pred=mean)
    cov = symmetrize(f @ state.cov @ f.T + np.asarray(model.q_cov, dtype=float))
    return GaussianState(mean, cov), f


def ekf_linear_step(
    model: NonlinearModel, f_mat: np.ndarray, pred: GaussianState
) -> LinearModelStep:
    """Linear surrogate of ``model`` for the update stage at ``pred``."""
    h = linearize_measurement(model, pred.mean)
    return LinearModelStep(f_mat, model.q_cov, h, model.r_cov)


def ekf_innovate(pred: GaussianState, model: NonlinearModel, step: LinearModelStep, z) -> Innovation:
    """Residual ``z - h(x)`` with covariance from the linearized ``H``."""
    z = np.asarray(z, dtype=float).ravel()
    zhat = np.asarray(model.measurement_fn(pred.mean), dtype=float).ravel()
    h = step.h_mat
    return Innovation(z - zhat, symmetrize(h @ pred.cov @ h.T + step.r_cov))
