"""Equality-constrained filtering: estimate projection and gain restriction.

Weightings are given as ``"identity"``, ``"inv-cov"`` (the inverse of the
covariance being projected) or an explicit symmetric positive definite
matrix ``W``.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .errors import DegenerateInnovationError, DimensionError, RankError, SingularMatrixError
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
from .matops import SaddleSystem, kron, saddle_solve, unvec

RANK_TOL = 1e-10
DEGENERATE_NU = 1e-14


def _cov_factor(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``cov``, regularized when ``cov`` is singular."""
    cov = symmetrize(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        n = cov.shape[0]
        reg = 1e-12 * max(np.trace(cov), 1e-300) / n
        try:
            return np.linalg.cholesky(cov + reg * np.eye(n))
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError("covariance is not positive semidefinite", block="cov") from exc


def inverse_weight_factor(weighting, cov=None) -> np.ndarray | None:
    """A factor ``M`` with ``W^-1 = M M'``; ``None`` stands for the identity."""
    if isinstance(weighting, str):
        if weighting == "identity":
            return None
        if weighting == "inv-cov":
            if cov is None:
                raise ValueError("inv-cov weighting needs a covariance")
            return _cov_factor(np.asarray(cov, dtype=float))
        raise ValueError(f"unknown weighting {weighting!r}")
    w = np.asarray(weighting, dtype=float)
    if np.max(np.abs(w - w.T)) > 1e-10 * max(np.max(np.abs(w)), 1.0):
        raise ValueError("weighting matrix must be symmetric")
    try:
        low = np.linalg.cholesky(w)
    except np.linalg.LinAlgError as exc:
        raise ValueError("weighting matrix must be positive definite") from exc
    return sla.solve_triangular(low, np.eye(w.shape[0]), lower=True).T


def weight_matrix(weighting, cov=None) -> np.ndarray:
    """Explicit ``W`` for the given weighting (needed as a QP objective)."""
    if isinstance(weighting, str):
        if weighting == "identity":
            return np.eye(np.asarray(cov).shape[0]) if cov is not None else None
        if weighting == "inv-cov":
            low = _cov_factor(np.asarray(cov, dtype=float))
            return symmetrize(sla.cho_solve((low, True), np.eye(low.shape[0])))
        raise ValueError(f"unknown weighting {weighting!r}")
    return np.asarray(weighting, dtype=float)


def upsilon_from_factor(a, factor: np.ndarray | None) -> np.ndarray:
    """``W^-1 A' (A W^-1 A')^-1`` with ``W^-1 = M M'``.

    With ``G = M' A'`` and the thin QR ``G = Q R`` this equals ``M Q R^-T``,
    so ``A W^-1 A'`` is never formed or inverted.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    g = a.T if factor is None else factor.T @ a.T
    qmat, rmat = np.linalg.qr(g)
    diag = np.abs(np.diag(rmat))
    if diag.size and (diag.max() == 0.0 or diag.min() <= RANK_TOL * diag.max()):
        raise RankError("A W^-1 A' is singular (constraints not of full row rank)", block="upsilon")
    core = sla.solve_triangular(rmat, qmat.T, lower=False).T
    return core if factor is None else factor @ core


def upsilon(a, w=None) -> np.ndarray:
    """``W^-1 A' (A W^-1 A')^-1``; ``w=None`` means ``W = I``."""
    factor = None if w is None else inverse_weight_factor(w)
    return upsilon_from_factor(a, factor)


def project_covariance(cov, a, ups) -> np.ndarray:
    """Full bilinear form ``(I - U A) P (I - U A)'``."""
    proj = np.eye(cov.shape[0]) - ups @ a
    return symmetrize(proj @ cov @ proj.T)


def project_estimate(state: GaussianState, a, b, weighting="identity") -> GaussianState:
    """Nearest point (in the ``W`` norm) on ``A x = b`` and its covariance."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.size == 0:
        return state
    if a.shape[1] != state.dim or b.size != a.shape[0]:
        raise DimensionError("constraint does not conform to state")
    ups = upsilon_from_factor(a, inverse_weight_factor(weighting, state.cov))
    mean = state.mean - ups @ (a @ state.mean - b)
    return GaussianState(mean, project_covariance(state.cov, a, ups))


def restricted_gain(
    pred: GaussianState,
    model: LinearModelStep,
    innov: Innovation,
    a,
    b,
    solver: str = "analytic",
) -> np.ndarray:
    """Gain closest to optimal (in updated-covariance trace) that lands on ``A x = b``.

    ``solver="analytic"`` evaluates the closed form
    ``K - A'(AA')^-1 (A x_upd - b) (nu' S^-1 nu)^-1 nu' S^-1``;
    ``solver="saddle"`` solves the KKT system in ``vec(K - K_opt)`` directly.
    """
    gain = optimal_gain(pred.cov, model, innov)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.size == 0:
        return gain
    nu = innov.residual
    x_upd = pred.mean + gain @ nu
    miss = a @ x_upd - b
    if not np.any(miss):
        return gain
    wnorm = whitened_residual_norm(innov)
    if wnorm < DEGENERATE_NU and np.max(np.abs(miss)) > 1e-9 * (1.0 + np.max(np.abs(b))):
        raise DegenerateInnovationError(
            f"nu' S^-1 nu = {wnorm:.3e} while the update misses the constraint"
        )
    n, m = gain.shape
    if solver == "analytic":
        s_inv_nu = sla.cho_solve(sla.cho_factor(innov.residual_cov, lower=True), nu)
        return gain - np.outer(upsilon_from_factor(a, None) @ miss, s_inv_nu) / wnorm
    if solver == "saddle":
        system = SaddleSystem(
            2.0 * kron(innov.residual_cov, np.eye(n)),
            kron(nu[None, :], a),
            np.zeros((a.shape[0], a.shape[0])),
            np.zeros(n * m),
            -miss,
        )
        l, _ = saddle_solve(system)
        return gain + unvec(l, n, m)
    raise ValueError(f"unknown solver {solver!r}")


def eq_constrained_update(
    pred: GaussianState,
    model: LinearModelStep,
    innov: Innovation,
    a,
    b,
    method: str = "project",
    weighting="identity",
    cov_weighting="identity",
) -> GaussianState:
    """Measurement update followed by the chosen equality-constraint method.

    ``weighting`` is the projection weight; ``cov_weighting`` is the weight
    used to project the covariance produced by the restricted gain.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if method == "project":
        upd = update(pred, optimal_gain(pred.cov, model, innov), innov, model)
        return project_estimate(upd, a, b, weighting)
    if method == "restrict-gain":
        gain = restricted_gain(pred, model, innov, a, b)
        upd = update(pred, gain, innov, model)
        if a.size == 0:
            return upd
        ups = upsilon_from_factor(a, inverse_weight_factor(cov_weighting, upd.cov))
        return GaussianState(upd.mean, project_covariance(upd.cov, a, ups))
    raise ValueError(f"unknown method {method!r}")


def eq_constrained_step(
    state: GaussianState,
    model: LinearModelStep,
    z,
    a,
    b,
    method: str = "project",
    weighting="identity",
    cov_weighting="identity",
) -> GaussianState:
    pred = predict(state, model)
    innov = innovate(pred, model, z)
    return eq_constrained_update(pred, model, innov, a, b, method, weighting, cov_weighting)
