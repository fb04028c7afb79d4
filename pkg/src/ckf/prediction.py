"""Constraining the state prediction.

Three strategies are offered:

* ``project-f``: replace the transition with ``(I - U A) F`` so predictions
  stay on ``A x = 0``; with ``affine=True`` the offset ``U b`` is added so
  the prediction lands on ``A x = b`` for any ``b``.
* ``project-x``: project the predicted state itself (equalities and
  inequalities) exactly as an updated estimate is projected.
* ``lookahead``: add the next step's constraints, pulled back through the
  transition, to the current update.
"""

from __future__ import annotations

import numpy as np

from .constraints import ConstraintSet
from .errors import DimensionError
from .equality import inverse_weight_factor, upsilon_from_factor
from .inequality import Diagnostics, FilterOptions, project_estimate_ineq
from .kalman import GaussianState, LinearModelStep, symmetrize

STRATEGIES = ("none", "project-f", "project-x", "lookahead")


def project_transition(f_mat, a, b=None, weighting="identity", cov=None) -> np.ndarray:
    """``(I - U A) F``. ``b`` is accepted for symmetry and not used."""
    f_mat = np.atleast_2d(np.asarray(f_mat, dtype=float))
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return f_mat.copy()
    a = np.atleast_2d(a)
    ups = upsilon_from_factor(a, inverse_weight_factor(weighting, cov))
    return (np.eye(f_mat.shape[0]) - ups @ a) @ f_mat


def affine_offset(a, b, weighting="identity", cov=None) -> np.ndarray:
    """``U b``, the shift that moves ``A x = 0`` onto ``A x = b``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    ups = upsilon_from_factor(a, inverse_weight_factor(weighting, cov))
    return ups @ np.atleast_1d(np.asarray(b, dtype=float))


def predict_projected_transition(
    state: GaussianState,
    model: LinearModelStep,
    a,
    b,
    weighting="identity",
    affine: bool = True,
    mean=None,
) -> GaussianState:
    """Prediction with the projected transition.

    ``mean`` overrides ``F x`` as the unprojected predicted mean, which lets
    a nonlinear transition ``f(x)`` be used with its Jacobian in ``model``.
    """
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        raw = model.f_mat @ state.mean if mean is None else np.asarray(mean, dtype=float)
        f = model.f_mat
        return GaussianState(raw, symmetrize(f @ state.cov @ f.T + model.q_cov))
    a = np.atleast_2d(a)
    ups = upsilon_from_factor(a, inverse_weight_factor(weighting, state.cov))
    proj = np.eye(state.dim) - ups @ a
    raw = model.f_mat @ state.mean if mean is None else np.asarray(mean, dtype=float)
    pred_mean = proj @ raw
    if affine:
        pred_mean = pred_mean + ups @ np.atleast_1d(np.asarray(b, dtype=float))
    f_p = proj @ model.f_mat
    return GaussianState(pred_mean, symmetrize(f_p @ state.cov @ f_p.T + model.q_cov))


def project_prediction(
    pred: GaussianState,
    cs: ConstraintSet,
    weighting="identity",
    opts: FilterOptions | None = None,
) -> tuple[GaussianState, Diagnostics]:
    """Project a predicted state onto the constraints (same code as an update)."""
    return project_estimate_ineq(pred, cs, weighting, opts)


def lookahead_constraints(cs_next: ConstraintSet, f_next, offset=None) -> ConstraintSet:
    """Constraints on ``x`` that make ``F x + offset`` satisfy ``cs_next``.

    ``offset`` is the constant part of a linearized transition
    ``f(x) ~ F x + (f(x0) - F x0)`` and defaults to zero.
    """
    f_next = np.atleast_2d(np.asarray(f_next, dtype=float))
    if f_next.shape != (cs_next.n, cs_next.n):
        raise DimensionError(f"transition shape {f_next.shape} does not match n={cs_next.n}")
    off = np.zeros(cs_next.n) if offset is None else np.asarray(offset, dtype=float).ravel()
    return ConstraintSet(
        cs_next.n,
        cs_next.eq_mat @ f_next,
        cs_next.eq_rhs - cs_next.eq_mat @ off,
        cs_next.ineq_mat @ f_next,
        cs_next.ineq_rhs - cs_next.ineq_mat @ off,
    )
