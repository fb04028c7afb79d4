"""Shared random-instance generators and independent oracles."""

import itertools

import numpy as np
import pytest

from ckf.kalman import GaussianState, LinearModelStep, innovate


def rand_spd(rng, n, floor=0.1):
    m = rng.normal(size=(n, n))
    return m @ m.T + floor * np.eye(n)


def rand_full_row_rank(rng, q, n):
    while True:
        a = rng.normal(size=(q, n))
        if q == 0 or np.linalg.svd(a, compute_uv=False).min() > 1e-3:
            return a


def rand_filter_instance(rng, n, m):
    """Random predicted state, model and measurement with innovation."""
    pred = GaussianState(rng.normal(size=n), rand_spd(rng, n))
    model = LinearModelStep(
        rng.normal(size=(n, n)), rand_spd(rng, n), rng.normal(size=(m, n)), rand_spd(rng, m)
    )
    z = rng.normal(size=m) * 3
    return pred, model, innovate(pred, model, z)


def kkt_dense(quad, lin, rows, rhs):
    """Equality-constrained QP by one dense solve of the full KKT matrix."""
    s = quad.shape[0]
    k = rows.shape[0]
    mat = np.block([[quad, rows.T], [rows, np.zeros((k, k))]])
    sol = np.linalg.solve(mat, np.concatenate([-lin, rhs]))
    return sol[:s], sol[s:]


def enumerate_qp(quad, lin, eq_mat, eq_rhs, ineq_mat, ineq_rhs, tol=1e-9):
    """Exhaustive active-subset oracle for a strictly convex QP.

    Every subset of inequality rows is tried as an equality set; the KKT
    point that is primal feasible with non-negative multipliers is the
    optimum. Returns ``(x, objective)`` or ``None`` when infeasible.
    """
    q = eq_mat.shape[0]
    p = ineq_mat.shape[0]
    best = None
    for k in range(p + 1):
        for sub in itertools.combinations(range(p), k):
            rows = np.vstack([eq_mat, ineq_mat[list(sub)]])
            rhs = np.concatenate([eq_rhs, ineq_rhs[list(sub)]])
            if rows.shape[0] and np.linalg.matrix_rank(rows) < rows.shape[0]:
                continue
            x, mult = kkt_dense(quad, lin, rows, rhs)
            if p and np.any(ineq_mat @ x - ineq_rhs > tol * (1 + np.abs(ineq_rhs).max())):
                continue
            if np.any(mult[q:] < -tol):
                continue
            obj = 0.5 * x @ quad @ x + lin @ x
            if best is None or obj < best[1]:
                best = (x, obj)
    return best


def rand_feasible_qp(rng, s, p, q):
    """Strictly convex QP with a known interior point."""
    quad = rand_spd(rng, s)
    lin = rng.normal(size=s)
    x_in = rng.normal(size=s)
    a = rand_full_row_rank(rng, q, s)
    c = rng.normal(size=(p, s))
    return quad, lin, a, a @ x_in, c, c @ x_in + rng.uniform(0.0, 1.0, size=p)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
