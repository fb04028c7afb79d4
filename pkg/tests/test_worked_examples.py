"""Small hand-checkable cases and the oracles that go with them."""

import math

import numpy as np
import pytest

from ckf.constraints import ConstraintSet, NonlinearConstraint, is_feasible, linearize_constraint
from ckf.equality import eq_constrained_step, project_estimate, upsilon
from ckf.experiments import generate_sine_truth, sine_filter_model
from ckf.inequality import ineq_constrained_step, ineq_constrained_update, project_estimate_ineq, restricted_gain_ineq
from ckf.kalman import (
    GaussianState,
    Innovation,
    LinearModelStep,
    NonlinearModel,
    innovate,
    joseph_cov,
    kalman_step,
    linearize_measurement,
    linearize_transition,
    numerical_jacobian,
    optimal_gain,
    predict,
    update,
)
from ckf.prediction import lookahead_constraints, project_prediction, project_transition
from ckf.qp import QpProblem, max_step, solve, solve_eq_qp

from conftest import kkt_dense, rand_filter_instance, rand_full_row_rank, rand_spd

I2 = np.eye(2)


def _lin(f=I2, q=I2, h=I2, r=I2):
    return LinearModelStep(f, q, h, r)


# -- unconstrained filter ------------------------------------------------------


def test_predict_cases(rng):
    x = rng.normal(size=2)
    assert np.array_equal(predict(GaussianState(x, I2), _lin(q=np.zeros((2, 2)))).mean, x)
    np.testing.assert_array_equal(predict(GaussianState(x, I2), _lin()).cov, 2 * I2)
    c = math.cos(math.pi / 10) - 1.0
    f = np.array([[1.0, 0.0], [c, 1.0]])
    p = rand_spd(rng, 2)
    q = rand_spd(rng, 2)
    out = predict(GaussianState(x, p), _lin(f=f, q=q))
    by_hand = np.array(
        [[p[0, 0], c * p[0, 0] + p[0, 1]],
         [c * p[0, 0] + p[1, 0], c * c * p[0, 0] + c * (p[0, 1] + p[1, 0]) + p[1, 1]]]
    ) + q
    np.testing.assert_allclose(out.cov, by_hand, rtol=1e-12)


def test_innovate_cases():
    pred = GaussianState([1.0, 2.0], I2)
    innov = innovate(pred, _lin(), [1.0, 2.0])
    np.testing.assert_array_equal(innov.residual, [0.0, 0.0])
    np.testing.assert_array_equal(innov.residual_cov, 2 * I2)


def test_gain_cases():
    pred = GaussianState([0.0, 0.0], I2)
    model = _lin()
    np.testing.assert_allclose(optimal_gain(I2, model, innovate(pred, model, [0.0, 0.0])), 0.5 * I2)
    quiet = _lin(r=1e12 * I2)
    assert np.abs(optimal_gain(I2, quiet, innovate(pred, quiet, [1.0, 1.0]))).max() < 1e-10


def test_update_cases(rng):
    pred = GaussianState([0.0, 0.0], I2)
    model = _lin()
    innov = innovate(pred, model, [2.0, 4.0])
    out = update(pred, 0.5 * I2, innov, model)
    np.testing.assert_allclose(out.mean, [1.0, 2.0])
    np.testing.assert_allclose(out.cov, 0.5 * I2)
    pred = GaussianState(rng.normal(size=2), rand_spd(rng, 2))
    out = update(pred, np.zeros((2, 2)), innovate(pred, model, [5.0, 5.0]), model)
    np.testing.assert_array_equal(out.mean, pred.mean)
    np.testing.assert_allclose(out.cov, pred.cov)
    pred, model, innov = rand_filter_instance(rng, 3, 2)
    k = optimal_gain(pred.cov, model, innov)
    best = np.trace(update(pred, k, innov, model).cov)
    for _ in range(20):
        other = k + rng.normal(size=k.shape)
        assert np.trace(update(pred, other, innov, model).cov) >= best


def test_jacobian_cases(rng):
    ident = NonlinearModel(lambda x: x, lambda x: x, I2, I2)
    np.testing.assert_allclose(linearize_transition(ident, [0.3, -1.0]), I2, atol=1e-9)
    np.testing.assert_allclose(linearize_measurement(ident, [0.3, -1.0]), I2, atol=1e-9)
    h = rng.normal(size=(3, 2))
    lin = NonlinearModel(lambda x: x, lambda x: h @ x, I2, np.eye(3))
    np.testing.assert_allclose(linearize_measurement(lin, rng.normal(size=2)), h, atol=1e-8)
    t = math.pi / 10
    model = sine_filter_model(t)
    x = np.array([0.9, 0.1])
    np.testing.assert_allclose(
        linearize_transition(model, x), [[1.0, 0.0], [math.cos(x[0] + t) - math.cos(x[0]), 1.0]]
    )
    np.testing.assert_allclose(numerical_jacobian(model.transition_fn, x), model.transition_jacobian(x), atol=1e-6)
    smooth = lambda v: np.array([np.exp(v[0]) * v[1], np.sin(v[0] * v[1]), v[1] ** 3])
    jac = lambda v: np.array([[np.exp(v[0]) * v[1], np.exp(v[0])],
                              [v[1] * np.cos(v[0] * v[1]), v[0] * np.cos(v[0] * v[1])],
                              [0.0, 3 * v[1] ** 2]])
    v = rng.normal(size=2)
    np.testing.assert_allclose(numerical_jacobian(smooth, v), jac(v), atol=1e-6)


# -- constraints -----------------------------------------------------------------


def test_feasibility_cases():
    assert is_feasible([1e9, -1e9], ConstraintSet.empty(2))
    assert is_feasible([0.0, 5.0], ConstraintSet(2, [[1.0, 0.0]], [0.0]), tol=1e-9)
    assert not is_feasible([0.0, 1.5], ConstraintSet(2, ineq_mat=[[0.0, 1.0]], ineq_rhs=[1.0]))


def test_linearization_cases(rng):
    c = rng.normal(size=(2, 3))
    d = rng.normal(size=2)
    mat, rhs = linearize_constraint(NonlinearConstraint(lambda x: c @ x, d, lambda x: c), rng.normal(size=3))
    np.testing.assert_allclose(mat, c)
    np.testing.assert_allclose(rhs, d, atol=1e-12)
    mat, rhs = linearize_constraint(NonlinearConstraint(lambda x: x**2, [1.0], lambda x: np.diag(2 * x)), [1.0])
    np.testing.assert_allclose(mat, [[2.0]])
    np.testing.assert_allclose(rhs, [2.0])


def test_linearization_remainder_is_second_order(rng):
    quad = rand_spd(rng, 3)
    nc = NonlinearConstraint(lambda x: np.array([x @ quad @ x]), [1.0])
    x0 = rng.normal(size=3)
    mat, rhs = linearize_constraint(nc, x0)
    direction = rng.normal(size=3)
    ratios = []
    for eps in (1e-1, 1e-2, 1e-3):
        x = x0 + eps * direction
        err = abs((nc.value_fn(x) - nc.rhs) - (mat @ x - rhs))[0]
        ratios.append(err / eps**2)
    # remainder / eps^2 tends to d' Q d
    np.testing.assert_allclose(ratios, direction @ quad @ direction, rtol=1e-3)


# -- QP ----------------------------------------------------------------------------


def test_qp_cases(rng):
    x, _ = solve_eq_qp(2 * I2, [-4.0, -6.0], [[1.0, 0.0]], [0.0])
    np.testing.assert_allclose(x, [0.0, 3.0])
    quad = rand_spd(rng, 3)
    lin = rng.normal(size=3)
    np.testing.assert_allclose(solve_eq_qp(quad, lin)[0], -np.linalg.solve(quad, lin))
    a = rng.normal(size=(2, 4))
    quad = rand_spd(rng, 4)
    lin, b = rng.normal(size=4), rng.normal(size=2)
    np.testing.assert_allclose(solve_eq_qp(quad, lin, a, b)[0], kkt_dense(quad, lin, a, b)[0], atol=1e-10)

    sol = solve(QpProblem([[2.0]], [-4.0], ineq_mat=[[1.0]], ineq_rhs=[1.0]))
    np.testing.assert_allclose(sol.x, [1.0])
    assert sol.active_set == (0,)
    np.testing.assert_allclose(sol.multipliers_ineq, [2.0])
    sol = solve(QpProblem(2 * I2, [-1.0, -1.0], ineq_mat=I2, ineq_rhs=[1.0, 1.0]))
    np.testing.assert_allclose(sol.x, [0.5, 0.5])
    assert sol.active_set == ()


def test_max_step_cases(rng):
    assert max_step([0.0, 0.0], [2.0, 0.0], [[1.0, 0.0]], [1.0]) == (0.5, 0)
    assert max_step([0.0, 0.0], [0.1, 0.0], [[1.0, 0.0]], [1.0]) == (1.0, None)
    for _ in range(20):
        c = rng.normal(size=(4, 2))
        d = rng.uniform(0.1, 1.0, 4)
        s = 3 * rng.normal(size=2)
        tau, _ = max_step(np.zeros(2), s, c, d)
        grid = np.linspace(0.0, 1.0, 20001)
        feasible = np.all(np.outer(grid, s) @ c.T <= d + 1e-12, axis=1)
        last = grid[np.argmin(feasible)] if not feasible.all() else 1.0
        assert abs(tau - last) <= 1e-4 + 1e-9


# -- equality constraints -----------------------------------------------------------


def test_upsilon_cases(rng):
    np.testing.assert_allclose(upsilon([[1.0, 0.0]]), [[1.0], [0.0]])
    np.testing.assert_allclose(upsilon([[1.0, 1.0]]), [[0.5], [0.5]])
    a = rand_full_row_rank(rng, 2, 5)
    proj = upsilon(a, rand_spd(rng, 5)) @ a
    np.testing.assert_allclose(proj @ proj, proj, atol=1e-9)


def test_projection_cases(rng):
    out = project_estimate(GaussianState([2.0, 3.0], I2), [[1.0, 0.0]], [0.0])
    np.testing.assert_allclose(out.mean, [0.0, 3.0])
    out = project_estimate(GaussianState([0.0, 0.0], I2), [[1.0, 1.0]], [2.0])
    np.testing.assert_allclose(out.mean, [1.0, 1.0])
    np.testing.assert_allclose(out.cov, [[0.5, -0.5], [-0.5, 0.5]])
    a = rng.normal(size=(1, 3))
    m = rng.normal(size=3)
    out = project_estimate(GaussianState(m, rand_spd(rng, 3)), a, a @ m, "inv-cov")
    np.testing.assert_allclose(out.mean, m, atol=1e-12)


def test_equality_step_cases(rng):
    model = LinearModelStep(rng.normal(size=(3, 3)), rand_spd(rng, 3), rng.normal(size=(2, 3)), rand_spd(rng, 2))
    state = GaussianState(rng.normal(size=3), rand_spd(rng, 3))
    z = rng.normal(size=2)
    ref = kalman_step(state, model, z)
    out = eq_constrained_step(state, model, z, np.zeros((0, 3)), np.zeros(0))
    np.testing.assert_allclose(out.mean, ref.mean)
    a = rand_full_row_rank(rng, 1, 3)
    b = rng.normal(size=1)
    for method in ("project", "restrict-gain"):
        out = eq_constrained_step(state, model, z, a, b, method)
        np.testing.assert_allclose(a @ out.mean, b, atol=1e-9)
    best = np.trace(eq_constrained_step(state, model, z, a, b, "project", "inv-cov").cov)
    for _ in range(50):
        w = rand_spd(rng, 3)
        assert best <= np.trace(eq_constrained_step(state, model, z, a, b, "project", w).cov) + 1e-9


# -- inequality constraints -----------------------------------------------------------


def test_inequality_projection_cases():
    cs = ConstraintSet(2, ineq_mat=[[0.0, 1.0], [0.0, -1.0]], ineq_rhs=[1.0, 1.0])
    state = GaussianState([0.0, 0.5], I2)
    out, diag = project_estimate_ineq(state, cs)
    np.testing.assert_array_equal(out.mean, state.mean)
    assert not np.any(diag.safety_step)
    out, _ = project_estimate_ineq(GaussianState([0.0, 1.5], I2), cs)
    np.testing.assert_allclose(out.mean, [0.0, 1.0])


def test_inequality_gain_cases(rng):
    pred, model, innov = rand_filter_instance(rng, 3, 2)
    k = optimal_gain(pred.cov, model, innov)
    x_upd = pred.mean + k @ innov.residual
    cs = ConstraintSet(3, ineq_mat=[[1.0, 0.0, 0.0]], ineq_rhs=[x_upd[0] + 1.0])
    gain, _ = restricted_gain_ineq(pred, model, innov, cs)
    np.testing.assert_allclose(gain, k, atol=1e-10)
    # scalar case: the bound forces the value
    pred = GaussianState([0.0], [[1.0]])
    model = LinearModelStep([[1.0]], [[0.0]], [[1.0]], [[1.0]])
    innov = innovate(pred, model, [4.0])
    cs = ConstraintSet(1, ineq_mat=[[1.0]], ineq_rhs=[0.5])
    gain, _ = restricted_gain_ineq(pred, model, innov, cs)
    assert pred.mean[0] + gain[0, 0] * innov.residual[0] == pytest.approx(0.5, abs=1e-12)


def test_inequality_step_cases(rng):
    model = LinearModelStep(rng.normal(size=(2, 2)), I2, I2, I2)
    state = GaussianState(rng.normal(size=2), I2)
    z = 4 * rng.normal(size=2)
    ref = kalman_step(state, model, z)
    out, _ = ineq_constrained_step(state, model, z, ConstraintSet.empty(2))
    np.testing.assert_allclose(out.mean, ref.mean)
    np.testing.assert_allclose(out.cov, ref.cov)


def test_projection_is_closest_among_feasible_updates(rng):
    for _ in range(50):
        pred, model, innov = rand_filter_instance(rng, 3, 2)
        c = rng.normal(size=(3, 3))
        cs = ConstraintSet(3, ineq_mat=c, ineq_rhs=c @ pred.mean + rng.uniform(0, 0.5, 3))
        x_unc = update(pred, optimal_gain(pred.cov, model, innov), innov, model).mean
        proj, _ = ineq_constrained_update(pred, model, innov, cs, "project")
        rg, _ = ineq_constrained_update(pred, model, innov, cs, "restrict-gain")
        assert is_feasible(proj.mean, cs) and is_feasible(rg.mean, cs)
        assert np.sum((proj.mean - x_unc) ** 2) <= np.sum((rg.mean - x_unc) ** 2) + 1e-8


# -- prediction ---------------------------------------------------------------------


def test_prediction_cases(rng):
    np.testing.assert_allclose(project_transition(I2, [[1.0, 0.0]]), np.diag([0.0, 1.0]))
    f = rng.normal(size=(2, 2))
    np.testing.assert_array_equal(project_transition(f, np.zeros((0, 2))), f)
    cs = ConstraintSet(2, ineq_mat=[[0.0, 1.0], [0.0, -1.0]], ineq_rhs=[1.0, 1.0])
    pred = GaussianState([0.3, 0.2], I2)
    assert np.array_equal(project_prediction(pred, cs)[0].mean, pred.mean)
    out, _ = project_prediction(GaussianState([0.3, 1.2], I2), cs)
    np.testing.assert_allclose(out.mean, [0.3, 1.0])


def test_lookahead_cases(rng):
    cs = ConstraintSet(2, [[1.0, 0.0]], [0.5], [[0.0, 1.0]], [1.0])
    same = lookahead_constraints(cs, I2)
    np.testing.assert_array_equal(same.eq_mat, cs.eq_mat)
    np.testing.assert_array_equal(same.ineq_mat, cs.ineq_mat)
    swapped = lookahead_constraints(ConstraintSet(2, [[1.0, 0.0]], [0.0]), [[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_array_equal(swapped.eq_mat, [[0.0, 1.0]])
    # constrain now with the pulled-back set, then predict: feasible next step
    f_next = rng.normal(size=(2, 2)) + 2 * I2
    cs_next = ConstraintSet(2, ineq_mat=[[1.0, 1.0], [-1.0, 0.0]], ineq_rhs=[1.0, 2.0])
    est, _ = project_estimate_ineq(GaussianState(5 * rng.normal(size=2), I2), lookahead_constraints(cs_next, f_next))
    assert is_feasible(f_next @ est.mean, cs_next, 1e-8)


# -- truth generation -----------------------------------------------------------------


def test_truth_cases():
    t = math.pi / 10
    one = generate_sine_truth(0, t, 1, q_cov=np.zeros((2, 2)))
    np.testing.assert_allclose(one[0], [t, math.sin(t)])
    np.testing.assert_array_equal(generate_sine_truth(5, steps=30), generate_sine_truth(5, steps=30))


def test_truth_increment_variance():
    steps = 100_000
    truth = generate_sine_truth(21, math.pi / 10, steps)
    inc = np.diff(np.concatenate([[0.0], truth[:, 0]])) - math.pi / 10
    var = inc.var(ddof=1)
    # standard error of a sample variance of normals: sigma^2 sqrt(2 / (N - 1))
    assert abs(var - 0.1) <= 3 * 0.1 * math.sqrt(2 / (steps - 1))
