import numpy as np
import pytest

from ckf.constraints import (
    ConstraintSet,
    NonlinearConstraint,
    is_feasible,
    linearize_constraint,
    linearize_constraints,
    relinearize_until_fixed,
    violation,
)
from ckf.equality import project_estimate
from ckf.errors import DimensionError, RankError
from ckf.kalman import GaussianState


def test_shapes_normalized():
    cs = ConstraintSet(3, eq_mat=[1.0, 0.0, 0.0], eq_rhs=2.0)
    assert cs.eq_mat.shape == (1, 3) and cs.eq_rhs.shape == (1,)
    assert cs.ineq_mat.shape == (0, 3) and cs.n_ineq == 0
    assert ConstraintSet.empty(4).is_empty


def test_rejects_bad_input():
    with pytest.raises(RankError):
        ConstraintSet(2, eq_mat=[[1.0, 1.0], [2.0, 2.0]], eq_rhs=[0.0, 0.0])
    with pytest.raises(DimensionError):
        ConstraintSet(2, eq_mat=[[1.0, 1.0, 0.0]], eq_rhs=[0.0])
    with pytest.raises(DimensionError):
        ConstraintSet(2, ineq_mat=[[1.0, 1.0]], ineq_rhs=[0.0, 1.0])


def test_violation_and_feasibility():
    cs = ConstraintSet(2, [[1.0, 1.0]], [1.0], [[0.0, 1.0]], [0.25])
    assert violation([0.5, 0.5], cs) == pytest.approx(0.25)
    assert violation([0.8, 0.2], cs) == pytest.approx(0.0, abs=1e-15)
    assert is_feasible([0.8, 0.2], cs)
    assert not is_feasible([0.8, 0.3], cs)
    with pytest.raises(DimensionError):
        violation([0.0], cs)


def test_combine_drops_consistent_duplicate_rows():
    a = ConstraintSet(3, [[1.0, 0.0, 0.0]], [1.0])
    b = ConstraintSet(3, [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0]], [2.0, 5.0], [[0.0, 0.0, 1.0]], [3.0])
    c = a.combine(b)
    assert c.n_eq == 2 and c.n_ineq == 1
    bad = ConstraintSet(3, [[2.0, 0.0, 0.0]], [3.0])
    with pytest.raises(RankError):
        a.combine(bad)


def _circle(radius=1.0):
    return NonlinearConstraint(
        lambda x: np.array([x @ x]), [radius**2], lambda x: 2.0 * x[None, :], kind="equality"
    )


def test_linearize_constraint_tight_at_reference(rng):
    nc = _circle()
    for _ in range(10):
        x0 = rng.normal(size=2)
        mat, rhs = linearize_constraint(nc, x0)
        np.testing.assert_allclose(mat, 2 * x0[None, :])
        # first-order model agrees with the function at x0
        np.testing.assert_allclose(mat @ x0 - rhs, nc.value_fn(x0) - nc.rhs, atol=1e-12)


def test_linearize_constraint_finite_difference_jacobian(rng):
    nc = NonlinearConstraint(lambda x: np.array([np.sin(x[0]) * x[1]]), [0.3])
    x0 = rng.normal(size=2)
    mat, _ = linearize_constraint(nc, x0)
    np.testing.assert_allclose(mat, [[np.cos(x0[0]) * x0[1], np.sin(x0[0])]], atol=1e-7)


def test_relinearization_reaches_the_circle():
    nc = _circle(2.0)
    x_unc = np.array([3.0, 1.0])

    def solve(cs):
        return project_estimate(GaussianState(x_unc, np.eye(2)), cs.eq_mat, cs.eq_rhs).mean

    x, iters = relinearize_until_fixed(solve, [nc], x_unc, max_iter=50)
    assert np.linalg.norm(x) == pytest.approx(2.0, abs=1e-7)
    np.testing.assert_allclose(x / np.linalg.norm(x), x_unc / np.linalg.norm(x_unc), atol=1e-6)
    assert iters > 1


def test_linearize_constraints_appends_to_base():
    base = ConstraintSet(2, ineq_mat=[[1.0, 0.0]], ineq_rhs=[5.0])
    ineq = NonlinearConstraint(lambda x: np.array([x[1] ** 2]), [4.0], lambda x: np.array([[0.0, 2 * x[1]]]))
    cs = linearize_constraints([ineq, _circle()], np.array([1.0, 1.0]), base)
    assert cs.n_ineq == 2 and cs.n_eq == 1


def test_bad_kind():
    with pytest.raises(ValueError):
        NonlinearConstraint(lambda x: x, [0.0], kind="maybe")
