import math

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from rrbandit.kernels import LinearKernel, RBFKernel
from rrbandit.losses import CrossEntropyLoss, SquaredErrorLoss
from rrbandit.models import (
    GaussianIsoPrior,
    LinearFeatureModel,
    PolynomialFeatureMap,
    RandomFourierFeatureMap,
    SmoothMLP,
)
from rrbandit.training import (
    ConstantSchedule,
    LogPowerSchedule,
    RandomizedRidgeSurrogate,
    objective_gradient,
    objective_value,
)


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

def test_constant_schedule():
    sched = ConstantSchedule(5.0)
    for t in (0, 1, 17, 10**6):
        assert sched(t) == 5.0
    assert sched.lambda0 == 5.0


def test_log_power_unit_value():
    # log(t + 2) = 1 at t = e - 2
    sched = LogPowerSchedule(q=2.0, scale=1.0)
    assert sched(math.e - 2.0) == pytest.approx(1.0)


def test_log_power_ratio_formula():
    sched = LogPowerSchedule(q=2.0, scale=1.0)
    expected = (math.log(1002.0) / math.log(102.0)) ** 2
    assert sched(1000) / sched(100) == pytest.approx(expected, rel=1e-12)


def test_log_power_monotone_and_bounded_below():
    sched = LogPowerSchedule(q=1.5, scale=0.7)
    ts = np.unique(np.geomspace(1, 10**6, 200).astype(int))
    vals = [sched(t) for t in ts]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert all(v >= sched.lambda0 for v in vals)
    assert sched(0) == pytest.approx(sched.lambda0)


def test_log_power_requires_q_greater_than_one():
    with pytest.raises(ValueError, match="q"):
        LogPowerSchedule(q=1.0)


def test_schedules_reject_negative_rounds():
    with pytest.raises(ValueError):
        ConstantSchedule(1.0)(-1)
    with pytest.raises(ValueError):
        LogPowerSchedule(2.0)(-3)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def _rff_surrogate(solver="auto", **kwargs):
    model = LinearFeatureModel(RandomFourierFeatureMap(8, dim=1, seed=3))
    prior = GaussianIsoPrior(model.param_dim, sigma=1.0, seed=5)
    return RandomizedRidgeSurrogate(
        model=model, loss=SquaredErrorLoss(), schedule=LogPowerSchedule(2.0),
        prior=prior, solver=solver, **kwargs)


def _data(n, rng):
    X = rng.uniform(-1, 1, size=(n, 1))
    y = rng.standard_normal(n)
    return X, y


def test_fit_with_no_data_returns_initialization():
    surr = _rff_surrogate()
    init = np.arange(8.0)
    surr.fit(np.empty((0, 1)), np.empty(0), round_index=0, init_params=init)
    np.testing.assert_array_equal(surr.params_, init)
    assert surr.converged_


def test_huge_regularization_pins_solution_to_initialization():
    # with lambda = 1e8 and one data point the move away from the anchor is
    # bounded by ||F'(y - F theta0)|| / lambda (the inverse curvature is
    # dominated by 1/lambda), hence vanishingly small
    surr = _rff_surrogate()
    surr.schedule = ConstantSchedule(1e8)
    rng = np.random.default_rng(0)
    X, y = _data(1, rng)
    init = rng.standard_normal(8)
    surr.fit(X, y, init_params=init)
    F = surr.model.features(X)
    bound = float(np.linalg.norm(F.T @ (y - F @ init))) / 1e8
    moved = float(np.linalg.norm(surr.params_ - init))
    assert moved <= bound + 1e-15
    assert moved <= 1e-6


def test_closed_form_matches_newton():
    rng = np.random.default_rng(1)
    X, y = _data(3, rng)
    init = rng.standard_normal(8)
    ridge = _rff_surrogate(solver="ridge").fit(X, y, init_params=init)
    newton = _rff_surrogate(solver="newton", grad_tol=1e-12).fit(X, y, init_params=init)
    np.testing.assert_allclose(ridge.params_, newton.params_, atol=1e-8)


def test_closed_form_matches_explicit_formula():
    rng = np.random.default_rng(2)
    X, y = _data(5, rng)
    init = rng.standard_normal(8)
    surr = _rff_surrogate(solver="ridge").fit(X, y, round_index=5, init_params=init)
    F = surr.model.features(X)
    lam = surr.lambda_
    expected = init + np.linalg.solve(lam * np.eye(8) + F.T @ F, F.T @ (y - F @ init))
    np.testing.assert_allclose(surr.params_, expected, atol=1e-12)


def test_solvers_agree_from_different_starting_points():
    # strong convexity: the minimizer is unique, so Newton started far from
    # the anchor lands on the same solution
    rng = np.random.default_rng(3)
    X, y = _data(6, rng)
    init = rng.standard_normal(8)
    a = _rff_surrogate(solver="newton", grad_tol=1e-12).fit(X, y, init_params=init)
    b = _rff_surrogate(solver="newton", grad_tol=1e-12).fit(
        X, y, init_params=init, start_params=init + 50.0 * rng.standard_normal(8))
    np.testing.assert_allclose(a.params_, b.params_, atol=1e-6)


def test_stationarity_of_the_fitted_parameters():
    rng = np.random.default_rng(4)
    X, y = _data(7, rng)
    init = rng.standard_normal(8)
    surr = _rff_surrogate(solver="ridge").fit(X, y, init_params=init)
    grad = objective_gradient(surr.model, surr.loss, LinearKernel(), X, y,
                              surr.lambda_, init, surr.params_)
    assert float(np.linalg.norm(grad)) <= 1e-9


def test_gd_reaches_the_ridge_solution():
    rng = np.random.default_rng(5)
    X, y = _data(4, rng)
    init = rng.standard_normal(8)
    ridge = _rff_surrogate(solver="ridge").fit(X, y, init_params=init)
    gd = _rff_surrogate(solver="gd", max_iter=20_000, grad_tol=1e-10,
                        step_size=0.05).fit(X, y, init_params=init)
    assert gd.converged_
    np.testing.assert_allclose(gd.params_, ridge.params_, atol=1e-6)


def test_nonlinear_param_kernel_penalty_via_gd():
    # RBF parameter kernel: the penalty is the kernel pseudometric squared;
    # check the solver reaches a stationary point of that objective
    model = LinearFeatureModel(PolynomialFeatureMap(2))
    prior = GaussianIsoPrior(model.param_dim, sigma=0.5, seed=1)
    kern = RBFKernel(lengthscale=2.0, output_scale=1.5)
    surr = RandomizedRidgeSurrogate(model=model, loss=SquaredErrorLoss(),
                                    schedule=ConstantSchedule(0.5), prior=prior,
                                    param_kernel=kern, solver="gd",
                                    max_iter=50_000, grad_tol=1e-8, step_size=0.02)
    rng = np.random.default_rng(6)
    X = rng.uniform(-1, 1, size=(5, 1))
    y = rng.standard_normal(5)
    init = 0.1 * rng.standard_normal(model.param_dim)
    surr.fit(X, y, init_params=init)
    assert surr.converged_
    grad = objective_gradient(model, surr.loss, kern, X, y, surr.lambda_,
                              init, surr.params_)
    assert float(np.linalg.norm(grad)) <= 1e-7


def test_newton_rejects_nonlinear_param_kernel():
    surr = _rff_surrogate(solver="newton")
    surr.param_kernel = RBFKernel()
    with pytest.raises(ValueError, match="linear parameter kernels"):
        surr.fit(*_data(3, np.random.default_rng(0)), init_params=np.zeros(8))


def test_ridge_rejects_incompatible_configuration():
    model = SmoothMLP([1, 3, 1])
    prior = GaussianIsoPrior(model.param_dim, seed=0)
    surr = RandomizedRidgeSurrogate(model=model, loss=SquaredErrorLoss(),
                                    schedule=ConstantSchedule(1.0), prior=prior,
                                    solver="ridge")
    with pytest.raises(ValueError, match="closed-form"):
        surr.fit(np.array([[0.0]]), np.array([1.0]))


def test_cross_entropy_requires_clamped_model():
    model = LinearFeatureModel(PolynomialFeatureMap(1))
    prior = GaussianIsoPrior(model.param_dim, seed=0)
    surr = RandomizedRidgeSurrogate(model=model, loss=CrossEntropyLoss((0.1, 0.9)),
                                    schedule=ConstantSchedule(1.0), prior=prior)
    with pytest.raises(ValueError, match="output_clamp"):
        surr.fit(np.array([[0.0]]), np.array([1.0]))


def test_cross_entropy_newton_fit_converges():
    model = LinearFeatureModel(PolynomialFeatureMap(2), output_clamp=(0.1, 0.9))
    prior = GaussianIsoPrior(model.param_dim, sigma=0.5, seed=9)
    surr = RandomizedRidgeSurrogate(model=model, loss=CrossEntropyLoss((0.1, 0.9)),
                                    schedule=ConstantSchedule(1.0), prior=prior,
                                    solver="newton", max_iter=300, grad_tol=1e-7)
    rng = np.random.default_rng(10)
    X = rng.uniform(-1, 1, size=(12, 1))
    z = (rng.random(12) < 0.5).astype(float)
    surr.fit(X, z, init_params=np.zeros(model.param_dim))
    assert surr.converged_
    preds = surr.predict(X)
    assert np.all(preds > 0.1 - 1e-12) and np.all(preds < 0.9 + 1e-12)


def test_mlp_newton_reduces_objective():
    model = SmoothMLP([1, 4, 1])
    prior = GaussianIsoPrior(model.param_dim, sigma=0.5, seed=2)
    surr = RandomizedRidgeSurrogate(model=model, loss=SquaredErrorLoss(),
                                    schedule=ConstantSchedule(0.5), prior=prior,
                                    solver="newton", max_iter=200, grad_tol=1e-8)
    rng = np.random.default_rng(11)
    X = rng.uniform(-1, 1, size=(10, 1))
    y = np.sin(2.0 * X[:, 0])
    init = prior.draw(0)
    surr.fit(X, y, init_params=init)
    before = objective_value(model, surr.loss, LinearKernel(), X, y,
                             surr.lambda_, init, init)
    after = objective_value(model, surr.loss, LinearKernel(), X, y,
                            surr.lambda_, init, surr.params_)
    assert after < before


def test_fit_result_and_attributes_are_consistent():
    surr = _rff_surrogate()
    rng = np.random.default_rng(12)
    X, y = _data(3, rng)
    surr.fit(X, y, round_index=3, init_params=rng.standard_normal(8))
    res = surr.fit_result_
    assert res.converged == surr.converged_
    assert res.lam == surr.lambda_ == surr.schedule(3)
    if res.converged:
        assert res.grad_norm <= max(surr.grad_tol, 1e-8)


def test_predict_before_fit_raises():
    with pytest.raises(NotFittedError):
        _rff_surrogate().predict(np.array([[0.0]]))


def test_fit_draws_init_from_prior_when_not_given():
    surr = _rff_surrogate()
    surr.fit(np.empty((0, 1)), np.empty(0), round_index=4)
    np.testing.assert_array_equal(surr.init_params_, surr.prior.draw(4))


def test_get_params_roundtrip():
    surr = _rff_surrogate()
    params = surr.get_params(deep=False)
    assert params["solver"] == "auto"
    surr.set_params(max_iter=17)
    assert surr.max_iter == 17
