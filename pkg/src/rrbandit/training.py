"""Randomized regularized model fitting.

At round t the surrogate minimizes

    (lambda_t / 2) * d(theta, theta_t0)^2  +  sum_i l(g(x_i, theta), y_i)

where theta_t0 is a fresh draw from the initialization prior and d is the
parameter-kernel pseudometric (the Euclidean distance under a linear
kernel).  Regularization strength follows a non-decreasing schedule in the
round index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .kernels import LinearKernel
from .losses import CrossEntropyLoss
from .validation import check_matrix, check_positive, check_vector

__all__ = [
    "ConstantSchedule",
    "LogPowerSchedule",
    "FitResult",
    "RandomizedRidgeSurrogate",
    "objective_value",
    "objective_gradient",
]

_NEWTON_MAX_BACKTRACKS = 40


class ConstantSchedule(BaseEstimator):
    """lambda_t = value for all rounds."""

    def __init__(self, value: float):
        self.value = check_positive(value, "value")

    @property
    def lambda0(self) -> float:
        return self.value

    def __call__(self, t: int) -> float:
        if t < 0:
            raise ValueError("round index must be >= 0")
        return self.value


class LogPowerSchedule(BaseEstimator):
    """lambda_t = scale * log(t + 2)^q with q > 1.

    Non-decreasing in t with global lower bound scale * log(2)^q at t = 0.
    """

    def __init__(self, q: float = 2.0, scale: float = 1.0):
        q = float(q)
        if q <= 1.0:
            raise ValueError(f"q must be > 1, got {q}")
        self.q = q
        self.scale = check_positive(scale, "scale")

    @property
    def lambda0(self) -> float:
        return self.scale * math.log(2.0) ** self.q

    def __call__(self, t: int) -> float:
        if t < 0:
            raise ValueError("round index must be >= 0")
        return self.scale * math.log(t + 2.0) ** self.q


@dataclass(frozen=True)
class FitResult:
    params: np.ndarray
    init_params: np.ndarray
    lam: float
    n_iter: int
    grad_norm: float
    converged: bool


# ---------------------------------------------------------------------------
# objective pieces
# ---------------------------------------------------------------------------

def _penalty_value(param_kernel, theta, theta0, lam):
    if isinstance(param_kernel, LinearKernel):
        diff = theta - theta0
        return 0.5 * lam * float(diff @ diff)
    d2 = (
        param_kernel.value(theta, theta)
        - 2.0 * param_kernel.value(theta, theta0)
        + param_kernel.value(theta0, theta0)
    )
    return 0.5 * lam * max(d2, 0.0)


def _penalty_grad(param_kernel, theta, theta0, lam):
    if isinstance(param_kernel, LinearKernel):
        return lam * (theta - theta0)
    # grad of d(theta, theta0)^2 = 2 (grad_1 k(theta, theta) - grad_1 k(theta, theta0))
    return lam * (param_kernel.grad_first(theta, theta)
                  - param_kernel.grad_first(theta, theta0))


def objective_value(model, loss, param_kernel, X, y, lam, theta0, theta) -> float:
    """Randomized regularized objective at theta."""
    val = _penalty_value(param_kernel, theta, theta0, lam)
    if len(y):
        val += float(np.sum(loss.value(model.evaluate_batch(X, theta), y)))
    return val


def objective_gradient(model, loss, param_kernel, X, y, lam, theta0, theta) -> np.ndarray:
    """Exact gradient of the randomized regularized objective at theta."""
    grad = _penalty_grad(param_kernel, theta, theta0, lam)
    if len(y):
        preds = model.evaluate_batch(X, theta)
        J = model.param_grad_batch(X, theta)
        grad = grad + J.T @ loss.d1(preds, y)
    return grad


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

def _solve_closed_form(model, X, y, lam, theta0) -> FitResult:
    # theta = theta0 + (lam I + F'F)^-1 F'(y - F theta0), exact for
    # linear-feature models under squared error with a linear kernel.
    F = model.features(X)
    A = lam * np.eye(F.shape[1]) + F.T @ F
    rhs = F.T @ (y - F @ theta0)
    theta = theta0 + np.linalg.solve(A, rhs)
    grad = lam * (theta - theta0) + F.T @ (F @ theta - y)
    return FitResult(theta, theta0.copy(), lam, 1, float(np.linalg.norm(grad)), True)


def _solve_newton(model, loss, param_kernel, X, y, lam, theta0,
                  max_iter, grad_tol, start=None) -> FitResult:
    # Damped Gauss-Newton: curvature lam I + J' diag(l'') J, exact gradients,
    # backtracking halving whenever a step fails to decrease the objective.
    # Exact Newton for models linear in theta.
    theta = (theta0 if start is None else start).copy()
    M = theta.shape[0]
    obj = objective_value(model, loss, param_kernel, X, y, lam, theta0, theta)
    grad_norm = math.inf
    for it in range(1, max_iter + 1):
        grad = objective_gradient(model, loss, param_kernel, X, y, lam, theta0, theta)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= grad_tol:
            return FitResult(theta, theta0.copy(), lam, it - 1, grad_norm, True)
        H = lam * np.eye(M)
        if len(y):
            preds = model.evaluate_batch(X, theta)
            J = model.param_grad_batch(X, theta)
            H = H + (J.T * loss.d2(preds, y)) @ J
        step = np.linalg.solve(H, grad)
        scale = 1.0
        for _ in range(_NEWTON_MAX_BACKTRACKS):
            cand = theta - scale * step
            cand_obj = objective_value(model, loss, param_kernel, X, y, lam, theta0, cand)
            if cand_obj <= obj:
                break
            scale *= 0.5
        else:
            return FitResult(theta, theta0.copy(), lam, it, grad_norm, False)
        theta, obj = cand, cand_obj
    grad = objective_gradient(model, loss, param_kernel, X, y, lam, theta0, theta)
    grad_norm = float(np.linalg.norm(grad))
    return FitResult(theta, theta0.copy(), lam, max_iter, grad_norm,
                     grad_norm <= grad_tol)


def _solve_gd(model, loss, param_kernel, X, y, lam, theta0,
              max_iter, grad_tol, step_size, start=None) -> FitResult:
    theta = (theta0 if start is None else start).copy()
    grad_norm = math.inf
    for it in range(1, max_iter + 1):
        grad = objective_gradient(model, loss, param_kernel, X, y, lam, theta0, theta)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= grad_tol:
            return FitResult(theta, theta0.copy(), lam, it - 1, grad_norm, True)
        theta = theta - step_size * grad
    grad = objective_gradient(model, loss, param_kernel, X, y, lam, theta0, theta)
    grad_norm = float(np.linalg.norm(grad))
    return FitResult(theta, theta0.copy(), lam, max_iter, grad_norm,
                     grad_norm <= grad_tol)


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------

class RandomizedRidgeSurrogate(BaseEstimator):
    """Surrogate model trained by randomized regularized minimization.

    Follows the fit/predict estimator idiom: ``fit(X, y)`` draws a fresh
    initialization (or takes one), minimizes the round objective and stores
    the solution in trailing-underscore attributes; ``predict(X)`` evaluates
    the fitted model.

    Parameters
    ----------
    model : LinearFeatureModel or SmoothMLP
    loss : SquaredErrorLoss or CrossEntropyLoss
    schedule : ConstantSchedule or LogPowerSchedule
        Maps the round index to the regularization strength.
    prior : GaussianIsoPrior or UniformBoxPrior, optional
        Initialization distribution, used when ``fit`` receives no explicit
        initialization.
    param_kernel : Kernel, default LinearKernel()
        Parameter-space kernel defining the regularization pseudometric.
    solver : {"auto", "ridge", "newton", "gd"}
        "ridge" is the closed form, valid only for unclamped linear-feature
        models under squared error with a linear kernel; "newton" (damped
        Gauss-Newton) requires a linear kernel; "gd" handles nonlinear
        parameter kernels with analytic gradients.  "auto" picks "ridge"
        when valid, otherwise "newton".
    max_iter, grad_tol, step_size : solver controls
    """

    def __init__(self, model, loss, schedule, prior=None, param_kernel=None,
                 solver="auto", max_iter=100, grad_tol=1e-9, step_size=0.01):
        self.model = model
        self.loss = loss
        self.schedule = schedule
        self.prior = prior
        self.param_kernel = param_kernel
        self.solver = solver
        self.max_iter = int(max_iter)
        self.grad_tol = float(grad_tol)
        self.step_size = float(step_size)

    def _kernel(self):
        return self.param_kernel if self.param_kernel is not None else LinearKernel()

    def _ridge_ok(self):
        return (getattr(self.model, "is_linear_feature", False)
                and getattr(self.loss, "name", "") == "squared_error"
                and isinstance(self._kernel(), LinearKernel))

    def _resolve_solver(self):
        if self.solver == "auto":
            return "ridge" if self._ridge_ok() else "newton"
        if self.solver == "ridge" and not self._ridge_ok():
            raise ValueError(
                "closed-form ridge needs an unclamped linear-feature model, "
                "squared error and a linear parameter kernel"
            )
        if self.solver == "newton" and not isinstance(self._kernel(), LinearKernel):
            raise ValueError("newton solver supports linear parameter kernels only; use gd")
        if self.solver not in ("ridge", "newton", "gd"):
            raise ValueError(f"unknown solver {self.solver!r}")
        return self.solver

    def fit(self, X, y, round_index=None, init_params=None, start_params=None):
        """Minimize the round objective on (X, y).

        ``init_params`` anchors the regularizer (drawn from the prior when
        omitted); ``start_params`` only sets the iterative solvers' first
        iterate.  With no data the regularizer alone is minimized and the
        fit returns the initialization exactly.
        """
        y = np.asarray(y, dtype=float).ravel()
        if y.size:
            X = check_matrix(X, "X")
            if X.shape[0] != y.size:
                raise ValueError(f"X has {X.shape[0]} rows but y has {y.size}")
        else:
            X = np.empty((0, self.model.input_dim))
        if isinstance(self.loss, CrossEntropyLoss) and self.model.output_clamp is None:
            raise ValueError("cross-entropy training requires a model with output_clamp")
        t = int(round_index) if round_index is not None else y.size
        lam = self.schedule(t)
        if init_params is not None:
            theta0 = check_vector(init_params, "init_params", dim=self.model.param_dim)
        elif self.prior is not None:
            theta0 = self.prior.draw(t)
        else:
            raise ValueError("either init_params or a prior is required")

        start = None
        if start_params is not None:
            start = check_vector(start_params, "start_params", dim=self.model.param_dim)

        if y.size == 0:
            result = FitResult(theta0.copy(), theta0.copy(), lam, 0, 0.0, True)
        else:
            solver = self._resolve_solver()
            if solver == "ridge":
                result = _solve_closed_form(self.model, X, y, lam, theta0)
            elif solver == "newton":
                result = _solve_newton(self.model, self.loss, self._kernel(),
                                       X, y, lam, theta0, self.max_iter, self.grad_tol,
                                       start=start)
            else:
                result = _solve_gd(self.model, self.loss, self._kernel(), X, y, lam,
                                   theta0, self.max_iter, self.grad_tol, self.step_size,
                                   start=start)

        self.params_ = result.params
        self.init_params_ = result.init_params
        self.lambda_ = result.lam
        self.n_iter_ = result.n_iter
        self.grad_norm_ = result.grad_norm
        self.converged_ = result.converged
        self.round_index_ = t
        self.fit_result_ = result
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "params_"):
            raise NotFittedError("surrogate is not fitted yet")
        return self.model.evaluate_batch(X, self.params_)
