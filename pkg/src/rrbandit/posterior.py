"""Predictive variance tracking and confidence multipliers.

The uncertainty object is the posterior predictive variance of a zero-mean
GP with the chosen covariance and a *fixed* ridge r = lambda0 / alpha:

    var_t(x) = k(x, x) - k_t(x)' (K_t + r I)^-1 k_t(x)

maintained over a finite grid by rank-one extension of the Cholesky factor
of K_t + r I.  Because every visited point lies on the registered grid, the
back-substituted rows L^-1 K[visited, grid] are cached incrementally, which
makes per-update cost O(t * m) and variance reads O(1).

The module also computes the confidence multiplier

    beta_t(delta) = sqrt(lambda_t / lambda0) * D_t
                    + sqrt((2 sigma^2 / (alpha lambda0))
                           * log(det(I + alpha/lambda0 K_t)^(1/2) / delta))

where D_t is the kernel distance between the data-generating parameters and
the round's random initialization: the exact value in oracle diagnostics,
or a prior tail envelope in policy-visible logs.  The certified pointwise
error half-width is 2 * beta_t * sd_t(x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import LinearKernel, MaternKernel, RBFKernel, ScaledKernel
from .models import GaussianIsoPrior, UniformBoxPrior
from .validation import check_positive, check_unit_interval

__all__ = [
    "PosteriorState",
    "ConfidenceParams",
    "beta",
    "error_halfwidth",
    "init_distance_tail_bound",
    "tail_envelope",
]

_NEG_VAR_TOL = 1e-10


class PosteriorState:
    """Incremental GP-style posterior variance over a finite grid.

    Parameters
    ----------
    kernel : Kernel
        Covariance over the domain (a reference kernel, or the induced
        kernel in exact mode).
    grid : DomainGrid
        Registered candidate set; updates and queries must be grid points.
    ridge : float
        Fixed regularization lambda0 / alpha added to the Gram diagonal.
    """

    def __init__(self, kernel, grid, ridge):
        self.kernel = kernel
        self.grid = grid
        self.ridge = check_positive(ridge, "ridge")
        K = kernel(grid.points)
        self._K = 0.5 * (K + K.T)  # symmetrize roundoff
        self._m = grid.m
        self._cap = 64
        self._L = np.zeros((self._cap, self._cap))
        self._W = np.zeros((self._cap, self._m))  # rows: L^-1 K[visited, grid]
        self._colnorm2 = np.zeros(self._m)
        self._visited: list[int] = []
        self._logdet = 0.0

    # -- state ------------------------------------------------------------

    @property
    def t(self) -> int:
        return len(self._visited)

    @property
    def logdet(self) -> float:
        """Running log det(I + K_t / ridge)."""
        return self._logdet

    @property
    def visited_indices(self) -> tuple:
        return tuple(self._visited)

    @property
    def cholesky(self) -> np.ndarray:
        """Lower-triangular factor of K_t + ridge * I (copy)."""
        t = self.t
        return self._L[:t, :t].copy()

    def _grow(self):
        new_cap = 2 * self._cap
        L = np.zeros((new_cap, new_cap))
        W = np.zeros((new_cap, self._m))
        L[: self._cap, : self._cap] = self._L
        W[: self._cap] = self._W
        self._L, self._W, self._cap = L, W, new_cap

    # -- updates ----------------------------------------------------------

    def update(self, x) -> "PosteriorState":
        """Absorb one observation location (must be a grid point)."""
        return self.update_index(self.grid.index_of(x))

    def update_index(self, j: int) -> "PosteriorState":
        j = int(j)
        if not 0 <= j < self._m:
            raise ValueError(f"grid index {j} out of range [0, {self._m})")
        t = self.t
        if t == self._cap:
            self._grow()
        c = self._W[:t, j]
        d2 = self._K[j, j] + self.ridge - float(c @ c)
        if d2 <= 0.0:
            raise np.linalg.LinAlgError(
                f"Cholesky breakdown at t={t}, grid index {j}: "
                f"pivot {d2:.3e} <= 0 (k(x,x)={self._K[j, j]:.6e}, "
                f"ridge={self.ridge:.6e}, |c|^2={float(c @ c):.6e})"
            )
        d = math.sqrt(d2)
        self._L[t, :t] = c
        self._L[t, t] = d
        w_new = (self._K[j] - c @ self._W[:t]) / d
        self._W[t] = w_new
        self._colnorm2 += w_new**2
        self._logdet += 2.0 * math.log(d) - math.log(self.ridge)
        self._visited.append(j)
        return self

    # -- queries ----------------------------------------------------------

    def variance(self, x) -> float:
        return self.variance_at_index(self.grid.index_of(x))

    def variance_at_index(self, j: int) -> float:
        j = int(j)
        v = self._K[j, j] - self._colnorm2[j]
        if v < -_NEG_VAR_TOL:
            raise ValueError(f"negative variance {v:.3e} beyond roundoff tolerance")
        return max(v, 0.0)

    def variances(self) -> np.ndarray:
        """Posterior variance at every grid point."""
        v = np.diag(self._K) - self._colnorm2
        if np.any(v < -_NEG_VAR_TOL):
            raise ValueError("negative variance beyond roundoff tolerance")
        return np.maximum(v, 0.0)

    def sd_at_index(self, j: int) -> float:
        return math.sqrt(self.variance_at_index(j))


@dataclass(frozen=True)
class ConfidenceParams:
    """Constants entering the confidence multiplier."""

    delta: float
    sigma_ell: float
    alpha_ell: float
    lambda0: float

    def __post_init__(self):
        check_unit_interval(self.delta, "delta")
        check_positive(self.sigma_ell, "sigma_ell")
        check_positive(self.alpha_ell, "alpha_ell")
        check_positive(self.lambda0, "lambda0")

    @property
    def ridge(self) -> float:
        return self.lambda0 / self.alpha_ell


def beta(state: PosteriorState, conf: ConfidenceParams, lam_t: float,
         init_dist: float) -> float:
    """Confidence multiplier at the current round.

    Strictly increasing in the initialization distance and in the
    accumulated log-determinant, and decreasing in delta.
    """
    if lam_t < conf.lambda0 * (1.0 - 1e-12):
        raise ValueError(f"lambda_t={lam_t} must be >= lambda0={conf.lambda0}")
    if init_dist < 0.0:
        raise ValueError("init_dist must be nonnegative")
    log_term = 0.5 * state.logdet + math.log(1.0 / conf.delta)
    info = math.sqrt(2.0 * conf.sigma_ell**2 / (conf.alpha_ell * conf.lambda0)
                     * max(log_term, 0.0))
    return math.sqrt(lam_t / conf.lambda0) * init_dist + info


def error_halfwidth(state: PosteriorState, conf: ConfidenceParams, lam_t: float,
                    init_dist: float, x) -> float:
    """Certified pointwise half-width 2 * beta_t(delta) * sd_t(x)."""
    return 2.0 * beta(state, conf, lam_t, init_dist) * math.sqrt(state.variance(x))


# ---------------------------------------------------------------------------
# policy-visible initialization-distance envelopes
# ---------------------------------------------------------------------------

def init_distance_tail_bound(prior, kernel, s: float) -> float:
    """psi(s) with P(d(target, init) > psi(s)) <= exp(-s).

    Valid in the realizable setup where the data-generating parameters are
    themselves a prior draw.  For a linear kernel with an isotropic Gaussian
    prior the difference of two independent draws is Gaussian, giving
    psi(s) = sqrt(2) * sigma * (sqrt(M) + sqrt(2 s)); a uniform box prior
    has bounded diameter; bounded kernels (RBF, Matern) bound the distance
    by sqrt(2) * output_scale regardless of the prior.
    """
    if s < 0.0:
        raise ValueError("tail argument s must be >= 0")
    factor = 1.0
    base = kernel
    if isinstance(kernel, ScaledKernel):
        factor, base = kernel.scale_b, kernel.base
    if isinstance(base, (RBFKernel, MaternKernel)):
        return factor * math.sqrt(2.0) * base.output_scale
    if isinstance(base, LinearKernel):
        if isinstance(prior, GaussianIsoPrior):
            return factor * math.sqrt(2.0) * prior.sigma * (math.sqrt(prior.dim) + math.sqrt(2.0 * s))
        if isinstance(prior, UniformBoxPrior):
            return factor * float(np.linalg.norm(prior.high - prior.low))
    raise NotImplementedError(
        f"no tail bound for prior {type(prior).__name__} under kernel {type(kernel).__name__}"
    )


def tail_envelope(prior, kernel, t: int, delta: float) -> float:
    """Uniform-in-time envelope for the initialization distance.

    Allocates failure probability 6 delta / (pi^2 (t+1)^2) to round t, so the
    envelope holds simultaneously for all rounds with probability >= 1 - delta.
    """
    check_unit_interval(delta, "delta")
    s = math.log(math.pi**2 * (t + 1) ** 2 / (6.0 * delta))
    return init_distance_tail_bound(prior, kernel, max(s, 0.0))
