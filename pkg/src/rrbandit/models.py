"""Parametric model classes, feature maps and initialization priors."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .rng import substream
from .validation import check_matrix, check_positive, check_vector

__all__ = [
    "IdentityFeatureMap",
    "PolynomialFeatureMap",
    "RandomFourierFeatureMap",
    "OneHotFeatureMap",
    "LinearFeatureModel",
    "SmoothMLP",
    "GaussianIsoPrior",
    "UniformBoxPrior",
    "SmallBallEstimate",
    "estimate_small_ball",
]


# ---------------------------------------------------------------------------
# feature maps
# ---------------------------------------------------------------------------

class IdentityFeatureMap:
    """phi(x) = x, optionally with a prepended constant feature."""

    def __init__(self, dim: int, include_bias: bool = False):
        self.dim = int(dim)
        self.include_bias = bool(include_bias)
        self.n_features = self.dim + (1 if include_bias else 0)

    def __call__(self, X):
        X = check_matrix(X, "X")
        if X.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim}-dim inputs, got {X.shape[1]}")
        if self.include_bias:
            return np.hstack([np.ones((X.shape[0], 1)), X])
        return X.copy()


class PolynomialFeatureMap:
    """Monomial features (1, x, x**2, ...) of a scalar input."""

    def __init__(self, degree: int, include_bias: bool = True):
        if degree < 1:
            raise ValueError("degree must be >= 1")
        self.degree = int(degree)
        self.include_bias = bool(include_bias)
        self.dim = 1
        self.n_features = degree + (1 if include_bias else 0)

    def __call__(self, X):
        X = check_matrix(X, "X")
        if X.shape[1] != 1:
            raise ValueError("polynomial features are defined for scalar inputs")
        x = X[:, 0]
        start = 0 if self.include_bias else 1
        return np.stack([x**p for p in range(start, self.degree + 1)], axis=1)


class RandomFourierFeatureMap:
    """Random cosine features approximating a unit-scale RBF kernel.

    phi_j(x) = sqrt(2/M) * cos(w_j . x + b_j) with w_j ~ N(0, I/lengthscale^2)
    and b_j ~ U[0, 2*pi).  The spectral sample is drawn once at construction
    and frozen, so the map is deterministic.  Every feature is bounded by
    sqrt(2/M), hence ||phi(x)||^2 <= 2.
    """

    def __init__(self, n_features: int, dim: int, lengthscale: float = 1.0, seed: int = 0):
        if n_features < 1:
            raise ValueError("n_features must be >= 1")
        self.n_features = int(n_features)
        self.dim = int(dim)
        self.lengthscale = check_positive(lengthscale, "lengthscale")
        self.seed = int(seed)
        rng = substream(self.seed, 0xF0F0)
        self._freqs = rng.standard_normal((self.n_features, self.dim)) / self.lengthscale
        self._phases = rng.uniform(0.0, 2.0 * math.pi, size=self.n_features)
        self._freqs.setflags(write=False)
        self._phases.setflags(write=False)

    def __call__(self, X):
        X = check_matrix(X, "X")
        if X.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim}-dim inputs, got {X.shape[1]}")
        proj = X @ self._freqs.T + self._phases
        return math.sqrt(2.0 / self.n_features) * np.cos(proj)


class OneHotFeatureMap:
    """Tabular indicator features over a finite grid: phi(x) = e_index(x)."""

    def __init__(self, grid):
        self.grid = grid
        self.dim = grid.dim
        self.n_features = grid.m

    def __call__(self, X):
        X = check_matrix(X, "X")
        out = np.zeros((X.shape[0], self.n_features))
        for i, x in enumerate(X):
            out[i, self.grid.index_of(x)] = 1.0
        return out


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

def _squash(raw, clamp):
    """Smooth saturating map of raw outputs onto the open interval (a, b)."""
    a, b = clamp
    return a + (b - a) / (1.0 + np.exp(-raw))


def _squash_deriv(raw, clamp):
    a, b = clamp
    s = 1.0 / (1.0 + np.exp(-raw))
    return (b - a) * s * (1.0 - s)


def _check_clamp(clamp):
    if clamp is None:
        return None
    a, b = float(clamp[0]), float(clamp[1])
    if not (0.0 < a < b < 1.0):
        raise ValueError(f"output_clamp must satisfy 0 < a < b < 1, got ({a}, {b})")
    return (a, b)


class LinearFeatureModel(BaseEstimator):
    """g(x, theta) = theta . phi(x) for a fixed feature map phi.

    With ``output_clamp`` set, the raw inner product is passed through a
    smooth saturating map onto (a, b) in (0, 1), which keeps the model
    compatible with cross-entropy training while preserving exact gradients.

    Parameters
    ----------
    feature_map : object with ``__call__(X) -> (n, M)``, ``dim``, ``n_features``
    output_clamp : (a, b) or None
    """

    def __init__(self, feature_map, output_clamp=None):
        self.feature_map = feature_map
        self.output_clamp = _check_clamp(output_clamp)

    @property
    def param_dim(self) -> int:
        return self.feature_map.n_features

    @property
    def input_dim(self) -> int:
        return self.feature_map.dim

    @property
    def is_linear_feature(self) -> bool:
        # clamping breaks linearity in theta
        return self.output_clamp is None

    def features(self, X) -> np.ndarray:
        return self.feature_map(X)

    def evaluate(self, x, theta) -> float:
        x = check_vector(x, "x", dim=self.input_dim)
        return float(self.evaluate_batch(x.reshape(1, -1), theta)[0])

    def evaluate_batch(self, X, theta) -> np.ndarray:
        theta = check_vector(theta, "theta", dim=self.param_dim)
        raw = self.features(X) @ theta
        if self.output_clamp is not None:
            return _squash(raw, self.output_clamp)
        return raw

    def param_grad(self, x, theta) -> np.ndarray:
        x = check_vector(x, "x", dim=self.input_dim)
        return self.param_grad_batch(x.reshape(1, -1), theta)[0]

    def param_grad_batch(self, X, theta) -> np.ndarray:
        """Rows of d g(x_i, theta) / d theta."""
        theta = check_vector(theta, "theta", dim=self.param_dim)
        F = self.features(X)
        if self.output_clamp is not None:
            raw = F @ theta
            return F * _squash_deriv(raw, self.output_clamp)[:, None]
        return F

    def section_values(self, X, thetas) -> np.ndarray:
        """g(x_i, theta_s) for all pairs, shape (n, S)."""
        thetas = check_matrix(thetas, "thetas")
        raw = self.features(X) @ thetas.T
        if self.output_clamp is not None:
            return _squash(raw, self.output_clamp)
        return raw


class SmoothMLP(BaseEstimator):
    """Fully connected network with tanh hidden activations.

    Parameters are a flat vector packing, per layer, the weight matrix in
    row-major order followed by the bias vector.  The output layer is
    linear, optionally squashed onto ``output_clamp``.

    Parameters
    ----------
    layers : sequence of int
        Widths including input and output, e.g. (1, 4, 1).
    output_clamp : (a, b) or None
    """

    def __init__(self, layers, output_clamp=None):
        layers = [int(w) for w in layers]
        if len(layers) < 2 or any(w < 1 for w in layers):
            raise ValueError(f"layers must list >= 2 positive widths, got {layers}")
        if layers[-1] != 1:
            raise ValueError("scalar-output networks only: last width must be 1")
        self.layers = tuple(layers)
        self.output_clamp = _check_clamp(output_clamp)

    @property
    def param_dim(self) -> int:
        return sum(o * i + o for i, o in zip(self.layers[:-1], self.layers[1:]))

    @property
    def input_dim(self) -> int:
        return self.layers[0]

    is_linear_feature = False

    def _unpack(self, theta):
        theta = check_vector(theta, "theta", dim=self.param_dim)
        mats, pos = [], 0
        for i, o in zip(self.layers[:-1], self.layers[1:]):
            W = theta[pos:pos + o * i].reshape(o, i)
            pos += o * i
            b = theta[pos:pos + o]
            pos += o
            mats.append((W, b))
        return mats

    def evaluate(self, x, theta) -> float:
        x = check_vector(x, "x", dim=self.input_dim)
        return float(self.evaluate_batch(x.reshape(1, -1), theta)[0])

    def evaluate_batch(self, X, theta) -> np.ndarray:
        X = check_matrix(X, "X")
        if X.shape[1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim}-dim inputs, got {X.shape[1]}")
        h = X
        params = self._unpack(theta)
        for li, (W, b) in enumerate(params):
            h = h @ W.T + b
            if li < len(params) - 1:
                h = np.tanh(h)
        raw = h[:, 0]
        if self.output_clamp is not None:
            return _squash(raw, self.output_clamp)
        return raw

    def param_grad(self, x, theta) -> np.ndarray:
        x = check_vector(x, "x", dim=self.input_dim)
        return self.param_grad_batch(x.reshape(1, -1), theta)[0]

    def param_grad_batch(self, X, theta) -> np.ndarray:
        """Backprop through the network, one gradient row per input."""
        X = check_matrix(X, "X")
        params = self._unpack(theta)
        # forward, keeping pre-activations
        acts = [X]
        pres = []
        h = X
        for li, (W, b) in enumerate(params):
            z = h @ W.T + b
            pres.append(z)
            h = np.tanh(z) if li < len(params) - 1 else z
            acts.append(h)
        raw = pres[-1][:, 0]
        # backward
        n = X.shape[0]
        grads = np.empty((n, self.param_dim))
        delta = np.ones((n, 1))  # d raw / d z_last
        pieces = []
        for li in range(len(params) - 1, -1, -1):
            W, _ = params[li]
            gW = delta[:, :, None] * acts[li][:, None, :]  # (n, out, in)
            gb = delta
            pieces.append((gW.reshape(n, -1), gb))
            if li > 0:
                delta = (delta @ W) * (1.0 - acts[li] ** 2)
        pos = 0
        for gW, gb in reversed(pieces):
            grads[:, pos:pos + gW.shape[1]] = gW
            pos += gW.shape[1]
            grads[:, pos:pos + gb.shape[1]] = gb
            pos += gb.shape[1]
        if self.output_clamp is not None:
            grads = grads * _squash_deriv(raw, self.output_clamp)[:, None]
        return grads

    def section_values(self, X, thetas, chunk: int = 4096) -> np.ndarray:
        """g(x_i, theta_s) for all pairs, shape (n, S), vectorized over layers."""
        X = check_matrix(X, "X")
        thetas = check_matrix(thetas, "thetas")
        if thetas.shape[1] != self.param_dim:
            raise ValueError(f"thetas rows must have length {self.param_dim}")
        n, S = X.shape[0], thetas.shape[0]
        out = np.empty((n, S))
        shapes = list(zip(self.layers[:-1], self.layers[1:]))
        for start in range(0, S, chunk):
            block = thetas[start:start + chunk]
            s = block.shape[0]
            h = np.broadcast_to(X, (s, n, X.shape[1]))
            pos = 0
            for li, (i, o) in enumerate(shapes):
                W = block[:, pos:pos + o * i].reshape(s, o, i)
                pos += o * i
                b = block[:, pos:pos + o]
                pos += o
                h = np.einsum("soi,sni->sno", W, h) + b[:, None, :]
                if li < len(shapes) - 1:
                    h = np.tanh(h)
            raw = h[:, :, 0].T
            out[:, start:start + chunk] = (
                _squash(raw, self.output_clamp) if self.output_clamp is not None else raw
            )
        return out


# ---------------------------------------------------------------------------
# initialization priors
# ---------------------------------------------------------------------------

class GaussianIsoPrior(BaseEstimator):
    """Isotropic Gaussian N(0, sigma^2 I) over the parameter space.

    ``draw(index)`` is keyed by (seed, index) only, so the same draw index
    reproduces the same vector regardless of call order or process.
    """

    def __init__(self, dim: int, sigma: float = 1.0, seed: int = 0):
        self.dim = int(dim)
        self.sigma = check_positive(sigma, "sigma")
        self.seed = int(seed)

    def draw(self, index: int) -> np.ndarray:
        rng = substream(self.seed, 1, int(index))
        return self.sigma * rng.standard_normal(self.dim)

    def sample(self, rng, n: int) -> np.ndarray:
        return self.sigma * rng.standard_normal((int(n), self.dim))


class UniformBoxPrior(BaseEstimator):
    """Uniform prior over an axis-aligned box."""

    def __init__(self, dim: int, low=-1.0, high=1.0, seed: int = 0):
        self.dim = int(dim)
        self.low = np.broadcast_to(np.asarray(low, dtype=float), (self.dim,)).copy()
        self.high = np.broadcast_to(np.asarray(high, dtype=float), (self.dim,)).copy()
        if not np.all(self.high > self.low):
            raise ValueError("box is degenerate: need high > low coordinatewise")
        self.seed = int(seed)

    def draw(self, index: int) -> np.ndarray:
        rng = substream(self.seed, 1, int(index))
        return rng.uniform(self.low, self.high)

    def sample(self, rng, n: int) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=(int(n), self.dim))


# ---------------------------------------------------------------------------
# small-ball probability estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SmallBallEstimate:
    """Power-law fit of the prior mass of pseudometric balls around theta_star."""

    c_star: float
    d_eff: float
    fit_residual: float
    radii: tuple
    probabilities: tuple
    n_samples: int


_CHUNK = 1 << 17


def estimate_small_ball(prior, kernel, theta_star, radii, n_samples, rng) -> SmallBallEstimate:
    """Monte-Carlo estimate of P(d(theta_star, theta_0) <= rho) with a log-log fit.

    Draws ``n_samples`` initializations, counts hits inside each radius, and
    regresses log probability on log radius.  The slope estimates the
    effective small-ball dimension, the intercept the leading constant.
    Radii with zero hits are dropped with a warning; at least two estimable
    radii are required for the fit.
    """
    theta_star = check_vector(theta_star, "theta_star")
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size < 2:
        raise ValueError("need at least 2 radii for the power-law fit")
    if np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be positive and strictly increasing")
    n_samples = int(n_samples)
    if n_samples < 10_000:
        raise ValueError("n_samples must be at least 10^4 for a stable fit")

    k_ss = kernel.value(theta_star, theta_star)
    hits = np.zeros(radii.size, dtype=np.int64)
    remaining = n_samples
    while remaining > 0:
        block = min(_CHUNK, remaining)
        thetas = prior.sample(rng, block)
        cross = kernel(theta_star.reshape(1, -1), thetas)[0]
        d2 = np.maximum(k_ss - 2.0 * cross + kernel.diag(thetas), 0.0)
        d = np.sqrt(d2)
        hits += np.count_nonzero(d[None, :] <= radii[:, None], axis=1)
        remaining -= block

    probs = hits / n_samples
    keep = probs > 0
    if not np.any(keep):
        raise ValueError("radii below resolution: no prior draws landed in any ball")
    if np.count_nonzero(keep) < 2:
        dropped = radii[~keep]
        raise ValueError(
            f"only one radius has nonzero mass (zero hits at {dropped.tolist()}); "
            "fit needs at least 2 points"
        )
    if not np.all(keep):
        warnings.warn(
            f"dropping {int(np.count_nonzero(~keep))} radii with zero hits",
            RuntimeWarning,
        )
    log_r = np.log(radii[keep])
    log_p = np.log(probs[keep])
    A = np.stack([log_r, np.ones_like(log_r)], axis=1)
    coef, res, _, _ = np.linalg.lstsq(A, log_p, rcond=None)
    residual = float(res[0]) if res.size else 0.0
    return SmallBallEstimate(
        c_star=float(np.exp(coef[1])),
        d_eff=float(coef[0]),
        fit_residual=residual,
        radii=tuple(radii[keep].tolist()),
        probabilities=tuple(probs[keep].tolist()),
        n_samples=n_samples,
    )
