"""Kernels over parameter space and over the candidate domain.

Provides the stationary families (linear, RBF, Matern with half-integer
smoothness), the model-induced kernel obtained from inner products of a
parametric model's sections, the kernel pseudometric between parameter
vectors, and a numerical positive-semidefiniteness certificate for
domination of the induced kernel by a reference kernel.

All kernel objects are immutable after construction and safe to share
across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator

from .validation import check_matrix, check_positive, check_same_dim, check_vector

__all__ = [
    "Kernel",
    "LinearKernel",
    "RBFKernel",
    "MaternKernel",
    "InducedKernel",
    "ScaledKernel",
    "pseudometric",
    "rkhs_norm",
    "CertificateResult",
    "certify_domination",
    "smallest_certified_scale",
    "min_relative_eigenvalue",
    "PSD_TOL",
]

# Relative eigenvalue tolerance for all PSD checks (double-precision
# Cholesky breakdown scale).
PSD_TOL = 1e-8

# Radicand below this is treated as a PSD violation rather than roundoff.
_METRIC_TOL = 1e-12


class Kernel(BaseEstimator):
    """Base class: a positive-semidefinite kernel over R^n vectors.

    Subclasses implement :meth:`__call__` returning the Gram matrix between
    two point sets.  ``get_params``/``set_params`` come from sklearn's
    estimator machinery so kernels compose with pipelines and config
    round-trips.
    """

    def __call__(self, A, B=None) -> np.ndarray:
        raise NotImplementedError

    def diag(self, A) -> np.ndarray:
        A = check_matrix(A, "A")
        return np.array([self.value(a, a) for a in A])

    def value(self, a, b) -> float:
        """Scalar kernel evaluation k(a, b)."""
        a, b = check_same_dim(a, b, "a", "b")
        return float(self(a.reshape(1, -1), b.reshape(1, -1))[0, 0])

    def grad_first(self, a, b) -> np.ndarray:
        """Gradient of k(a, b) with respect to ``a``."""
        raise NotImplementedError(
            f"{type(self).__name__} does not provide an analytic gradient"
        )


class LinearKernel(Kernel):
    """k(a, b) = a . b, the kernel of models linear in their parameters."""

    def __call__(self, A, B=None):
        A = check_matrix(A, "A")
        B = A if B is None else check_matrix(B, "B")
        if A.shape[1] != B.shape[1]:
            raise ValueError("point sets have mismatched dimensions")
        return A @ B.T

    def diag(self, A):
        A = check_matrix(A, "A")
        return np.einsum("ij,ij->i", A, A)

    def grad_first(self, a, b):
        a, b = check_same_dim(a, b, "a", "b")
        return b.copy()


class RBFKernel(Kernel):
    """Squared-exponential kernel, k(a, a) = output_scale**2.

    Parameters
    ----------
    lengthscale : float
        Positive bandwidth.
    output_scale : float
        Positive amplitude; the Gram diagonal equals its square.
    """

    def __init__(self, lengthscale=1.0, output_scale=1.0):
        self.lengthscale = check_positive(lengthscale, "lengthscale")
        self.output_scale = check_positive(output_scale, "output_scale")

    def __call__(self, A, B=None):
        A = check_matrix(A, "A")
        B = A if B is None else check_matrix(B, "B")
        if A.shape[1] != B.shape[1]:
            raise ValueError("point sets have mismatched dimensions")
        d2 = cdist(A / self.lengthscale, B / self.lengthscale, "sqeuclidean")
        return self.output_scale**2 * np.exp(-0.5 * d2)

    def diag(self, A):
        A = check_matrix(A, "A")
        return np.full(A.shape[0], self.output_scale**2)

    def grad_first(self, a, b):
        a, b = check_same_dim(a, b, "a", "b")
        k = self.value(a, b)
        return -k * (a - b) / self.lengthscale**2


class MaternKernel(Kernel):
    """Matern kernel restricted to nu in {1/2, 3/2, 5/2} (closed forms).

    Parameters
    ----------
    lengthscale : float
    nu : float
        One of 0.5, 1.5, 2.5.
    output_scale : float
    """

    _SUPPORTED_NU = (0.5, 1.5, 2.5)

    def __init__(self, lengthscale=1.0, nu=2.5, output_scale=1.0):
        if nu not in self._SUPPORTED_NU:
            raise ValueError(f"nu must be one of {self._SUPPORTED_NU}, got {nu}")
        self.lengthscale = check_positive(lengthscale, "lengthscale")
        self.nu = float(nu)
        self.output_scale = check_positive(output_scale, "output_scale")

    def __call__(self, A, B=None):
        A = check_matrix(A, "A")
        B = A if B is None else check_matrix(B, "B")
        if A.shape[1] != B.shape[1]:
            raise ValueError("point sets have mismatched dimensions")
        r = cdist(A / self.lengthscale, B / self.lengthscale, "euclidean")
        if self.nu == 0.5:
            base = np.exp(-r)
        elif self.nu == 1.5:
            s = math.sqrt(3.0) * r
            base = (1.0 + s) * np.exp(-s)
        else:
            s = math.sqrt(5.0) * r
            base = (1.0 + s + s**2 / 3.0) * np.exp(-s)
        return self.output_scale**2 * base

    def diag(self, A):
        A = check_matrix(A, "A")
        return np.full(A.shape[0], self.output_scale**2)

    def grad_first(self, a, b):
        # nu = 1/2 has a kink at a = b; the smooth cases have closed-form
        # radial derivatives that stay finite as r -> 0.
        if self.nu == 0.5:
            raise NotImplementedError("Matern nu=1/2 is not differentiable at 0")
        a, b = check_same_dim(a, b, "a", "b")
        diff = a - b
        r = np.linalg.norm(diff) / self.lengthscale
        w2 = self.output_scale**2
        if self.nu == 1.5:
            coef = -3.0 * w2 * math.exp(-math.sqrt(3.0) * r)
        else:
            coef = -(5.0 / 3.0) * w2 * (1.0 + math.sqrt(5.0) * r) * math.exp(-math.sqrt(5.0) * r)
        return coef * diff / self.lengthscale**2


class InducedKernel(Kernel):
    """Kernel on the candidate domain induced by a parametric model.

    Two computable regimes are supported:

    ``"exact"``
        Model linear in its parameters under a linear parameter kernel:
        k(x, x') = phi(x) . phi(x') with phi the model's feature map.

    ``"quadrature"``
        General smooth models: a seeded Monte-Carlo estimate of the inner
        product of the model sections under a reference parameter measure,
        k(x, x') ~= mean_s g(x, theta_s) g(x', theta_s).  The sample set is
        drawn once at construction and frozen, so evaluation is
        deterministic.

    Parameters
    ----------
    model : LinearFeatureModel or SmoothMLP
    param_kernel : Kernel
        Kernel over the parameter space.
    mode : {"exact", "quadrature"}
    quadrature_measure : prior, required in quadrature mode
        Object with ``sample(rng, n)`` returning (n, param_dim) draws.
    quadrature_samples : int
        Number of frozen quadrature draws.
    seed : int
        Seed for the frozen quadrature sample set.
    grid : DomainGrid, optional
        When given, scalar evaluations validate membership.
    """

    def __init__(self, model, param_kernel, mode="exact", quadrature_measure=None,
                 quadrature_samples=0, seed=0, grid=None):
        if mode not in ("exact", "quadrature"):
            raise ValueError(f"mode must be 'exact' or 'quadrature', got {mode!r}")
        if mode == "exact":
            if not (getattr(model, "is_linear_feature", False)
                    and isinstance(param_kernel, LinearKernel)):
                raise ValueError(
                    "exact mode needs a linear-feature model and a linear parameter kernel"
                )
        else:
            if quadrature_measure is None:
                raise ValueError("quadrature mode needs a quadrature_measure")
            if int(quadrature_samples) <= 0:
                raise ValueError("quadrature mode needs quadrature_samples > 0")
        self.model = model
        self.param_kernel = param_kernel
        self.mode = mode
        self.quadrature_measure = quadrature_measure
        self.quadrature_samples = int(quadrature_samples)
        self.seed = int(seed)
        self.grid = grid
        if mode == "quadrature":
            from .rng import substream

            rng = substream(self.seed, 0xC0FFEE)
            self._theta_samples = quadrature_measure.sample(rng, self.quadrature_samples)
            self._theta_samples.setflags(write=False)
        else:
            self._theta_samples = None

    def _check_registered(self, x):
        if self.grid is not None and not self.grid.contains(x):
            raise ValueError("point is not registered on this kernel's grid")

    def value(self, x, xp) -> float:
        x = check_vector(x, "x")
        xp = check_vector(xp, "x_prime")
        self._check_registered(x)
        self._check_registered(xp)
        return float(self(x.reshape(1, -1), xp.reshape(1, -1))[0, 0])

    def __call__(self, A, B=None):
        A = check_matrix(A, "A")
        B = A if B is None else check_matrix(B, "B")
        if self.mode == "exact":
            FA = self.model.features(A)
            FB = FA if B is A else self.model.features(B)
            return FA @ FB.T
        GA = self._section_values(A)
        GB = GA if B is A else self._section_values(B)
        return (GA @ GB.T) / self.quadrature_samples

    def _section_values(self, X):
        # rows: x in X; columns: frozen quadrature draws theta_s
        return self.model.section_values(X, self._theta_samples)

    def diag(self, A):
        A = check_matrix(A, "A")
        if self.mode == "exact":
            F = self.model.features(A)
            return np.einsum("ij,ij->i", F, F)
        G = self._section_values(A)
        return np.einsum("ij,ij->i", G, G) / self.quadrature_samples


class ScaledKernel(Kernel):
    """b**2 * k for a base kernel k; used for certified reference kernels."""

    def __init__(self, base, scale_b=1.0):
        self.base = base
        self.scale_b = check_positive(scale_b, "scale_b")

    def __call__(self, A, B=None):
        return self.scale_b**2 * self.base(A, B)

    def diag(self, A):
        return self.scale_b**2 * self.base.diag(A)

    def grad_first(self, a, b):
        return self.scale_b**2 * self.base.grad_first(a, b)


def pseudometric(kernel: Kernel, theta, theta_p) -> float:
    """Distance between parameters through the kernel geometry.

    d(a, b) = sqrt(k(a,a) - 2 k(a,b) + k(b,b)).  Tiny negative radicands
    (triangular roundoff) clamp to zero; anything below -1e-12 indicates a
    non-PSD kernel and raises.
    """
    theta, theta_p = check_same_dim(theta, theta_p)
    rad = (
        kernel.value(theta, theta)
        - 2.0 * kernel.value(theta, theta_p)
        + kernel.value(theta_p, theta_p)
    )
    if rad < -_METRIC_TOL:
        raise ValueError(f"negative squared distance {rad}: kernel is not PSD")
    return math.sqrt(max(rad, 0.0))


def rkhs_norm(kernel: Kernel, theta) -> float:
    """Norm of the model section at ``theta``: sqrt(k(theta, theta))."""
    theta = check_vector(theta, "theta")
    return math.sqrt(max(kernel.value(theta, theta), 0.0))


def min_relative_eigenvalue(G: np.ndarray) -> tuple[float, float]:
    """Smallest eigenvalue of a symmetric matrix and the trace scale.

    Returns (lambda_min, trace); callers compare lambda_min against
    -PSD_TOL * trace.
    """
    G = np.asarray(G, dtype=float)
    w = np.linalg.eigvalsh(0.5 * (G + G.T))
    return float(w[0]), float(np.trace(G))


@dataclass(frozen=True)
class CertificateResult:
    """Outcome of a grid domination check.

    A passing certificate is a necessary condition only: it certifies
    positive semidefiniteness of scale**2 * K_ref - K_induced on the tested
    grid, not on the whole domain.
    """

    passed: bool
    scale: float
    min_eigenvalue: float
    threshold: float
    grid_size: int

    def __bool__(self) -> bool:
        return self.passed


def certify_domination(induced: Kernel, reference: Kernel, grid, b: float,
                       tol: float = PSD_TOL) -> CertificateResult:
    """Check b**2 * K_ref - K_induced >= 0 on the grid, up to tolerance.

    Passes when the smallest eigenvalue of the difference Gram matrix is at
    least ``-tol * trace(b**2 K_ref)``.
    """
    b = check_positive(b, "b")
    pts = grid.points
    if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
        raise ValueError("grid contains duplicate points (Gram matrix rank ambiguity)")
    K_ref = reference(pts)
    K_ind = induced(pts)
    M = b**2 * K_ref - K_ind
    lam_min, _ = min_relative_eigenvalue(M)
    scale_trace = float(np.trace(b**2 * K_ref))
    threshold = -tol * scale_trace
    return CertificateResult(
        passed=lam_min >= threshold,
        scale=float(b),
        min_eigenvalue=lam_min,
        threshold=threshold,
        grid_size=pts.shape[0],
    )


def smallest_certified_scale(induced: Kernel, reference: Kernel, grid,
                             lo: float = 2.0**-10, hi: float = 2.0**10,
                             rel_tol: float = 1e-3,
                             tol: float = PSD_TOL) -> CertificateResult:
    """Bisection for the smallest scale passing :func:`certify_domination`.

    Passing is monotone in the scale (larger b only adds a PSD multiple of
    K_ref and loosens the relative threshold), so bisection over
    [lo, hi] is valid.  Raises if even ``hi`` fails.
    """
    if not certify_domination(induced, reference, grid, hi, tol):
        raise ValueError(f"no certified scale in [{lo}, {hi}]: upper end fails")
    if certify_domination(induced, reference, grid, lo, tol):
        return certify_domination(induced, reference, grid, lo, tol)
    b_lo, b_hi = lo, hi
    while b_hi / b_lo > 1.0 + rel_tol:
        mid = math.sqrt(b_lo * b_hi)
        if certify_domination(induced, reference, grid, mid, tol):
            b_hi = mid
        else:
            b_lo = mid
    return certify_domination(induced, reference, grid, b_hi, tol)
