"""Exact single-output Gaussian process inference and hyperparameter fitting.

The posterior object caches one Cholesky factorization of the (noise- and
jitter-augmented) Gram matrix; every prediction reuses it.  Conditioning
repair is bounded: the Gram diagonal receives ``1e-8 * output_scale`` of
jitter on the first factorization failure, doubling up to
``1e-4 * output_scale`` before giving up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.stats import qmc

from .domain import SearchDomain
from .kernels import Kernel, MeanFunction, _as_2d

JITTER_REL_BASE = 1e-8
JITTER_REL_MAX = 1e-4
VAR_CLAMP_REL = 1e-10   # negative variances above this (relative) are numerical noise
VAR_RAISE_REL = 1e-7    # more negative than this signals a real bug

LOG_2PI = math.log(2.0 * math.pi)


class GpNumericsError(RuntimeError):
    """Gram matrix could not be factorized within the jitter budget."""


@dataclass(frozen=True)
class Dataset:
    """Ordered evaluation records (row i is the i-th evaluation) with one shared noise level."""

    X: np.ndarray
    y: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[None, :] if X.size else X.reshape(0, 1)
        y = np.asarray(self.y, dtype=float).ravel()
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y must have the same number of rows")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be nonnegative")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def append(self, x: np.ndarray, y: float) -> "Dataset":
        x = np.asarray(x, dtype=float).ravel()
        X = x[None, :] if self.n == 0 else np.vstack([self.X, x])
        return Dataset(X, np.append(self.y, y), self.noise_variance)


def _chol_with_jitter(A: np.ndarray, scale: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of A + jitter*I, doubling jitter on failure."""
    jitter = JITTER_REL_BASE * scale
    eye = np.eye(A.shape[0])
    while jitter <= JITTER_REL_MAX * scale:
        try:
            return cholesky(A + jitter * eye, lower=True), jitter
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise GpNumericsError(
        f"Gram matrix not positive definite after jitter up to {JITTER_REL_MAX * scale:.3e}"
    )


class GpPosterior:
    """GP posterior conditioned on a dataset, with a cached factorization.

    Immutable after construction; concurrent reads are safe.
    """

    def __init__(self, kernel: Kernel, mean: MeanFunction, dataset: Dataset):
        self.kernel = kernel
        self.mean_fn = mean
        self.dataset = dataset
        n = dataset.n
        if n == 0:
            self._L = None
            self._alpha = None
            self.jitter = 0.0
        else:
            A = kernel(dataset.X) + dataset.noise_variance * np.eye(n)
            self._L, self.jitter = _chol_with_jitter(A, kernel.output_scale)
            resid = dataset.y - mean(dataset.X)
            self._alpha = cho_solve((self._L, True), resid)
        # Variance at/below this floor is numerically indistinguishable from zero.
        self.var_floor = max(VAR_CLAMP_REL * kernel.output_scale, 10.0 * self.jitter)

    # -- predictions ---------------------------------------------------

    def mean(self, X: np.ndarray) -> np.ndarray:
        X = _as_2d(X)
        if self.dataset.n == 0:
            return self.mean_fn(X)
        return self.mean_fn(X) + self.kernel(X, self.dataset.X) @ self._alpha

    def cov(self, X: np.ndarray, X2: np.ndarray | None = None) -> np.ndarray:
        X = _as_2d(X)
        X2m = X if X2 is None else _as_2d(X2)
        prior = self.kernel(X, X2m)
        if self.dataset.n == 0:
            return prior
        V1 = solve_triangular(self._L, self.kernel(self.dataset.X, X), lower=True)
        V2 = V1 if X2 is None else solve_triangular(
            self._L, self.kernel(self.dataset.X, X2m), lower=True
        )
        return prior - V1.T @ V2

    def var(self, X: np.ndarray) -> np.ndarray:
        """Marginal posterior variance, clamped to be nonnegative."""
        X = _as_2d(X)
        if self.dataset.n == 0:
            return self.kernel.diag(X)
        V = solve_triangular(self._L, self.kernel(self.dataset.X, X), lower=True)
        v = self.kernel.diag(X) - np.sum(V * V, axis=0)
        bad = v < -VAR_RAISE_REL * self.kernel.output_scale
        if np.any(bad):
            raise GpNumericsError(f"posterior variance {v[bad].min():.3e} is negative beyond tolerance")
        return np.maximum(v, 0.0)

    def posterior_mean(self, x: np.ndarray) -> float:
        return float(self.mean(x)[0])

    def posterior_cov(self, x: np.ndarray, x2: np.ndarray | None = None) -> float:
        if x2 is None:
            return float(self.var(x)[0])
        return float(self.cov(x, x2)[0, 0])

    # -- gradients -----------------------------------------------------

    def mean_grad(self, x: np.ndarray) -> np.ndarray:
        if self.dataset.n == 0:
            return np.zeros(self.kernel.dim)
        G = self.kernel.grad_x(x, self.dataset.X)  # (n, d)
        return G.T @ self._alpha

    def var_grad(self, x: np.ndarray) -> np.ndarray:
        if self.dataset.n == 0:
            return np.zeros(self.kernel.dim)
        kx = self.kernel(self.dataset.X, np.atleast_2d(x))[:, 0]
        beta = cho_solve((self._L, True), kx)
        G = self.kernel.grad_x(x, self.dataset.X)
        return -2.0 * (G.T @ beta)

    # -- point-set cache for acquisition evaluation ---------------------

    def point_set(self, P: np.ndarray) -> "GpPointSet":
        return GpPointSet(self, P)

    # -- updates ---------------------------------------------------------

    def with_observation(self, x: np.ndarray, y: float) -> "GpPosterior":
        return GpPosterior(self.kernel, self.mean_fn, self.dataset.append(x, y))


class GpPointSet:
    """Per-point-set cache: posterior means plus solves reused across candidates."""

    def __init__(self, gp: GpPosterior, P: np.ndarray):
        self.gp = gp
        self.P = _as_2d(P)
        self.mean = gp.mean(self.P)
        if gp.dataset.n:
            Kxp = gp.kernel(gp.dataset.X, self.P)          # (n, m)
            self._V = solve_triangular(gp._L, Kxp, lower=True)
            self._W = solve_triangular(gp._L.T, self._V, lower=False)  # A^{-1} K(X, P)
        else:
            self._V = self._W = None

    def cov_to(self, x: np.ndarray) -> np.ndarray:
        """Posterior covariance vector K_n(P, x), shape (m,)."""
        gp = self.gp
        k0 = gp.kernel(self.P, np.atleast_2d(x))[:, 0]
        if self._V is None:
            return k0
        vx = solve_triangular(gp._L, gp.kernel(gp.dataset.X, np.atleast_2d(x))[:, 0], lower=True)
        return k0 - self._V.T @ vx

    def cov_to_grad(self, x: np.ndarray) -> np.ndarray:
        """d K_n(P, x) / dx, shape (m, d)."""
        gp = self.gp
        g0 = gp.kernel.grad_x(x, self.P)  # symmetric kernel: d k(p, x)/dx = d k(x, p)/dx
        if self._V is None:
            return g0
        Gx = gp.kernel.grad_x(x, gp.dataset.X)  # (n, d) of d k(x, X)/dx
        return g0 - self._W.T @ Gx


# ----------------------------------------------------------------------
# Marginal likelihood and fitting
# ----------------------------------------------------------------------

def log_marginal_likelihood(kernel: Kernel, mean: MeanFunction, dataset: Dataset) -> float:
    """Log density of the observed targets under the GP prior."""
    if dataset.n == 0:
        raise ValueError("log marginal likelihood needs a non-empty dataset")
    value, _ = _lml_and_grad(kernel, mean, dataset, want_grad=False)
    return value


def _lml_and_grad(
    kernel: Kernel,
    mean: MeanFunction,
    dataset: Dataset,
    want_grad: bool = True,
    fit_noise: bool = False,
):
    """LML and its gradient w.r.t. [log lengthscales, log output_scale,
    constant-mean value (if present), log noise_variance (if fitted)]."""
    n = dataset.n
    A = kernel(dataset.X) + dataset.noise_variance * np.eye(n)
    L, _ = _chol_with_jitter(A, kernel.output_scale)
    resid = dataset.y - mean(dataset.X)
    alpha = cho_solve((L, True), resid)
    lml = -0.5 * resid @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI
    if not want_grad:
        return float(lml), None

    Ainv = cho_solve((L, True), np.eye(n))
    M = np.outer(alpha, alpha) - Ainv
    dK = kernel.grad_log_params(dataset.X)  # (d+1, n, n)
    grads = [0.5 * np.sum(M * dK[i]) for i in range(dK.shape[0])]
    if mean.form == "constant":
        grads.append(float(np.sum(alpha)))
    if fit_noise:
        grads.append(0.5 * dataset.noise_variance * np.trace(M))
    return float(lml), np.array(grads)


@dataclass(frozen=True)
class FitResult:
    kernel: Kernel
    mean: MeanFunction
    noise_variance: float
    log_marginal_likelihood: float
    warning: bool = False


def fit_hyperparameters(
    dataset: Dataset,
    kernel_family: str = "matern52",
    restarts: int = 8,
    seed: int = 0,
    *,
    fit_noise: bool = False,
    domain: SearchDomain | None = None,
    warm_start: FitResult | None = None,
    max_iter: int = 80,
) -> FitResult:
    """Multistart maximum-likelihood fit in log-hyperparameter space.

    Inputs are mapped to the unit cube (via ``domain`` or the data's
    bounding box) and outputs are standardized by training statistics, so
    the box bounds ``[1e-3, 1e3]`` on each log-parameter are relative to
    the data scale.  Restart points come from a scrambled Sobol grid;
    deterministic given ``seed``.  Returned hyperparameters are expressed
    in the original (unstandardized) units.
    """
    if dataset.n < 2:
        raise ValueError("fitting needs at least 2 records")
    X, y = dataset.X, dataset.y
    d = X.shape[1]

    if domain is not None:
        lo, width = domain.lower, domain.width
    else:
        lo = X.min(axis=0)
        width = np.maximum(X.max(axis=0) - lo, 1e-12)
    Xs = (X - lo) / width
    y_mean, y_std = float(np.mean(y)), float(np.std(y))
    if y_std < 1e-12:
        y_std = 1.0
    ys = (y - y_mean) / y_std

    nv_fixed_std = dataset.noise_variance / y_std**2
    n_params = d + 1 + 1 + (1 if fit_noise else 0)  # log ls, log scale, mean c, [log nv]
    lb = np.concatenate([
        np.full(d, math.log(1e-3)), [math.log(1e-3)], [-10.0],
        [math.log(1e-8)] if fit_noise else [],
    ])
    ub = np.concatenate([
        np.full(d, math.log(1e3)), [math.log(1e3)], [10.0],
        [math.log(1e3)] if fit_noise else [],
    ])

    def unpack(theta):
        ker = Kernel(kernel_family, np.exp(theta[:d]), float(np.exp(theta[d])))
        mean = MeanFunction("constant", float(theta[d + 1]))
        nv = float(np.exp(theta[d + 2])) if fit_noise else nv_fixed_std
        return ker, mean, nv

    def neg_lml_and_grad(theta):
        ker, mean, nv = unpack(theta)
        try:
            val, grad = _lml_and_grad(ker, mean, Dataset(Xs, ys, nv), fit_noise=fit_noise)
        except GpNumericsError:
            return 1e12, np.zeros(n_params)
        return -val, -grad

    # Start points: Sobol grid over the box, plus a centered default and
    # any warm start carried over from a previous fit.
    sob = qmc.Sobol(d=n_params, scramble=True, seed=int(seed))
    starts = [lb + sob.random(1)[0] * (ub - lb) for _ in range(max(restarts - 1, 0))]
    default = np.concatenate([
        np.full(d, math.log(0.3)), [0.0], [0.0],
        [math.log(max(nv_fixed_std, 1e-4))] if fit_noise else [],
    ])
    starts.insert(0, default)
    if warm_start is not None:
        ker_w = warm_start.kernel
        theta_w = np.concatenate([
            np.log(ker_w.lengthscales / width), [math.log(ker_w.output_scale / y_std**2)],
            [(warm_start.mean.value - y_mean) / y_std],
            [math.log(max(warm_start.noise_variance / y_std**2, 1e-8))] if fit_noise else [],
        ])
        starts.insert(0, np.clip(theta_w, lb, ub))

    best_theta, best_val, improved = None, np.inf, False
    for theta0 in starts:
        v0, _ = neg_lml_and_grad(theta0)
        if v0 < best_val:
            best_theta, best_val = theta0, v0
        res = minimize(
            neg_lml_and_grad, theta0, jac=True, method="L-BFGS-B",
            bounds=list(zip(lb, ub)), options={"maxiter": max_iter},
        )
        if np.isfinite(res.fun) and res.fun < best_val - 1e-12:
            best_theta, best_val, improved = res.x, res.fun, True

    ker_s, mean_s, nv_s = unpack(best_theta)
    kernel = Kernel(kernel_family, ker_s.lengthscales * width, ker_s.output_scale * y_std**2)
    mean = MeanFunction("constant", y_mean + y_std * mean_s.value)
    return FitResult(
        kernel=kernel,
        mean=mean,
        noise_variance=nv_s * y_std**2,
        log_marginal_likelihood=-best_val,
        warning=not improved,
    )
