"""Multi-output Gaussian processes over vector-valued functions.

Four prior structures over h: X -> R^k are supported:

* ``IndependentOutputs`` — k unrelated single-output GPs.
* ``IntrinsicCoregionalization`` — Cov(h_j(x), h_l(x')) = Sigma[j, l] * K'(x, x')
  with a PSD coupling matrix Sigma.
* ``LatentFactorMultiFidelity`` — the target output (last index) is one GP and
  every other output adds an independent bias GP on top of it, so lower
  fidelities equal the target plus independent model discrepancies.
* ``AugmentedInputModel`` — outputs are slices h(., w_j) of one smooth function
  on an extended input space; the tag maps to an extra input coordinate with
  its own lengthscale.

Posteriors condition jointly on tagged rows (x_i, j_i, y_i); partial
observations (not every output at every x) are first-class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .domain import SearchDomain, rng_from_seed
from .gp import (
    Dataset,
    FitResult,
    GpNumericsError,
    VAR_RAISE_REL,
    _chol_with_jitter,
    fit_hyperparameters,
)
from .kernels import Kernel, MeanFunction, _as_2d


@dataclass(frozen=True)
class TaggedDataset:
    """Evaluation rows (x_i, output tag j_i, y_i, cost_i) with per-output noise."""

    X: np.ndarray
    tags: np.ndarray
    y: np.ndarray
    costs: np.ndarray | None = None
    noise_variances: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[None, :] if X.size else X.reshape(0, 1)
        tags = np.asarray(self.tags, dtype=int).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        costs = (
            np.zeros(len(y)) if self.costs is None
            else np.asarray(self.costs, dtype=float).ravel()
        )
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "tags", tags)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "costs", costs)
        if not (X.shape[0] == tags.shape[0] == y.shape[0] == costs.shape[0]):
            raise ValueError("X, tags, y, costs must have matching lengths")
        if np.any(costs < 0):
            raise ValueError("costs must be nonnegative")
        if np.any(tags < 0):
            raise ValueError("tags must be nonnegative output indices")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def noise_for(self, k: int) -> np.ndarray:
        if self.noise_variances is None:
            return np.zeros(k)
        nv = np.asarray(self.noise_variances, dtype=float).ravel()
        if nv.shape[0] != k:
            raise ValueError("noise_variances must have one entry per output")
        if np.any(nv < 0):
            raise ValueError("noise variances must be nonnegative")
        return nv

    def append(self, x: np.ndarray, tag: int, y: float, cost: float = 0.0) -> "TaggedDataset":
        x = np.asarray(x, dtype=float).ravel()
        X = x[None, :] if self.n == 0 else np.vstack([self.X, x])
        return TaggedDataset(
            X,
            np.append(self.tags, tag),
            np.append(self.y, y),
            np.append(self.costs, cost),
            self.noise_variances,
        )


# ----------------------------------------------------------------------
# Prior structures
# ----------------------------------------------------------------------

class MultiOutputModel:
    """Interface shared by all multi-output prior structures."""

    k: int

    def mean_vec(self, x) -> np.ndarray:
        raise NotImplementedError

    def mean_rows(self, X, tags) -> np.ndarray:
        x2d = _as_2d(X)
        out = np.empty(x2d.shape[0])
        for j in np.unique(tags):
            sel = tags == j
            out[sel] = np.array([self.mean_vec(x)[j] for x in x2d[sel]])
        return out

    def cov_rows(self, X1, t1, X2, t2) -> np.ndarray:
        raise NotImplementedError

    def grad_x2_rows(self, X1, t1, x, j) -> np.ndarray:
        """d Cov((X1,t1), (x,j)) / dx, shape (n, d)."""
        raise NotImplementedError

    def prior_var_vec(self) -> np.ndarray:
        raise NotImplementedError

    def typical_scale(self) -> float:
        return float(np.max(self.prior_var_vec()))

    def block(self, x, x2=None) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        x2 = x if x2 is None else np.asarray(x2, dtype=float).ravel()
        k = self.k
        P1 = np.tile(x, (k, 1))
        P2 = np.tile(x2, (k, 1))
        idx = np.arange(k)
        return self.cov_rows(P1, idx, P2, idx)


class IndependentOutputs(MultiOutputModel):
    def __init__(self, kernels: list[Kernel], means: list[MeanFunction]):
        if len(kernels) != len(means):
            raise ValueError("need one mean per kernel")
        self.kernels = list(kernels)
        self.means = list(means)
        self.k = len(kernels)

    def mean_vec(self, x):
        return np.array([m.at(x) for m in self.means])

    def cov_rows(self, X1, t1, X2, t2):
        X1, X2 = _as_2d(X1), _as_2d(X2)
        out = np.zeros((X1.shape[0], X2.shape[0]))
        for j in range(self.k):
            s1, s2 = t1 == j, t2 == j
            if np.any(s1) and np.any(s2):
                out[np.ix_(s1, s2)] = self.kernels[j](X1[s1], X2[s2])
        return out

    def grad_x2_rows(self, X1, t1, x, j):
        X1 = _as_2d(X1)
        out = np.zeros((X1.shape[0], self.kernels[0].dim))
        sel = t1 == j
        if np.any(sel):
            out[sel] = self.kernels[j].grad_x(x, X1[sel])
        return out

    def prior_var_vec(self):
        return np.array([k.output_scale for k in self.kernels])


class IntrinsicCoregionalization(MultiOutputModel):
    def __init__(self, coupling: np.ndarray, base_kernel: Kernel,
                 means: list[MeanFunction] | None = None):
        coupling = np.asarray(coupling, dtype=float)
        if coupling.ndim != 2 or coupling.shape[0] != coupling.shape[1]:
            raise ValueError("coupling must be square")
        if not np.allclose(coupling, coupling.T, atol=1e-12):
            raise ValueError("coupling must be symmetric")
        if np.linalg.eigvalsh(coupling).min() < -1e-10:
            raise ValueError("coupling must be positive semidefinite")
        self.coupling = coupling
        self.base_kernel = base_kernel
        self.k = coupling.shape[0]
        self.means = means or [MeanFunction("zero")] * self.k

    def mean_vec(self, x):
        return np.array([m.at(x) for m in self.means])

    def cov_rows(self, X1, t1, X2, t2):
        return self.coupling[np.ix_(np.asarray(t1), np.asarray(t2))] * self.base_kernel(X1, X2)

    def grad_x2_rows(self, X1, t1, x, j):
        G = self.base_kernel.grad_x(x, X1)
        return self.coupling[np.asarray(t1), j][:, None] * G

    def prior_var_vec(self):
        return np.diag(self.coupling) * self.base_kernel.output_scale


class LatentFactorMultiFidelity(MultiOutputModel):
    """Target output (last index) plus independent additive bias per lower output."""

    def __init__(self, bias_kernels: list[Kernel], bias_means: list[MeanFunction],
                 target_kernel: Kernel, target_mean: MeanFunction):
        if len(bias_kernels) != len(bias_means):
            raise ValueError("need one bias mean per bias kernel")
        self.bias_kernels = list(bias_kernels)
        self.bias_means = list(bias_means)
        self.target_kernel = target_kernel
        self.target_mean = target_mean
        self.k = len(bias_kernels) + 1

    @property
    def target(self) -> int:
        return self.k - 1

    def mean_vec(self, x):
        base = self.target_mean.at(x)
        out = np.full(self.k, base)
        for j, m in enumerate(self.bias_means):
            out[j] += m.at(x)
        return out

    def cov_rows(self, X1, t1, X2, t2):
        X1, X2 = _as_2d(X1), _as_2d(X2)
        t1, t2 = np.asarray(t1), np.asarray(t2)
        out = self.target_kernel(X1, X2)
        for j in range(self.k - 1):
            s1, s2 = t1 == j, t2 == j
            if np.any(s1) and np.any(s2):
                out[np.ix_(s1, s2)] += self.bias_kernels[j](X1[s1], X2[s2])
        return out

    def grad_x2_rows(self, X1, t1, x, j):
        X1 = _as_2d(X1)
        out = self.target_kernel.grad_x(x, X1)
        if j != self.target:
            sel = np.asarray(t1) == j
            if np.any(sel):
                out[sel] += self.bias_kernels[j].grad_x(x, X1[sel])
        return out

    def prior_var_vec(self):
        v = np.full(self.k, self.target_kernel.output_scale)
        for j, ker in enumerate(self.bias_kernels):
            v[j] += ker.output_scale
        return v


class AugmentedInputModel(MultiOutputModel):
    """Tags index slices of one GP on (x, w); w gets its own lengthscale."""

    def __init__(self, kernel: Kernel, mean: MeanFunction, tag_values: np.ndarray):
        self.kernel = kernel  # defined on d+1 input dims
        self.mean = mean
        self.tag_values = np.asarray(tag_values, dtype=float).ravel()
        self.k = self.tag_values.shape[0]

    def _augment(self, X, tags):
        X = _as_2d(X)
        return np.hstack([X, self.tag_values[np.asarray(tags)][:, None]])

    def mean_vec(self, x):
        return np.full(self.k, self.mean.at(x))

    def cov_rows(self, X1, t1, X2, t2):
        return self.kernel(self._augment(X1, t1), self._augment(X2, t2))

    def grad_x2_rows(self, X1, t1, x, j):
        xa = np.append(np.asarray(x, dtype=float).ravel(), self.tag_values[j])
        G = self.kernel.grad_x(xa, self._augment(X1, t1))
        return G[:, :-1]

    def prior_var_vec(self):
        return np.full(self.k, self.kernel.output_scale)


# ----------------------------------------------------------------------
# Posterior
# ----------------------------------------------------------------------

def _psd_factor(C: np.ndarray) -> np.ndarray:
    """Lower-triangular-ish factor F with F F^T = C for PSD C (eig fallback)."""
    if not np.any(C):
        return np.zeros_like(C)
    try:
        return cholesky(C, lower=True)
    except np.linalg.LinAlgError:
        w, U = np.linalg.eigh(C)
        w = np.clip(w, 0.0, None)
        return U * np.sqrt(w)[None, :]


class MoGpPosterior:
    """Joint posterior over all outputs given tagged rows."""

    def __init__(self, model: MultiOutputModel, data: TaggedDataset):
        self.model = model
        self.data = data
        self.noise = data.noise_for(model.k)
        n = data.n
        if n == 0:
            self._L = None
            self._alpha = None
            self.jitter = 0.0
        else:
            G = model.cov_rows(data.X, data.tags, data.X, data.tags)
            G = G + np.diag(self.noise[data.tags])
            self._L, self.jitter = _chol_with_jitter(G, model.typical_scale())
            resid = data.y - model.mean_rows(data.X, data.tags)
            self._alpha = cho_solve((self._L, True), resid)
        self.var_floor = max(1e-10 * model.typical_scale(), 10.0 * self.jitter)

    @property
    def k(self) -> int:
        return self.model.k

    # -- core cross-covariance helpers ---------------------------------

    def _rows_vs_point(self, x) -> np.ndarray:
        """Prior covariances between training rows and all outputs at x, (n, k)."""
        d = self.data
        P = np.tile(np.asarray(x, dtype=float).ravel(), (self.k, 1))
        return self.model.cov_rows(d.X, d.tags, P, np.arange(self.k))

    def mean_vec(self, x) -> np.ndarray:
        mu = self.model.mean_vec(x)
        if self.data.n == 0:
            return mu
        return mu + self._rows_vs_point(x).T @ self._alpha

    def cov_block(self, x, x2=None) -> np.ndarray:
        prior = self.model.block(x, x2)
        if self.data.n == 0:
            return prior
        V1 = solve_triangular(self._L, self._rows_vs_point(x), lower=True)
        V2 = V1 if x2 is None else solve_triangular(self._L, self._rows_vs_point(x2), lower=True)
        out = prior - V1.T @ V2
        if x2 is None:
            bad = np.diag(out) < -VAR_RAISE_REL * self.model.typical_scale()
            if np.any(bad):
                raise GpNumericsError("negative posterior variance beyond tolerance")
            np.fill_diagonal(out, np.maximum(np.diag(out), 0.0))
        return out

    def mean_cov(self, x) -> tuple[np.ndarray, np.ndarray]:
        return self.mean_vec(x), self.cov_block(x)

    def var_out(self, x, j: int) -> float:
        return float(self.cov_block(x)[j, j])

    # -- gradients -------------------------------------------------------

    def mean_vec_grad(self, x) -> np.ndarray:
        """(k, d) gradient of the posterior mean vector."""
        d_in = _as_2d(self.data.X).shape[1] if self.data.n else len(np.ravel(x))
        if self.data.n == 0:
            return np.zeros((self.k, d_in))
        return np.stack([
            self.model.grad_x2_rows(self.data.X, self.data.tags, x, j).T @ self._alpha
            for j in range(self.k)
        ])

    def cov_block_grad(self, x) -> np.ndarray:
        """(k, k, d) gradient of K_n(x, x); prior diagonal blocks are constant."""
        x = np.asarray(x, dtype=float).ravel()
        d_in = x.shape[0]
        out = np.zeros((self.k, self.k, d_in))
        if self.data.n == 0:
            return out
        W = cho_solve((self._L, True), self._rows_vs_point(x))  # (n, k)
        D = np.stack([
            self.model.grad_x2_rows(self.data.X, self.data.tags, x, j)
            for j in range(self.k)
        ])  # (k, n, d)
        for j in range(self.k):
            for l in range(self.k):
                out[j, l] = -(D[j].T @ W[:, l] + D[l].T @ W[:, j])
        return out

    # -- updates ---------------------------------------------------------

    def with_row(self, x, tag: int, y: float, cost: float = 0.0) -> "MoGpPosterior":
        return MoGpPosterior(self.model, self.data.append(x, tag, y, cost))


def mo_posterior(model: MultiOutputModel, data: TaggedDataset) -> MoGpPosterior:
    """Condition the prior jointly on all observed rows (partial rows included)."""
    return MoGpPosterior(model, data)


def mo_mean_cov(post: MoGpPosterior, x) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean vector and k x k covariance at x (variance clamped)."""
    return post.mean_cov(x)


def cholesky_of_cov(post: MoGpPosterior, x) -> np.ndarray:
    """Lower factor C(x) with C C^T = K_n(x,x) (+ escalated jitter if needed).

    Outputs whose posterior variance sits at the numerical floor are treated
    as fully determined: their rows/columns of the factor are exactly zero.
    """
    K = post.cov_block(x)
    diag = np.diag(K).copy()
    live = diag > post.var_floor
    C = np.zeros_like(K)
    if not np.any(live):
        return C
    sub = K[np.ix_(live, live)]
    try:
        C_sub = cholesky(sub, lower=True)
    except np.linalg.LinAlgError:
        C_sub, _ = _chol_with_jitter(sub, float(np.max(np.diag(sub))))
    C[np.ix_(live, live)] = C_sub
    return C


def cholesky_grad(C: np.ndarray, dK: np.ndarray) -> np.ndarray:
    """Derivatives of the lower Cholesky factor given dK of shape (k, k, d).

    Fails on degenerate factors (zeroed rows from the variance floor).
    """
    k = C.shape[0]
    if np.any(np.abs(np.diag(C)) < 1e-300):
        raise GpNumericsError("Cholesky derivative undefined at degenerate covariance")
    out = np.zeros_like(dK)
    Cinv = solve_triangular(C, np.eye(k), lower=True)
    for i in range(dK.shape[2]):
        S = Cinv @ dK[:, :, i] @ Cinv.T
        Phi = np.tril(S, -1) + 0.5 * np.diag(np.diag(S))
        out[:, :, i] = C @ Phi
    return out


# ----------------------------------------------------------------------
# Linear functionals and joint sampling
# ----------------------------------------------------------------------

class LinearFunctionalView:
    """Single-output posterior view of p^T h under a multi-output posterior."""

    def __init__(self, post: MoGpPosterior, p: np.ndarray):
        p = np.asarray(p, dtype=float).ravel()
        if p.shape[0] != post.k:
            raise ValueError("weight vector length must equal the output count")
        if not np.all(np.isfinite(p)):
            raise ValueError("weights must be finite")
        self.post = post
        self.p = p
        self.k = 1
        self.var_floor = post.var_floor * max(float(p @ p), 1e-300)

    def mean(self, X) -> np.ndarray:
        X = _as_2d(X)
        return np.array([self.p @ self.post.mean_vec(x) for x in X])

    def cov(self, X, X2=None) -> np.ndarray:
        X = _as_2d(X)
        X2m = X if X2 is None else _as_2d(X2)
        out = np.empty((X.shape[0], X2m.shape[0]))
        for a, xa in enumerate(X):
            for b, xb in enumerate(X2m):
                out[a, b] = self.p @ self.post.cov_block(xa, xb) @ self.p
        return out

    def var(self, X) -> np.ndarray:
        X = _as_2d(X)
        return np.maximum(
            np.array([self.p @ self.post.cov_block(x) @ self.p for x in X]), 0.0
        )

    def posterior_mean(self, x) -> float:
        return float(self.p @ self.post.mean_vec(x))

    def posterior_cov(self, x, x2=None) -> float:
        x2 = x if x2 is None else x2
        return float(self.p @ self.post.cov_block(x, x2) @ self.p)

    def mean_grad(self, x) -> np.ndarray:
        return self.post.mean_vec_grad(x).T @ self.p

    def var_grad(self, x) -> np.ndarray:
        dK = self.post.cov_block_grad(x)
        return np.einsum("j,jld,l->d", self.p, dK, self.p)

    # views compose: a functional of a scalar view is a scaling
    def mean_vec(self, x) -> np.ndarray:
        return np.array([self.posterior_mean(x)])

    def cov_block(self, x, x2=None) -> np.ndarray:
        return np.array([[self.posterior_cov(x, x2)]])

    def mean_vec_grad(self, x) -> np.ndarray:
        return self.mean_grad(x)[None, :]

    def cov_block_grad(self, x) -> np.ndarray:
        return self.var_grad(x)[None, None, :]


def linear_functional_posterior(post, p) -> LinearFunctionalView:
    """Posterior over the scalar functional p^T h."""
    return LinearFunctionalView(post, p)


def sample_joint(post: MoGpPosterior, points, n_samples: int, seed: int) -> np.ndarray:
    """Exact joint draws of h over the given points, shape (n_samples, m, k)."""
    P = _as_2d(points)
    m, k = P.shape[0], post.k
    mu = np.concatenate([post.mean_vec(x) for x in P])
    C = np.empty((m * k, m * k))
    for a in range(m):
        for b in range(m):
            C[a * k:(a + 1) * k, b * k:(b + 1) * k] = post.cov_block(P[a], P[b])
    C = 0.5 * (C + C.T)
    # entries at the numerical variance floor are fully determined
    dead = np.diag(C) <= post.var_floor
    C[dead, :] = 0.0
    C[:, dead] = 0.0
    F = _psd_factor(C)
    z = rng_from_seed(seed, stream=7).standard_normal((n_samples, m * k))
    draws = mu[None, :] + z @ F.T
    return draws.reshape(n_samples, m, k)


# ----------------------------------------------------------------------
# Fitting
# ----------------------------------------------------------------------

def fit_independent_outputs(
    data: TaggedDataset, k: int, kernel_family: str = "matern52",
    restarts: int = 8, seed: int = 0, *, domain: SearchDomain | None = None,
    fit_noise: bool = False, warm_start: list[FitResult] | None = None,
) -> tuple[IndependentOutputs, np.ndarray, list[FitResult]]:
    """Fit one GP per output on its own rows; returns model + noise vector."""
    kernels, means, noises, fits = [], [], [], []
    base_noise = data.noise_for(k)
    for j in range(k):
        sel = data.tags == j
        fit = fit_hyperparameters(
            Dataset(data.X[sel], data.y[sel], base_noise[j]),
            kernel_family, restarts=restarts, seed=seed + j,
            fit_noise=fit_noise, domain=domain,
            warm_start=warm_start[j] if warm_start else None,
        )
        kernels.append(fit.kernel)
        means.append(fit.mean)
        noises.append(fit.noise_variance)
        fits.append(fit)
    return IndependentOutputs(kernels, means), np.array(noises), fits


def fit_augmented_input(
    data: TaggedDataset, tag_values, kernel_family: str = "matern52",
    restarts: int = 8, seed: int = 0, *, domain: SearchDomain | None = None,
    fit_noise: bool = False, warm_start: FitResult | None = None,
) -> tuple[AugmentedInputModel, np.ndarray, FitResult]:
    """Fit a single GP on (x, w) rows; the tag coordinate gets its own lengthscale."""
    tag_values = np.asarray(tag_values, dtype=float).ravel()
    k = tag_values.shape[0]
    Xa = np.hstack([data.X, tag_values[data.tags][:, None]])
    nv = data.noise_for(k)
    if np.ptp(nv) > 0:
        raise ValueError("augmented-input fitting assumes one shared noise level")
    aug_domain = None
    if domain is not None:
        w_lo, w_hi = float(tag_values.min()), float(tag_values.max())
        if w_hi <= w_lo:
            w_hi = w_lo + 1.0
        aug_domain = SearchDomain(
            np.append(domain.lower, w_lo), np.append(domain.upper, w_hi)
        )
    fit = fit_hyperparameters(
        Dataset(Xa, data.y, float(nv[0])), kernel_family, restarts=restarts,
        seed=seed, fit_noise=fit_noise, domain=aug_domain, warm_start=warm_start,
    )
    model = AugmentedInputModel(fit.kernel, fit.mean, tag_values)
    return model, np.full(k, fit.noise_variance), fit


def _standardize_tagged(data: TaggedDataset, domain: SearchDomain | None):
    if domain is not None:
        lo, width = domain.lower, domain.width
    else:
        lo = data.X.min(axis=0)
        width = np.maximum(data.X.max(axis=0) - lo, 1e-12)
    y_mean, y_std = float(np.mean(data.y)), float(np.std(data.y))
    if y_std < 1e-12:
        y_std = 1.0
    Xs = (data.X - lo) / width
    ys = (data.y - y_mean) / y_std
    return Xs, ys, lo, width, y_mean, y_std


def _tagged_lml(model: MultiOutputModel, Xs, tags, ys, noise_vec) -> float:
    G = model.cov_rows(Xs, tags, Xs, tags) + np.diag(noise_vec[tags])
    L, _ = _chol_with_jitter(G, model.typical_scale())
    resid = ys - model.mean_rows(Xs, tags)
    alpha = cho_solve((L, True), resid)
    return float(
        -0.5 * resid @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * len(ys) * np.log(2 * np.pi)
    )


def fit_latent_factor_mf(
    data: TaggedDataset, k: int, kernel_family: str = "matern52",
    restarts: int = 4, seed: int = 0, *, domain: SearchDomain | None = None,
    fit_noise: bool = False,
) -> tuple[LatentFactorMultiFidelity, np.ndarray]:
    """Joint MLE over target GP + per-output bias GPs (numeric gradients)."""
    Xs, ys, lo, width, y_mean, y_std = _standardize_tagged(data, domain)
    d = Xs.shape[1]
    base_noise = data.noise_for(k) / y_std**2
    n_bias = k - 1
    # theta: [target: log ls (d), log scale, const] + per bias [log ls (d), log scale, const] + [log nv?]
    blk = d + 2
    n_par = blk * k + (1 if fit_noise else 0)

    def unpack(theta):
        t = theta[:blk]
        tgt_ker = Kernel(kernel_family, np.exp(t[:d]), float(np.exp(t[d])))
        tgt_mean = MeanFunction("constant", float(t[d + 1]))
        bks, bms = [], []
        for j in range(n_bias):
            b = theta[blk * (j + 1): blk * (j + 2)]
            bks.append(Kernel(kernel_family, np.exp(b[:d]), float(np.exp(b[d]))))
            bms.append(MeanFunction("constant", float(b[d + 1])))
        model = LatentFactorMultiFidelity(bks, bms, tgt_ker, tgt_mean)
        nv = np.full(k, np.exp(theta[-1])) if fit_noise else base_noise
        return model, nv

    def neg(theta):
        model, nv = unpack(theta)
        try:
            return -_tagged_lml(model, Xs, data.tags, ys, nv)
        except GpNumericsError:
            return 1e12

    lb = np.tile(np.concatenate([np.full(d, np.log(1e-3)), [np.log(1e-3)], [-10.0]]), k)
    ub = np.tile(np.concatenate([np.full(d, np.log(1e3)), [np.log(1e3)], [10.0]]), k)
    if fit_noise:
        lb, ub = np.append(lb, np.log(1e-8)), np.append(ub, np.log(1e3))
    default = np.tile(np.concatenate([np.full(d, np.log(0.3)), [0.0], [0.0]]), k)
    # bias processes start small: lower fidelities are presumed informative
    for j in range(n_bias):
        default[blk * (j + 1) + d] = np.log(0.1)
    if fit_noise:
        default = np.append(default, np.log(1e-4))

    rng = rng_from_seed(seed, stream=3)
    starts = [default] + [lb + rng.random(n_par) * (ub - lb) for _ in range(max(restarts - 1, 0))]
    best_theta, best_val = None, np.inf
    for theta0 in starts:
        v0 = neg(theta0)
        if v0 < best_val:
            best_theta, best_val = theta0, v0
        res = minimize(neg, theta0, method="L-BFGS-B", bounds=list(zip(lb, ub)),
                       options={"maxiter": 60})
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = res.x, res.fun

    model_s, nv_s = unpack(best_theta)
    # de-standardize
    tgt = Kernel(kernel_family, model_s.target_kernel.lengthscales * width,
                 model_s.target_kernel.output_scale * y_std**2)
    tgt_mean = MeanFunction("constant", y_mean + y_std * model_s.target_mean.value)
    bks = [Kernel(kernel_family, bk.lengthscales * width, bk.output_scale * y_std**2)
           for bk in model_s.bias_kernels]
    bms = [MeanFunction("constant", y_std * bm.value) for bm in model_s.bias_means]
    return LatentFactorMultiFidelity(bks, bms, tgt, tgt_mean), nv_s * y_std**2


def fit_intrinsic_coregionalization(
    data: TaggedDataset, k: int, kernel_family: str = "matern52",
    restarts: int = 4, seed: int = 0, *, domain: SearchDomain | None = None,
    fit_noise: bool = False,
) -> tuple[IntrinsicCoregionalization, np.ndarray]:
    """Joint MLE with the coupling parameterized as L L^T (L lower, log diagonal)."""
    Xs, ys, lo, width, y_mean, y_std = _standardize_tagged(data, domain)
    d = Xs.shape[1]
    base_noise = data.noise_for(k) / y_std**2
    tril_idx = np.tril_indices(k)
    n_tril = len(tril_idx[0])
    n_par = d + n_tril + 1 + (1 if fit_noise else 0)  # ls, L entries, shared const, [nv]

    def unpack(theta):
        ker = Kernel(kernel_family, np.exp(theta[:d]), 1.0)
        Lm = np.zeros((k, k))
        vals = theta[d:d + n_tril].copy()
        Lm[tril_idx] = vals
        np.fill_diagonal(Lm, np.exp(np.diag(Lm)))
        coupling = Lm @ Lm.T
        means = [MeanFunction("constant", float(theta[d + n_tril]))] * k
        model = IntrinsicCoregionalization(coupling, ker, means)
        nv = np.full(k, np.exp(theta[-1])) if fit_noise else base_noise
        return model, nv

    def neg(theta):
        try:
            model, nv = unpack(theta)
            return -_tagged_lml(model, Xs, data.tags, ys, nv)
        except (GpNumericsError, ValueError):
            return 1e12

    lb = np.concatenate([np.full(d, np.log(1e-3)), np.full(n_tril, -6.0), [-10.0]])
    ub = np.concatenate([np.full(d, np.log(1e3)), np.full(n_tril, 6.0), [10.0]])
    if fit_noise:
        lb, ub = np.append(lb, np.log(1e-8)), np.append(ub, np.log(1e3))
    default = np.zeros(n_par)
    default[:d] = np.log(0.3)
    if fit_noise:
        default[-1] = np.log(1e-4)

    rng = rng_from_seed(seed, stream=4)
    starts = [default] + [lb + rng.random(n_par) * (ub - lb) for _ in range(max(restarts - 1, 0))]
    best_theta, best_val = None, np.inf
    for theta0 in starts:
        v0 = neg(theta0)
        if v0 < best_val:
            best_theta, best_val = theta0, v0
        res = minimize(neg, theta0, method="L-BFGS-B", bounds=list(zip(lb, ub)),
                       options={"maxiter": 60})
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = res.x, res.fun

    model_s, nv_s = unpack(best_theta)
    ker = Kernel(kernel_family, model_s.base_kernel.lengthscales * width, 1.0)
    coupling = model_s.coupling * y_std**2
    means = [MeanFunction("constant", y_mean + y_std * m.value) for m in model_s.means]
    return IntrinsicCoregionalization(coupling, ker, means), nv_s * y_std**2
