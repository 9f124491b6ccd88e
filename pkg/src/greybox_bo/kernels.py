"""Stationary covariance functions and prior mean functions."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

KERNEL_FAMILIES = ("matern52", "se")

_SQRT5 = np.sqrt(5.0)


def _as_2d(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    return X


@dataclass(frozen=True)
class Kernel:
    """Stationary kernel with ARD lengthscales.

    ``output_scale`` is the prior variance, so ``k(x, x) == output_scale``
    for every x.  Supported families: ``"matern52"`` (default choice
    throughout the library) and ``"se"`` (squared exponential).
    """

    family: str
    lengthscales: np.ndarray
    output_scale: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if np.any(ls <= 0) or not np.all(np.isfinite(ls)):
            raise ValueError("lengthscales must be positive and finite")
        if self.output_scale <= 0 or not np.isfinite(self.output_scale):
            raise ValueError("output_scale must be positive and finite")

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]

    def with_params(self, **kwargs) -> "Kernel":
        return replace(self, **kwargs)

    # -- evaluation ----------------------------------------------------

    def __call__(self, X: np.ndarray, X2: np.ndarray | None = None) -> np.ndarray:
        """Covariance matrix between two point sets, shape (n, m)."""
        X = _as_2d(X)
        X2 = X if X2 is None else _as_2d(X2)
        D = (X[:, None, :] - X2[None, :, :]) / self.lengthscales
        r2 = np.sum(D * D, axis=-1)
        if self.family == "se":
            return self.output_scale * np.exp(-0.5 * r2)
        r = np.sqrt(r2)
        u = _SQRT5 * r
        return self.output_scale * (1.0 + u + u * u / 3.0) * np.exp(-u)

    def diag(self, X: np.ndarray) -> np.ndarray:
        X = _as_2d(X)
        return np.full(X.shape[0], self.output_scale)

    # -- derivatives ---------------------------------------------------

    def grad_x(self, x: np.ndarray, X2: np.ndarray) -> np.ndarray:
        """d k(x, x2) / dx for one query point against rows of X2, shape (m, d).

        Both families are differentiable everywhere, including at r = 0
        where the gradient is zero.
        """
        x = np.asarray(x, dtype=float).ravel()
        X2 = _as_2d(X2)
        D = (x[None, :] - X2) / self.lengthscales  # (m, d)
        if self.family == "se":
            k = self.output_scale * np.exp(-0.5 * np.sum(D * D, axis=-1))
            return -k[:, None] * D / self.lengthscales
        r = np.sqrt(np.sum(D * D, axis=-1))
        u = _SQRT5 * r
        # dk/dr = -(5 s r / 3)(1 + sqrt5 r) e^{-sqrt5 r}; the 1/r in dr/dx cancels.
        coef = -(5.0 * self.output_scale / 3.0) * (1.0 + u) * np.exp(-u)
        return coef[:, None] * D / self.lengthscales

    def grad_log_params(self, X: np.ndarray, X2: np.ndarray | None = None) -> np.ndarray:
        """Stack of dK/d(log lengthscale_i), i=1..d, then dK/d(log output_scale).

        Shape (d + 1, n, m).  Used by the marginal-likelihood gradient.
        """
        X = _as_2d(X)
        X2 = X if X2 is None else _as_2d(X2)
        D = (X[:, None, :] - X2[None, :, :]) / self.lengthscales
        D2 = D * D
        r2 = np.sum(D2, axis=-1)
        out = np.empty((self.dim + 1,) + r2.shape)
        if self.family == "se":
            K = self.output_scale * np.exp(-0.5 * r2)
            for i in range(self.dim):
                out[i] = K * D2[..., i]
        else:
            r = np.sqrt(r2)
            u = _SQRT5 * r
            e = np.exp(-u)
            K = self.output_scale * (1.0 + u + u * u / 3.0) * e
            coef = (5.0 * self.output_scale / 3.0) * (1.0 + u) * e
            for i in range(self.dim):
                out[i] = coef * D2[..., i]
        out[self.dim] = K
        return out


@dataclass(frozen=True)
class MeanFunction:
    """Prior mean: identically zero or a fitted constant."""

    form: str = "zero"
    value: float = 0.0

    def __post_init__(self):
        if self.form not in ("zero", "constant"):
            raise ValueError(f"unknown mean form {self.form!r}")

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = _as_2d(X)
        c = 0.0 if self.form == "zero" else self.value
        return np.full(X.shape[0], c)

    def at(self, x: np.ndarray) -> float:
        return 0.0 if self.form == "zero" else self.value
