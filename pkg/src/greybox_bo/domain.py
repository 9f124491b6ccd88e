"""Search domains (hyperrectangles) and seeded point generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc


def rng_from_seed(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; distinct ``stream`` values give independent streams."""
    return np.random.Generator(np.random.Philox(key=(int(seed) << 16) + int(stream)))


@dataclass(frozen=True)
class SearchDomain:
    """Axis-aligned box domain with strictly ordered bounds."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size < 1:
            raise ValueError("lower/upper must be 1-d arrays of equal length")
        if not np.all(lo < hi):
            raise ValueError("require lower[i] < upper[i] for all i")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x: np.ndarray, atol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float).ravel()
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def to_unit(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.lower) / self.width

    def from_unit(self, U: np.ndarray) -> np.ndarray:
        return self.lower + np.asarray(U, dtype=float) * self.width

    def sample_sobol(self, n: int, seed: int) -> np.ndarray:
        """n points from a seeded scrambled Sobol sequence, shape (n, d)."""
        sob = qmc.Sobol(d=self.dim, scramble=True, seed=int(seed))
        return self.from_unit(sob.random(n))

    def sample_uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.from_unit(rng.random((n, self.dim)))

    def bounds_list(self) -> list[tuple[float, float]]:
        return [(float(lo), float(hi)) for lo, hi in zip(self.lower, self.upper)]
