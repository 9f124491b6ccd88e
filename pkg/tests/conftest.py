from __future__ import annotations

import numpy as np
import pytest

from greybox_bo import Dataset, GpPosterior, Kernel, MeanFunction


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def separated_points(rng, n, d, min_dist=0.08):
    """Random points in [0,1]^d with a minimum pairwise separation.

    Greedy thinning of a finite uniform pool; relaxes the separation if
    the pool cannot supply n points, so it always terminates.
    """
    pts = []
    while len(pts) < n:
        pool = rng.random((200 * n, d))
        for x in pool:
            if all(np.linalg.norm(x - p) >= min_dist for p in pts):
                pts.append(x)
                if len(pts) == n:
                    break
        min_dist *= 0.5
    return np.array(pts)


def random_gp_instance(seed: int, d: int = 2, n: int = 8, family: str = "matern52",
                       noise: float = 0.0):
    """A GP posterior conditioned on draws from a smooth test function."""
    rng = make_rng(seed)
    X = separated_points(rng, n, d)
    w = rng.normal(size=d)
    y = np.sin(X @ w * 2.0) + 0.3 * np.cos(3.0 * X[:, 0])
    if noise:
        y = y + rng.normal(scale=np.sqrt(noise), size=n)
    kernel = Kernel(family, lengthscales=np.full(d, 0.4), output_scale=1.0)
    gp = GpPosterior(kernel, MeanFunction("zero"), Dataset(X, y, noise))
    return gp, rng


@pytest.fixture
def rng():
    return make_rng(20240817)
