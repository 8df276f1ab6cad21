"""Seeded random GMM problems shared by several test modules."""

import numpy as np

from densefv.gmm import GmmModel


def random_instance(seed, max_t=512, max_n=16, max_m=16):
    """Descriptors drawn near the components of a random diagonal GMM."""
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, max_t + 1))
    N = int(rng.integers(1, max_n + 1))
    M = int(rng.integers(1, max_m + 1))
    priors = rng.dirichlet(np.ones(N)) * 0.9 + 0.1 / N
    means = rng.normal(0.0, 1.5, (N, M))
    var = rng.uniform(0.3, 2.0, (N, M))
    comp = rng.choice(N, size=T, p=priors / priors.sum())
    x = means[comp] + rng.standard_normal((T, M)) * np.sqrt(var[comp])
    return x, GmmModel(priors=priors / priors.sum(), means=means, covariances=var)
