import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from densefv.errors import DimensionError
from densefv.gmm import GmmModel, posteriors, train_gmm

from instances import random_instance
from oracles import posteriors_direct


def _rel(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300))


@pytest.mark.parametrize("seed", range(10))
def test_posteriors_match_direct_density(seed):
    x, g = random_instance(seed, max_t=64)
    ref = posteriors_direct(x, g.priors, g.means, g.covariances)
    got = posteriors(x, g).values
    big = ref > 1e-250
    assert _rel(got[big], ref[big]) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 9), st.integers(1, 5), st.integers(1, 5))
def test_backends_bitwise_equal_for_any_tiling(seed, chunk, ti, tj):
    x, g = random_instance(seed, max_t=80)
    a = posteriors(x, g, backend="naive").values
    b = posteriors(x, g, backend="optimized", chunk=chunk, tile_descriptors=ti, tile_components=tj).values
    assert np.array_equal(a, b)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_rows_are_distributions(seed):
    x, g = random_instance(seed, max_t=100)
    p = posteriors(x, g, backend="optimized").values
    assert p.min() >= 0.0
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_far_outlier_still_normalised():
    _, g = random_instance(1)
    x = np.full((2, g.dim), 1e3)
    p = posteriors(x, g).values
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p.sum(axis=1), 1.0)


def test_worker_count_does_not_change_posteriors():
    x, g = random_instance(7, max_t=512)
    ref = posteriors(x, g, backend="optimized", workers=1).values
    for w in (2, 4, 8):
        assert np.array_equal(posteriors(x, g, backend="optimized", workers=w).values, ref)


def test_posterior_errors():
    _, g = random_instance(2)
    with pytest.raises(DimensionError):
        posteriors(np.zeros((3, g.dim + 1)), g)
    with pytest.raises(ValueError):
        posteriors(np.zeros((3, g.dim)), g, backend="gpu")
    with pytest.raises(ValueError):
        posteriors(np.full((1, g.dim), np.nan), g)
    assert posteriors(np.zeros((0, g.dim)), g).shape == (0, g.num_components)


def test_model_validation():
    with pytest.raises(DimensionError):
        GmmModel(np.ones(2) / 2, np.zeros((2, 3)), np.ones((3, 3)))
    with pytest.raises(ValueError):
        GmmModel(np.ones(1), np.zeros((1, 3)), np.zeros((1, 3)))
    with pytest.raises(ValueError):
        GmmModel(np.zeros(1), np.zeros((1, 3)), np.ones((1, 3)))


def test_log_consts():
    _, g = random_instance(3)
    expect = np.log(g.priors) - 0.5 * (np.log(g.covariances).sum(1) + g.dim * math.log(2 * math.pi))
    np.testing.assert_allclose(g.log_consts, expect, rtol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_em_loglik_non_decreasing(seed):
    x, _ = random_instance(100 + seed, max_t=400, max_n=6, max_m=6)
    n = min(4, x.shape[0])
    g = train_gmm(x, n, seed=seed, max_iters=40)
    h = np.array(g.history)
    assert np.all(np.diff(h) >= -1e-8 * np.maximum(1.0, np.abs(h[:-1])))


def test_em_single_component_closed_form():
    rng = np.random.default_rng(0)
    x = rng.normal(3.0, 2.0, (300, 5))
    g = train_gmm(x, 1, seed=0)
    np.testing.assert_allclose(g.priors, [1.0], atol=1e-12)
    np.testing.assert_allclose(g.means[0], x.mean(0), rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(g.covariances[0], x.var(0), rtol=1e-9, atol=1e-9)


def test_em_deterministic_and_floors():
    rng = np.random.default_rng(5)
    x = np.concatenate([rng.normal(0, 1, (100, 3)), np.zeros((40, 3))])
    a = train_gmm(x, 3, seed=9)
    b = train_gmm(x, 3, seed=9)
    assert np.array_equal(a.means, b.means) and a.history == b.history
    assert a.covariances.min() >= max(1e-6, 1e-4 * x.var(0).min()) * (1 - 1e-12)
    assert abs(a.priors.sum() - 1.0) <= 1e-9
    assert a.priors.min() >= 1e-8 * (1 - 1e-9)


def test_em_errors():
    with pytest.raises(ValueError):
        train_gmm(np.zeros((3, 2)), 4)
    with pytest.raises(ValueError):
        train_gmm(np.zeros((0, 2)), 1)
    with pytest.raises(ValueError):
        train_gmm(np.array([[np.inf, 0.0]]), 1)
