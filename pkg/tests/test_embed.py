import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from densefv.dsift import RawDescriptorSet
from densefv.embed import EmbeddedDescriptorSet, PcaModel, embed, train_pca


def _samples(n=500, d=16, seed=0):
    rng = np.random.default_rng(seed)
    scales = np.linspace(3.0, 0.1, d)
    return rng.standard_normal((n, d)) * scales @ np.linalg.qr(rng.standard_normal((d, d)))[0] + 2.0


def test_basis_is_orthonormal_and_sorted():
    x = _samples()
    pca = train_pca(x, 5)
    np.testing.assert_allclose(pca.basis @ pca.basis.T, np.eye(5), atol=1e-12)
    var = np.var(pca.project(x), axis=0, ddof=1)
    assert np.all(np.diff(var) <= 1e-12)
    np.testing.assert_allclose(pca.mean, x.mean(axis=0))


def test_matches_svd_subspace():
    x = _samples(seed=3)
    pca = train_pca(x, 4)
    _, _, vt = np.linalg.svd(x - x.mean(0), full_matrices=False)
    # same vectors up to sign
    np.testing.assert_allclose(np.abs(pca.basis @ vt[:4].T), np.eye(4), atol=1e-8)


def test_sign_convention():
    pca = train_pca(_samples(seed=4), 6)
    pivot = np.argmax(np.abs(pca.basis), axis=1)
    assert np.all(pca.basis[np.arange(6), pivot] > 0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000))
def test_deterministic_and_translation_invariant(seed):
    x = _samples(200, 8, seed)
    a, b = train_pca(x, 3), train_pca(x, 3)
    assert np.array_equal(a.basis, b.basis)
    c = train_pca(x + 5.0, 3)
    np.testing.assert_allclose(np.abs(c.basis), np.abs(a.basis), atol=1e-8)


def test_errors():
    with pytest.raises(ValueError):
        train_pca(_samples(d=8), 8)
    with pytest.raises(ValueError):
        train_pca(_samples(n=3, d=8), 5)
    with pytest.raises(ValueError):
        train_pca(np.ones((50, 8)), 2)
    with pytest.raises(ValueError):
        PcaModel(mean=np.zeros(4), basis=np.zeros((2, 5)))


def test_embed_rows_and_coordinates():
    rng = np.random.default_rng(5)
    pca = train_pca(rng.random((300, 128)), 80)
    kp = np.array([[0.0, 0.0], [10.0, 20.0], [400.0, 5.0]])
    raw = RawDescriptorSet(kp, rng.random((3, 128)), level_scale=0.5)
    out = embed(raw, pca, 320, 240)
    assert out.rows.shape == (3, 82)
    np.testing.assert_allclose(out.rows[:, :80], pca.project(raw.descriptors))
    # level (10, 20) at scale 0.5 is original (20, 40)
    np.testing.assert_allclose(out.rows[1, 80:], [20 / 320, 40 / 240])
    # coordinates are clipped into [0, 1]
    assert out.rows[2, 80] == 1.0
    assert len(EmbeddedDescriptorSet.concatenate([out, out])) == 6


def test_embed_dimension_mismatch():
    pca = train_pca(_samples(d=16), 4)
    with pytest.raises(ValueError):
        embed(RawDescriptorSet(np.zeros((1, 2)), np.zeros((1, 128))), pca, 10, 10)
