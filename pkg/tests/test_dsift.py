import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from densefv.dsift import (
    DsiftGeometry, box_sum_backward, box_sum_forward, compute_gradient_planes,
    convolve_planes, extract_descriptors, keypoint_grid, normalize_descriptors,
    triangular_filter_1d,
)
from densefv.imgpyr import GrayImage
from densefv.synth import textured_image

from oracles import descriptor_at, direct_triangular


def test_box_sums_small():
    x = [1.0, 2.0, 3.0, 4.0]
    assert box_sum_forward(x, 2).tolist() == [3, 5, 7, 4]
    assert box_sum_backward(x, 2).tolist() == [1, 3, 5, 7]
    assert box_sum_forward([1.0, 1, 1, 1, 1], 3).tolist() == [3, 3, 3, 2, 1]


def test_triangular_impulse():
    assert triangular_filter_1d([0.0, 0, 1, 0, 0], 2).tolist() == [0, 1, 2, 1, 0]
    assert triangular_filter_1d([0.0, 0, 0, 1, 0, 0, 0], 3).tolist() == [0, 1, 2, 3, 2, 1, 0]


def test_window_size_one_is_identity():
    x = np.random.default_rng(0).random(9)
    assert np.array_equal(triangular_filter_1d(x, 1), x)


def test_invalid_window():
    with pytest.raises(ValueError):
        box_sum_forward([1.0], 0)
    with pytest.raises(ValueError):
        triangular_filter_1d([1.0], 0)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 60), st.sampled_from([1, 2, 3, 4, 5, 8]), st.integers(0, 10_000))
def test_triangular_matches_direct(n, f, seed):
    x = np.random.default_rng(seed).random(n)
    np.testing.assert_allclose(triangular_filter_1d(x, f), direct_triangular(x, f), rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.integers(2, 30), st.sampled_from([1, 2, 4]), st.integers(0, 999))
def test_filter_is_linear_and_axis_consistent(h, w, f, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((h, w)), rng.random((h, w))
    np.testing.assert_allclose(triangular_filter_1d(a + 2 * b, f, axis=0),
                               triangular_filter_1d(a, f, axis=0) + 2 * triangular_filter_1d(b, f, axis=0),
                               rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(triangular_filter_1d(a, f, axis=0), triangular_filter_1d(a.T, f).T)


def test_sparse_second_pass_is_bitwise_subset():
    rng = np.random.default_rng(3)
    planes = rng.random((8, 23, 31))
    geom = DsiftGeometry(bin_size=3)
    full = convolve_planes(planes, geom)
    rows, cols = [0, 4, 22, 10], [30, 1, 7, 7]
    part = convolve_planes(planes, geom, rows=rows, cols=cols)
    assert np.array_equal(part, full[:, rows][:, :, cols])


def test_gradient_planes_conserve_magnitude():
    img = textured_image(40, 30, seed=5)
    planes = compute_gradient_planes(img)
    gy, gx = np.gradient(img.data)
    np.testing.assert_allclose(planes.sum(axis=0), np.hypot(gx, gy), rtol=1e-12, atol=1e-15)
    assert planes.min() >= 0.0


def test_gradient_orientation_bins():
    # horizontal ramp: angle 0, all mass in orientation 0
    ramp = GrayImage(np.tile(np.linspace(0, 1, 8), (5, 1)))
    planes = compute_gradient_planes(ramp)
    assert planes[1:].sum() == 0.0 and planes[0].sum() > 0
    # 45 degrees falls exactly on the centre of orientation 1
    yy, xx = np.mgrid[0:6, 0:6]
    diag = GrayImage((xx + yy) / 10.0)
    planes = compute_gradient_planes(diag)
    assert np.allclose(planes[1], np.hypot(0.1, 0.1))


def test_keypoint_grid_rules():
    g = DsiftGeometry()
    xs = keypoint_grid(320, g)
    assert xs[0] == 6 and np.all(np.diff(xs) == 4)
    # every bin centre must be a valid pixel
    assert xs[-1] + g.bin_offsets()[-1] <= 319
    assert xs[-1] + 4 + g.bin_offsets()[-1] > 319
    assert keypoint_grid(10, g).size == 0
    assert keypoint_grid(13, g).tolist() == [6]


@pytest.mark.parametrize("f", [1, 2, 3, 4, 5])
def test_keypoint_grid_in_bounds(f):
    g = DsiftGeometry(bin_size=f, stride=2)
    for n in range(1, 60):
        xs = keypoint_grid(n, g)
        for x in xs:
            c = x + g.bin_offsets()
            assert c.min() >= 0 and c.max() <= n - 1


def test_normalize_descriptors():
    rng = np.random.default_rng(4)
    d = rng.random((20, 128)) ** 4
    d[3] = 0.0
    out, clamped = normalize_descriptors(d, return_clamped=True)
    assert np.all(out[3] == 0.0)
    norms = np.linalg.norm(np.delete(out, 3, 0), axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-12)
    assert clamped.max() <= 0.2
    spike = np.zeros((1, 128))
    spike[0, 5] = 1.0
    assert normalize_descriptors(spike)[0, 5] == 1.0


def test_descriptor_matches_direct_oracle():
    img = textured_image(37, 29, seed=8)
    geom = DsiftGeometry(bin_size=3, stride=5)
    res = extract_descriptors(img, geom, level_scale=0.5)
    planes = compute_gradient_planes(img)
    xs, ys = keypoint_grid(img.width, geom), keypoint_grid(img.height, geom)
    assert len(res) == xs.size * ys.size
    raw = np.array([descriptor_at(planes, int(x), int(y), 3) for x, y in res.keypoints])
    np.testing.assert_allclose(res.descriptors, normalize_descriptors(raw), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(res.original_keypoints, res.keypoints * 2)
    # keypoints are row-major: x varies fastest
    assert res.keypoints[0].tolist() == [xs[0], ys[0]]
    assert res.keypoints[1].tolist() == [xs[1], ys[0]]


def test_descriptor_count_320x240():
    res = extract_descriptors(textured_image(320, 240, seed=0))
    assert res.descriptors.shape == (77 * 57, 128)


def test_too_small_image():
    with pytest.raises(ValueError, match="too small"):
        extract_descriptors(GrayImage(np.zeros((8, 8))))


def test_flat_image_gives_zero_descriptors():
    res = extract_descriptors(GrayImage(np.full((20, 20), 0.5)))
    assert np.all(res.descriptors == 0.0)
