import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from densefv.imgpyr import (
    GrayImage, ImageFormatError, build_pyramid, load_image, pyramid_factors,
    resize_bilinear, save_pgm, scaled_size,
)

from oracles import bilinear_resize


def _write(path, data: bytes):
    path.write_bytes(data)
    return str(path)


def test_factors_nine_and_eight():
    f9 = pyramid_factors(9)
    assert len(f9) == 9
    assert f9[0] == 2.0
    assert f9[-1] == pytest.approx(0.125)
    np.testing.assert_allclose(np.array(f9[1:]) / np.array(f9[:-1]), 1 / np.sqrt(2))
    assert pyramid_factors(8) == f9[1:]
    with pytest.raises(ValueError):
        pyramid_factors(7)


def test_level_sizes_320x240():
    sizes = [(lvl.width, lvl.height) for _, lvl in build_pyramid(GrayImage(np.zeros((240, 320))), 9)]
    assert sizes[0] == (640, 480)
    assert sizes[2] == (320, 240)
    assert sizes[-1] == (40, 30)
    assert sizes[1] == (453, 339)


def test_scaled_size_floor_is_one():
    assert scaled_size(3, 0.125) == 1
    assert scaled_size(4, 0.125) == 1   # 0.5 rounds up
    assert scaled_size(12, 0.125) == 2  # 1.5 rounds up


def test_identity_resize_is_copy():
    img = GrayImage(np.random.default_rng(0).random((5, 7)))
    out = resize_bilinear(img, 7, 5)
    assert np.array_equal(out.data, img.data)
    assert out.data is not img.data


def test_upsample_constant_and_corners():
    img = GrayImage(np.full((3, 4), 0.25))
    assert np.all(resize_bilinear(img, 9, 5).data == 0.25)
    img = GrayImage(np.random.default_rng(1).random((6, 5)))
    out = resize_bilinear(img, 11, 13).data
    for r, c in ((0, 0), (-1, -1), (0, -1), (-1, 0)):
        assert out[r, c] == img.data[r, c]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 20), st.integers(1, 20), st.integers(0, 999))
def test_resize_matches_pointwise_oracle(h, w, nh, nw, seed):
    src = np.random.default_rng(seed).random((h, w))
    out = resize_bilinear(GrayImage(src), nw, nh).data
    ref = bilinear_resize(src, nw, nh)
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)
    assert out.min() >= src.min() and out.max() <= src.max()


def test_bad_target_size():
    with pytest.raises(ValueError):
        resize_bilinear(GrayImage(np.zeros((2, 2))), 0, 3)


def test_gray_image_validation():
    with pytest.raises(ValueError):
        GrayImage(np.array([[1.5]]))
    with pytest.raises(ValueError):
        GrayImage(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        GrayImage(np.array([[np.nan]]))
    img = GrayImage(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        img.data[0, 0] = 1.0


def test_pgm_round_trip(tmp_path):
    q = np.random.default_rng(2).integers(0, 256, (7, 9))
    img = GrayImage(q / 255.0)
    save_pgm(tmp_path / "a.pgm", img)
    assert np.array_equal(load_image(tmp_path / "a.pgm").data, img.data)


def test_pgm_sixteen_bit_big_endian(tmp_path):
    vals = np.array([[0, 256, 65535]], dtype=">u2")
    p = _write(tmp_path / "b.pgm", b"P5\n3 1\n65535\n" + vals.tobytes())
    np.testing.assert_allclose(load_image(p).data, [[0, 256 / 65535, 1]])


def test_ascii_formats_and_luma(tmp_path):
    p = _write(tmp_path / "a.pgm", b"P2\n# comment\n2 1\n10\n0 10\n")
    assert load_image(p).data.tolist() == [[0.0, 1.0]]
    p = _write(tmp_path / "c.ppm", b"P3\n1 1\n255\n255 0 0\n")
    assert load_image(p).data[0, 0] == pytest.approx(0.299)
    p = _write(tmp_path / "d.ppm", b"P6\n1 1\n255\n" + bytes([0, 255, 0]))
    assert load_image(p).data[0, 0] == pytest.approx(0.587)


@pytest.mark.parametrize("payload", [
    b"GIF89a",
    b"P5\n0 4\n255\n",
    b"P5\n2 2\n255\n\x00",
    b"P5\n2 2\n70000\n" + bytes(8),
    b"P2\n2 1\n10\n0 11\n",
    b"P5\n2",
])
def test_malformed_images(tmp_path, payload):
    p = _write(tmp_path / "x.pgm", payload)
    with pytest.raises(ImageFormatError):
        load_image(p)


def test_missing_file_names_path(tmp_path):
    with pytest.raises(ImageFormatError, match="nope.pgm"):
        load_image(tmp_path / "nope.pgm")
