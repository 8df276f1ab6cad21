"""Image loading and the multi-scale pyramid fed to dense SIFT."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

__all__ = [
    "GrayImage",
    "ScalePyramid",
    "ImageFormatError",
    "load_image",
    "save_pgm",
    "resize_bilinear",
    "pyramid_factors",
    "scaled_size",
    "build_pyramid",
]

# BT.601 luma weights
LUMA = np.array([0.299, 0.587, 0.114])


class ImageFormatError(ValueError):
    """Raised for unreadable, malformed or unsupported image files."""


@dataclass(frozen=True)
class GrayImage:
    """Grayscale image, row-major, values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class ScalePyramid:
    levels: List[Tuple[float, GrayImage]] = field(default_factory=list)

    def __len__(self):
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)

    @property
    def factors(self) -> List[float]:
        return [s for s, _ in self.levels]


# --------------------------------------------------------------------------
# PNM I/O
# --------------------------------------------------------------------------

def _read_header(buf: bytes, ntokens: int) -> Tuple[List[bytes], int]:
    tokens: List[bytes] = []
    pos = 0
    n = len(buf)
    while len(tokens) < ntokens:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise ImageFormatError("truncated PNM header")
        if buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from binary samples
    if pos >= n or not buf[pos:pos + 1].isspace():
        if tokens[0] in (b"P5", b"P6"):
            raise ImageFormatError("truncated PNM header")
    return tokens, pos + 1


def load_image(path) -> GrayImage:
    """Read a PGM/PPM file (binary P5/P6, or ASCII P2/P3) as a GrayImage.

    Colour images are reduced with BT.601 luma weights; samples are divided
    by the file's maxval.
    """
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise ImageFormatError(f"cannot read image {path!r}: {exc}") from exc

    magic = buf[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise ImageFormatError(f"{path!r}: unsupported image format (expected PGM/PPM)")
    try:
        tokens, offset = _read_header(buf, 4)
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise ImageFormatError(f"{path!r}: malformed PNM header") from exc
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path!r}: zero-dimension image ({width}x{height})")
    if not 1 <= maxval <= 65535:
        raise ImageFormatError(f"{path!r}: maxval {maxval} out of range")

    channels = 3 if magic in (b"P3", b"P6") else 1
    count = width * height * channels
    if magic in (b"P5", b"P6"):
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        raw = buf[offset:offset + need]
        if len(raw) < need:
            raise ImageFormatError(f"{path!r}: truncated pixel data")
        samples = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    else:
        try:
            samples = np.array(buf[offset - 1:].split()[:count], dtype=np.float64)
        except ValueError as exc:
            raise ImageFormatError(f"{path!r}: malformed ASCII samples") from exc
        if samples.size < count:
            raise ImageFormatError(f"{path!r}: truncated pixel data")

    if np.any(samples > maxval):
        raise ImageFormatError(f"{path!r}: sample exceeds maxval")
    if channels == 3:
        samples = samples.reshape(height, width, 3) @ LUMA
    else:
        samples = samples.reshape(height, width)
    return GrayImage(np.clip(samples / maxval, 0.0, 1.0))


def save_pgm(path, img: GrayImage, maxval: int = 255) -> None:
    """Write a binary PGM (P5). Values are rounded to the nearest level."""
    q = np.floor(img.data * maxval + 0.5)
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii"))
        fh.write(q.astype(dtype).tobytes())


# --------------------------------------------------------------------------
# Resampling
# --------------------------------------------------------------------------

def _axis_weights(src_len: int, dst_len: int):
    # align-corners mapping: src = dst * (src_len - 1) / (dst_len - 1)
    if dst_len > 1:
        pos = np.arange(dst_len) * ((src_len - 1) / (dst_len - 1))
    else:
        pos = np.zeros(1)
    lo = np.clip(np.floor(pos).astype(np.intp), 0, src_len - 1)
    hi = np.minimum(lo + 1, src_len - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(img: GrayImage, new_w: int, new_h: int) -> GrayImage:
    """Bilinear resize with align-corners mapping and edge clamping."""
    if new_w < 1 or new_h < 1:
        raise ValueError(f"target size must be >= 1x1, got {new_w}x{new_h}")
    src = img.data
    if (new_w, new_h) == (img.width, img.height):
        return GrayImage(src.copy())

    x0, x1, fx = _axis_weights(img.width, new_w)
    y0, y1, fy = _axis_weights(img.height, new_h)
    fx = fx[None, :]
    fy = fy[:, None]
    top = src[y0][:, x0] * (1.0 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1.0 - fx) + src[y1][:, x1] * fx
    out = top * (1.0 - fy) + bottom * fy
    # convex combinations can still drift by an ulp outside the source range
    return GrayImage(np.clip(out, src.min(), src.max()))


# --------------------------------------------------------------------------
# Pyramid
# --------------------------------------------------------------------------

def pyramid_factors(num_scales: int) -> List[float]:
    """Scale factors 2, sqrt(2), 1, ..., 1/8; the 8-scale set drops the 2x level."""
    if num_scales not in (8, 9):
        raise ValueError(f"num_scales must be 8 or 9, got {num_scales}")
    step = 1.0 / math.sqrt(2.0)
    factors = [2.0 * step ** k for k in range(9)]
    return factors[9 - num_scales:]


def scaled_size(length: int, factor: float) -> int:
    # round half up; the small epsilon absorbs factors like 2*(1/sqrt2)^2 != 1
    return max(1, int(math.floor(length * factor + 0.5 + 1e-9)))


def build_pyramid(img: GrayImage, num_scales: int = 9) -> ScalePyramid:
    levels = []
    for factor in pyramid_factors(num_scales):
        w = scaled_size(img.width, factor)
        h = scaled_size(img.height, factor)
        levels.append((factor, resize_bilinear(img, w, h)))
    return ScalePyramid(levels)
