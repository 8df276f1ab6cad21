"""Flat-window dense SIFT.

Spatial binning is done by convolving each orientation plane with a
separable triangular kernel.  The triangular filter is evaluated as two
windowed sums (a forward box sum followed by a backward box sum) so every
output point is an explicit sum of ``f`` inputs, with no running prefix
sums and no subtractions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .imgpyr import GrayImage

__all__ = [
    "DsiftGeometry",
    "RawDescriptorSet",
    "compute_gradient_planes",
    "box_sum_forward",
    "box_sum_backward",
    "triangular_filter_1d",
    "convolve_planes",
    "keypoint_grid",
    "normalize_descriptors",
    "extract_descriptors",
    "DESCRIPTOR_CLAMP",
]

NUM_ORIENTATIONS = 8
NUM_SPATIAL_BINS = 4
DESCRIPTOR_DIM = NUM_ORIENTATIONS * NUM_SPATIAL_BINS * NUM_SPATIAL_BINS
DESCRIPTOR_CLAMP = 0.2


@dataclass(frozen=True)
class DsiftGeometry:
    bin_size: int = 4
    stride: int = 4
    spatial_bins_x: int = NUM_SPATIAL_BINS
    spatial_bins_y: int = NUM_SPATIAL_BINS
    orientation_bins: int = NUM_ORIENTATIONS

    def __post_init__(self):
        if self.bin_size < 1 or self.stride < 1:
            raise ValueError("bin_size and stride must be >= 1")
        if (self.spatial_bins_x, self.spatial_bins_y, self.orientation_bins) != (4, 4, 8):
            raise ValueError("only the 4x4x8 descriptor layout is supported")

    @property
    def descriptor_dim(self) -> int:
        return self.orientation_bins * self.spatial_bins_x * self.spatial_bins_y

    @property
    def margin(self) -> int:
        """Grid origin along each axis, ceil(1.5 * bin_size)."""
        return int(math.ceil(1.5 * self.bin_size))

    def bin_offsets(self) -> np.ndarray:
        """Integer pixel offsets of the four bin centres from a keypoint."""
        off = (np.arange(NUM_SPATIAL_BINS) - 1.5) * self.bin_size
        return np.floor(off + 0.5).astype(np.intp)


@dataclass
class RawDescriptorSet:
    """Descriptors of one pyramid level.

    ``keypoints`` holds (x, y) in level pixel coordinates; divide by
    ``level_scale`` to get original-image coordinates.
    """

    keypoints: np.ndarray
    descriptors: np.ndarray
    level_scale: float = 1.0

    def __len__(self):
        return self.descriptors.shape[0]

    @property
    def original_keypoints(self) -> np.ndarray:
        return self.keypoints / self.level_scale


# --------------------------------------------------------------------------
# Gradients
# --------------------------------------------------------------------------

def compute_gradient_planes(img: GrayImage) -> np.ndarray:
    """Split gradient magnitude into 8 orientation planes, shape (8, H, W).

    Each pixel's magnitude is shared linearly between the two orientation
    centres (at 2*pi*o/8) adjacent to its gradient angle.
    """
    data = img.data
    if data.shape[0] < 2 or data.shape[1] < 2:
        raise ValueError(f"image must be at least 2x2, got {data.shape[1]}x{data.shape[0]}")
    gy, gx = np.gradient(data)
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)

    pos = theta * (NUM_ORIENTATIONS / (2.0 * np.pi))
    lo = np.floor(pos)
    w_hi = pos - lo
    lo = lo.astype(np.intp) % NUM_ORIENTATIONS
    hi = (lo + 1) % NUM_ORIENTATIONS

    planes = np.zeros((NUM_ORIENTATIONS,) + data.shape)
    rows, cols = np.indices(data.shape)
    # lo != hi, so each fancy index below touches every pixel once
    planes[lo, rows, cols] = mag * (1.0 - w_hi)
    planes[hi, rows, cols] += mag * w_hi
    return planes


# --------------------------------------------------------------------------
# 1-D filters
# --------------------------------------------------------------------------

def _shifted(x: np.ndarray, shift: int, axis: int) -> np.ndarray:
    """x[i + shift] along ``axis`` with zeros outside the array."""
    out = np.zeros_like(x)
    n = x.shape[axis]
    if abs(shift) >= n:
        return out
    src = [slice(None)] * x.ndim
    dst = [slice(None)] * x.ndim
    if shift >= 0:
        src[axis] = slice(shift, n)
        dst[axis] = slice(0, n - shift)
    else:
        src[axis] = slice(0, n + shift)
        dst[axis] = slice(-shift, n)
    out[tuple(dst)] = x[tuple(src)]
    return out


def box_sum_forward(signal, f: int, axis: int = -1) -> np.ndarray:
    """out[i] = sum_{k<f} in[i + k], zero past the end."""
    if f < 1:
        raise ValueError("window length must be >= 1")
    x = np.asarray(signal, dtype=np.float64)
    out = x.copy()
    for k in range(1, f):
        out += _shifted(x, k, axis)
    return out


def box_sum_backward(signal, f: int, axis: int = -1) -> np.ndarray:
    """out[i] = sum_{k<f} in[i - k], zero before the start."""
    if f < 1:
        raise ValueError("window length must be >= 1")
    x = np.asarray(signal, dtype=np.float64)
    out = x.copy()
    for k in range(1, f):
        out += _shifted(x, -k, axis)
    return out


def _pad_front(x: np.ndarray, n: int, axis: int) -> np.ndarray:
    if n == 0:
        return x
    width = [(0, 0)] * x.ndim
    width[axis] = (n, 0)
    return np.pad(x, width)


def triangular_filter_1d(signal, f: int, axis: int = -1) -> np.ndarray:
    """Zero-padded convolution with the kernel w_d = f - |d|, |d| < f.

    The forward sum is evaluated on a domain extended by f-1 leading zeros
    so the backward sum never reads a truncated window; the extension is
    cropped afterwards.
    """
    if f < 1:
        raise ValueError("filter size must be >= 1")
    x = np.asarray(signal, dtype=np.float64)
    axis = axis % x.ndim
    padded = _pad_front(x, f - 1, axis)
    out = box_sum_backward(box_sum_forward(padded, f, axis), f, axis)
    keep = [slice(None)] * x.ndim
    keep[axis] = slice(f - 1, None)
    return out[tuple(keep)]


def _triangular_at(x: np.ndarray, f: int, idx: np.ndarray) -> np.ndarray:
    """triangular_filter_1d(x, f, axis=-1)[..., idx] without the full pass.

    Performs the same additions in the same order as the full path, so the
    sampled values are bit-identical.
    """
    padded = _pad_front(x, f - 1, -1)
    padded = np.concatenate([padded, np.zeros(x.shape[:-1] + (f - 1,))], axis=-1)
    # forward sums over the whole extended row are cheap (contiguous slices);
    # only the backward pass is restricted to the sampled positions
    n = padded.shape[-1] - (f - 1)
    fwd = padded[..., :n].copy()
    for m in range(1, f):
        fwd += padded[..., m:m + n]
    idx = np.asarray(idx, dtype=np.intp)
    # backward term k reads forward output at extended index i + f - 1 - k
    out = fwd[..., idx + (f - 1)]
    for k in range(1, f):
        out += fwd[..., idx + (f - 1 - k)]
    return out


def convolve_planes(
    planes: np.ndarray,
    geom: DsiftGeometry,
    rows: Optional[Sequence[int]] = None,
    cols: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Separable triangular filtering: along columns, then along rows.

    With ``rows``/``cols`` given, the second (row) pass is evaluated only on
    that sub-grid and an array of shape (P, len(rows), len(cols)) is
    returned; its values equal the corresponding entries of the full result.
    """
    planes = np.asarray(planes, dtype=np.float64)
    if planes.size == 0:
        raise ValueError("planes must be non-empty")
    f = geom.bin_size
    first = triangular_filter_1d(planes, f, axis=-2)
    if rows is None and cols is None:
        return triangular_filter_1d(first, f, axis=-1)
    if rows is not None:
        first = first[..., np.asarray(rows, dtype=np.intp), :]
    if cols is None:
        return triangular_filter_1d(first, f, axis=-1)
    return _triangular_at(first, f, np.asarray(cols, dtype=np.intp))


# --------------------------------------------------------------------------
# Descriptors
# --------------------------------------------------------------------------

def keypoint_grid(length: int, geom: DsiftGeometry) -> np.ndarray:
    """Keypoint positions along one axis.

    Starts at ceil(1.5 f) and stops at the last position whose outermost
    bin centre is still a valid pixel.
    """
    start = geom.margin
    last = length - 1 - int(geom.bin_offsets()[-1])
    if last < start:
        return np.zeros(0, dtype=np.intp)
    return np.arange(start, last + 1, geom.stride, dtype=np.intp)


def normalize_descriptors(desc: np.ndarray, return_clamped: bool = False):
    """L2-normalise, clamp at 0.2, renormalise. All-zero rows stay zero."""
    desc = np.asarray(desc, dtype=np.float64)
    norm = np.linalg.norm(desc, axis=1, keepdims=True)
    safe = np.where(norm > 0.0, norm, 1.0)
    clamped = np.minimum(desc / safe, DESCRIPTOR_CLAMP)
    norm2 = np.linalg.norm(clamped, axis=1, keepdims=True)
    out = clamped / np.where(norm2 > 0.0, norm2, 1.0)
    if return_clamped:
        return out, clamped
    return out


def extract_descriptors(
    img: GrayImage,
    geom: DsiftGeometry = DsiftGeometry(),
    level_scale: float = 1.0,
) -> RawDescriptorSet:
    xs = keypoint_grid(img.width, geom)
    ys = keypoint_grid(img.height, geom)
    if xs.size == 0 or ys.size == 0:
        raise ValueError(
            f"image {img.width}x{img.height} too small for a {geom.bin_size}-pixel bin grid"
        )
    off = geom.bin_offsets()
    # sample positions: keypoint-major, bin-minor
    sample_x = (xs[:, None] + off[None, :]).ravel()
    sample_y = (ys[:, None] + off[None, :]).ravel()

    planes = compute_gradient_planes(img)
    conv = convolve_planes(planes, geom, rows=sample_y, cols=sample_x)
    # conv[o, (ky, by), (kx, bx)] -> desc[ky, kx, o, by, bx]
    conv = conv.reshape(NUM_ORIENTATIONS, ys.size, NUM_SPATIAL_BINS, xs.size, NUM_SPATIAL_BINS)
    desc = conv.transpose(1, 3, 0, 2, 4).reshape(ys.size * xs.size, DESCRIPTOR_DIM)
    desc = normalize_descriptors(desc)

    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    keypoints = np.column_stack([gx.ravel(), gy.ravel()]).astype(np.float64)
    return RawDescriptorSet(keypoints=keypoints, descriptors=desc, level_scale=level_scale)
