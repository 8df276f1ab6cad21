"""Seeded synthetic images and frame sequences for tests and benchmarks."""

from __future__ import annotations

import os
from typing import List, Sequence, Tuple

import numpy as np

from .imgpyr import GrayImage, save_pgm

__all__ = ["textured_image", "scene_frame", "write_frame_sequence", "DEFAULT_ABNORMAL_SPANS"]

# half-open frame index ranges labelled abnormal (1)
DEFAULT_ABNORMAL_SPANS: Tuple[Tuple[int, int], ...] = ((250, 350), (560, 700), (850, 1000))


def _smooth_field(rng: np.random.Generator, h: int, w: int, cells: int) -> np.ndarray:
    coarse = rng.random((cells + 1, cells + 1))
    ys = np.linspace(0, cells, h)
    xs = np.linspace(0, cells, w)
    y0 = np.minimum(ys.astype(int), cells - 1)
    x0 = np.minimum(xs.astype(int), cells - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    c = coarse
    return ((c[y0][:, x0] * (1 - fx) + c[y0][:, x0 + 1] * fx) * (1 - fy)
            + (c[y0 + 1][:, x0] * (1 - fx) + c[y0 + 1][:, x0 + 1] * fx) * fy)


def textured_image(width: int = 320, height: int = 240, seed: int = 0) -> GrayImage:
    """Smooth shading plus blobs, edges and noise: enough structure to give
    every orientation bin some gradient mass."""
    rng = np.random.default_rng(seed)
    img = 0.6 * _smooth_field(rng, height, width, 6)
    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(12):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        r = rng.uniform(4, max(5.0, min(width, height) / 6))
        img += rng.uniform(-0.3, 0.3) * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * r * r))
    for _ in range(6):
        angle = rng.uniform(0, np.pi)
        proj = np.cos(angle) * xx + np.sin(angle) * yy
        img += 0.15 * (proj > rng.uniform(proj.min(), proj.max()))
    img += 0.05 * rng.standard_normal((height, width))
    img -= img.min()
    img /= max(img.max(), 1e-12)
    return GrayImage(img)


def scene_frame(index: int, abnormal: bool, width: int = 64, height: int = 48, seed: int = 0) -> GrayImage:
    """One frame of a synthetic surveillance scene.

    Normal frames show a few soft blobs drifting over a fixed smooth
    background.  Abnormal frames add many small high-contrast streaks with
    random orientation, changing the local gradient statistics.
    """
    background = _smooth_field(np.random.default_rng(seed), height, width, 4)
    rng = np.random.default_rng([seed, index])
    yy, xx = np.mgrid[0:height, 0:width]
    img = 0.5 * background
    for b in range(4):
        cx = (width * (0.2 + 0.2 * b) + 0.7 * index) % width
        cy = height * (0.3 + 0.4 * rng.random())
        img += 0.25 * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * 6.0 ** 2))
    if abnormal:
        for _ in range(40):
            cx, cy = rng.uniform(0, width), rng.uniform(0, height)
            angle = rng.uniform(0, np.pi)
            along = (xx - cx) * np.cos(angle) + (yy - cy) * np.sin(angle)
            across = -(xx - cx) * np.sin(angle) + (yy - cy) * np.cos(angle)
            img += rng.choice([-0.4, 0.4]) * ((np.abs(along) < 5) & (np.abs(across) < 1.0))
    img += 0.02 * rng.standard_normal((height, width))
    return GrayImage(np.clip(img, 0.0, 1.0))


def write_frame_sequence(
    out_dir,
    n_frames: int = 1000,
    abnormal_spans: Sequence[Tuple[int, int]] = DEFAULT_ABNORMAL_SPANS,
    width: int = 64,
    height: int = 48,
    seed: int = 0,
) -> Tuple[List[str], np.ndarray]:
    """Write ``frame_000001.pgm`` ... and ``labels.txt`` into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    labels = np.zeros(n_frames, dtype=np.int64)
    for lo, hi in abnormal_spans:
        labels[max(lo, 0):min(hi, n_frames)] = 1
    paths = []
    for i in range(n_frames):
        path = os.path.join(out_dir, f"frame_{i + 1:06d}.pgm")
        save_pgm(path, scene_frame(i, bool(labels[i]), width, height, seed))
        paths.append(path)
    with open(os.path.join(out_dir, "labels.txt"), "w") as fh:
        fh.writelines(f"{v}\n" for v in labels)
    return paths, labels
