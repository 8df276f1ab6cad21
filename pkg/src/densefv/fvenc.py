"""Fisher vector accumulation, normalisation and the end-to-end encoder."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numba
import numpy as np

from . import _kernels
from .dsift import DsiftGeometry, extract_descriptors
from .embed import EmbeddedDescriptorSet, PcaModel, embed
from .errors import DimensionError
from .gmm import DEFAULT_THRESHOLD, GmmModel, posteriors
from .imgpyr import GrayImage, build_pyramid
from .parallel import worker_threads

__all__ = [
    "EncoderConfig",
    "FisherVector",
    "Encoder",
    "accumulate",
    "accumulate_naive",
    "accumulate_optimized",
    "normalize",
    "encode_image",
    "pooled_descriptors",
    "max_relative_error",
    "NORMALIZATIONS",
    "BACKENDS",
]

NORMALIZATIONS = ("paper_raw", "improved")
BACKENDS = ("naive", "optimized")


@dataclass(frozen=True)
class EncoderConfig:
    chunk_phase1: int = 4
    chunk_phase2: int = 192
    tile_outer_p1: int = 4
    tile_inner_p1: int = 2
    tile_outer_p2: int = 2
    tile_inner_p2: int = 4
    threshold: float = DEFAULT_THRESHOLD
    normalization: str = "improved"
    backend: str = "optimized"
    workers: Optional[int] = None
    # merge per-chunk copies in ascending chunk order (bitwise stable
    # across worker counts); False keeps one copy per worker instead
    deterministic_merge: bool = True

    def __post_init__(self):
        counts = (
            self.chunk_phase1, self.chunk_phase2, self.tile_outer_p1,
            self.tile_inner_p1, self.tile_outer_p2, self.tile_inner_p2,
        )
        if min(counts) < 1:
            raise ValueError("chunk and tile sizes must be >= 1")
        if not 0.0 <= self.threshold < 1.0:
            raise ValueError(f"threshold must lie in [0, 1), got {self.threshold}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if self.workers is not None and self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def skip_group(self) -> int:
        """Posteriors tested together by the grouped early-termination check."""
        return self.tile_outer_p2 * self.tile_inner_p2

    def with_(self, **changes) -> "EncoderConfig":
        return replace(self, **changes)


@dataclass
class FisherVector:
    U: np.ndarray              # (N, M) mean-gradient block
    V: np.ndarray              # (N, M) variance-gradient block
    normalization: str = "paper_raw"
    num_descriptors: int = 0

    @property
    def num_components(self) -> int:
        return self.U.shape[0]

    @property
    def dim(self) -> int:
        return self.U.shape[1]

    def __len__(self):
        return 2 * self.U.size

    def flatten(self) -> np.ndarray:
        """U block (row-major by component) followed by the V block."""
        return np.concatenate([self.U.ravel(), self.V.ravel()])

    @classmethod
    def from_flat(cls, vec, n: int, m: int, normalization: str = "paper_raw", num_descriptors: int = 0):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != 2 * n * m:
            raise DimensionError(f"expected {2 * n * m} values, got {vec.size}")
        return cls(vec[: n * m].reshape(n, m).copy(), vec[n * m:].reshape(n, m).copy(),
                   normalization, num_descriptors)


def _prepare(data, post, model: GmmModel):
    x = np.ascontiguousarray(getattr(data, "rows", data), dtype=np.float64)
    p = np.ascontiguousarray(np.asarray(post), dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise DimensionError(f"descriptor dimension {x.shape[-1]} does not match GMM dimension {model.dim}")
    if p.shape != (x.shape[0], model.num_components):
        raise DimensionError(
            f"posterior shape {p.shape} does not match ({x.shape[0]}, {model.num_components})"
        )
    return x, p


def _threshold(post, threshold, default):
    # explicit argument, then the posterior matrix's own threshold
    if threshold is not None:
        return float(threshold)
    return float(getattr(post, "threshold", default))


def accumulate_naive(data, post, model: GmmModel, threshold: Optional[float] = None) -> FisherVector:
    """Raw U/V sums over descriptors i, then components j, then dimensions k.

    Pairs whose posterior does not exceed the threshold are skipped.
    """
    x, p = _prepare(data, post, model)
    tau = _threshold(post, threshold, DEFAULT_THRESHOLD)
    U = np.zeros((model.num_components, model.dim))
    V = np.zeros_like(U)
    _kernels.phase2_naive(x, p, model.means, model.inv_sqrt_cov, tau, U, V)
    return FisherVector(U, V, "paper_raw", x.shape[0])


def accumulate_optimized(
    data, post, model: GmmModel, cfg: EncoderConfig = EncoderConfig(), threshold: Optional[float] = None,
) -> FisherVector:
    """Chunked accumulation with private per-chunk copies and grouped skips.

    Descriptors are split into chunks of ``cfg.chunk_phase2``; each chunk is
    accumulated into its own U/V copy in tiles of ``tile_outer_p2``
    descriptors by ``tile_inner_p2`` components, and a tile whose posteriors
    are all at or below the threshold is skipped as a whole.  The copies are
    then summed in ascending chunk order.
    """
    x, p = _prepare(data, post, model)
    tau = _threshold(post, threshold, cfg.threshold)
    U = np.zeros((model.num_components, model.dim))
    V = np.zeros_like(U)
    if x.shape[0]:
        with worker_threads(cfg.workers):
            if cfg.deterministic_merge:
                _kernels.phase2_optimized_ordered(
                    x, p, model.means, model.inv_sqrt_cov, tau, U, V,
                    cfg.chunk_phase2, cfg.tile_outer_p2, cfg.tile_inner_p2,
                    numba.get_num_threads(),
                )
            else:
                workers = cfg.workers or numba.get_num_threads()
                _kernels.phase2_optimized_strided(
                    x, p, model.means, model.inv_sqrt_cov, tau, U, V,
                    cfg.chunk_phase2, cfg.tile_outer_p2, cfg.tile_inner_p2, workers,
                )
    return FisherVector(U, V, "paper_raw", x.shape[0])


def accumulate(data, post, model: GmmModel, cfg: EncoderConfig = EncoderConfig()) -> FisherVector:
    if cfg.backend == "naive":
        return accumulate_naive(data, post, model, threshold=cfg.threshold)
    return accumulate_optimized(data, post, model, cfg, threshold=cfg.threshold)


def normalize(fv: FisherVector, mode: str, priors) -> FisherVector:
    """``paper_raw`` returns the sums untouched.  ``improved`` scales U_j by
    1/(T sqrt(pi_j)) and V_j by 1/(T sqrt(2 pi_j)), applies the signed
    square root and L2-normalises the concatenated vector.
    """
    if mode not in NORMALIZATIONS:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
    if mode == "paper_raw":
        return FisherVector(fv.U.copy(), fv.V.copy(), mode, fv.num_descriptors)
    priors = np.asarray(priors, dtype=np.float64)
    if priors.shape != (fv.num_components,):
        raise DimensionError("priors do not match the number of components")
    T = fv.num_descriptors
    if T == 0:
        return FisherVector(np.zeros_like(fv.U), np.zeros_like(fv.V), mode, 0)
    root = np.sqrt(priors)[:, None]
    vec = np.concatenate([(fv.U / (T * root)).ravel(), (fv.V / (T * np.sqrt(2.0) * root)).ravel()])
    vec = np.sign(vec) * np.sqrt(np.abs(vec))
    norm = np.linalg.norm(vec)
    if norm > 0.0:
        vec = vec / norm
    return FisherVector.from_flat(vec, fv.num_components, fv.dim, mode, T)


def max_relative_error(a, b, floor: float = 1e-9) -> Tuple[float, int]:
    """Largest entrywise relative difference and where it occurs.

    The denominator is ``max(|a_i|, |b_i|)`` bounded below by ``floor``
    times the largest magnitude in either vector, so entries that are
    zero up to cancellation are compared on the scale of the vector.
    """
    a = np.asarray(getattr(a, "flatten", lambda: a)(), dtype=np.float64).ravel()
    b = np.asarray(getattr(b, "flatten", lambda: b)(), dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        return 0.0, -1
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)))
    if scale == 0.0:
        return 0.0, -1
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor * scale)
    rel = np.abs(a - b) / den
    idx = int(np.argmax(rel))
    return float(rel[idx]), idx


# --------------------------------------------------------------------------
# End-to-end encoder
# --------------------------------------------------------------------------

def pooled_descriptors(
    img: GrayImage, pca: PcaModel, num_scales: int = 9, geom: DsiftGeometry = DsiftGeometry(),
    timings: Optional[Dict[str, float]] = None,
) -> EmbeddedDescriptorSet:
    """Embedded descriptors from every pyramid level large enough for the grid."""
    t0 = time.perf_counter()
    pyramid = build_pyramid(img, num_scales)
    t1 = time.perf_counter()
    parts = []
    for scale, level in pyramid:
        try:
            raw = extract_descriptors(level, geom, level_scale=scale)
        except ValueError:
            continue  # level too small to host a keypoint
        parts.append(embed(raw, pca, img.width, img.height))
    if not parts:
        raise ValueError(f"image {img.width}x{img.height} too small for any pyramid level")
    pooled = EmbeddedDescriptorSet.concatenate(parts)
    t2 = time.perf_counter()
    if timings is not None:
        timings["pyramid"] = (t1 - t0) * 1e3
        timings["sift"] = (t2 - t1) * 1e3
    return pooled


@dataclass(frozen=True)
class Encoder:
    """PCA + GMM + configuration; immutable and safe to share across threads."""

    pca: PcaModel
    gmm: GmmModel
    cfg: EncoderConfig = EncoderConfig()
    num_scales: int = 9
    geom: DsiftGeometry = field(default_factory=DsiftGeometry)

    def __post_init__(self):
        if self.pca.out_dim != self.gmm.dim:
            raise DimensionError(
                f"PCA output dimension {self.pca.out_dim} (m+2) does not match GMM dimension {self.gmm.dim}"
            )
        if self.num_scales not in (8, 9):
            raise ValueError("num_scales must be 8 or 9")

    def descriptors(self, img: GrayImage, timings=None) -> EmbeddedDescriptorSet:
        return pooled_descriptors(img, self.pca, self.num_scales, self.geom, timings)

    def encode_descriptors(self, data, timings: Optional[Dict[str, float]] = None) -> FisherVector:
        cfg = self.cfg
        t0 = time.perf_counter()
        post = posteriors(
            data, self.gmm, backend=cfg.backend, chunk=cfg.chunk_phase1,
            tile_descriptors=cfg.tile_outer_p1, tile_components=cfg.tile_inner_p1,
            threshold=cfg.threshold, workers=cfg.workers,
        )
        t1 = time.perf_counter()
        raw = accumulate(data, post, self.gmm, cfg)
        t2 = time.perf_counter()
        fv = normalize(raw, cfg.normalization, self.gmm.priors)
        t3 = time.perf_counter()
        if timings is not None:
            timings["posterior"] = (t1 - t0) * 1e3
            timings["accumulate"] = (t2 - t1) * 1e3
            timings["normalize"] = (t3 - t2) * 1e3
        return fv

    def encode(self, img: GrayImage) -> Tuple[FisherVector, Dict[str, float]]:
        timings: Dict[str, float] = {}
        data = self.descriptors(img, timings)
        fv = self.encode_descriptors(data, timings)
        return fv, timings


def encode_image(
    img: GrayImage, pca: PcaModel, gmm: GmmModel, cfg: EncoderConfig = EncoderConfig(), num_scales: int = 9,
) -> Tuple[FisherVector, Dict[str, float]]:
    """Pyramid, dense SIFT, embedding, posteriors, accumulation, normalisation.

    Returns the Fisher vector and per-stage wall times in milliseconds.
    """
    return Encoder(pca, gmm, cfg, num_scales).encode(img)
