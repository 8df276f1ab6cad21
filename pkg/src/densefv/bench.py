"""Per-stage timing of encoder variants with a cross-backend equivalence gate."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import platform
import statistics
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numba
import numpy as np

from .embed import PcaModel
from .errors import EquivalenceError
from .fvenc import Encoder, EncoderConfig, FisherVector, max_relative_error
from .gmm import GmmModel
from .imgpyr import GrayImage, load_image

__all__ = ["BenchVariant", "VariantTiming", "BenchReport", "run_bench", "default_variants",
           "machine_descriptor", "fv_hash", "PUBLISHED_TIMINGS", "STAGES"]

STAGES = ("pyramid", "sift", "phase1", "phase2", "normalize")
_STAGE_KEYS = {"pyramid": "pyramid", "sift": "sift", "phase1": "posterior",
               "phase2": "accumulate", "normalize": "normalize"}

# published figures, shown for context only
PUBLISHED_TIMINGS = {
    "voc_avg_ms_per_image": 77.58,
    "umn_ms_per_frame": 34.0,
    "gpu_speedup_vs_1thread_cpu": 12.68,
}

EQUIVALENCE_TOL = 1e-5


@dataclass(frozen=True)
class BenchVariant:
    name: str
    cfg: EncoderConfig = EncoderConfig()
    num_scales: int = 9


@dataclass
class VariantTiming:
    name: str
    backend: str
    num_scales: int
    workers: Optional[int]
    stage_ms: Dict[str, float]
    total_ms: float
    encode_ms: float            # phase1 + phase2 + normalize
    fv_hashes: List[str]


@dataclass
class BenchReport:
    variants: List[VariantTiming]
    speedups: Dict[str, float]
    equivalence_max_error: float
    equivalence_index: int
    machine: str
    reps: int
    images: List[str]
    published_reference: Dict[str, float] = field(default_factory=lambda: dict(PUBLISHED_TIMINGS))

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    def to_lines(self) -> List[str]:
        lines = [f"machine={self.machine}", f"reps={self.reps}", f"images={len(self.images)}",
                 f"equivalence_max_rel_error={self.equivalence_max_error:.3e}"]
        for v in self.variants:
            for stage in STAGES:
                lines.append(f"{v.name}.{stage}_ms={v.stage_ms[stage]:.3f}")
            lines.append(f"{v.name}.encode_ms={v.encode_ms:.3f}")
            lines.append(f"{v.name}.total_ms={v.total_ms:.3f}")
            lines.append(f"{v.name}.fv_hash={v.fv_hashes[0]}")
        for key, val in self.speedups.items():
            lines.append(f"speedup.{key}={val:.4f}")
        for key, val in self.published_reference.items():
            lines.append(f"published.{key}={val}")
        return lines

    def render(self) -> str:
        return "\n".join(self.to_lines() + ["--- json ---", self.to_json()]) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "backend", "num_scales", *STAGES, "encode", "total"])
            for v in self.variants:
                w.writerow([v.name, v.backend, v.num_scales,
                            *(f"{v.stage_ms[s]:.4f}" for s in STAGES),
                            f"{v.encode_ms:.4f}", f"{v.total_ms:.4f}"])


def machine_descriptor() -> str:
    return (f"{platform.machine()} {platform.processor() or 'cpu'} cores={os.cpu_count()} "
            f"numba_threads={numba.config.NUMBA_NUM_THREADS} python={platform.python_version()} "
            f"numpy={np.__version__} numba={numba.__version__}")


def fv_hash(fv: FisherVector) -> str:
    return hashlib.sha256(np.ascontiguousarray(fv.flatten()).tobytes()).hexdigest()[:16]


def default_variants(workers: Optional[int] = None) -> List[BenchVariant]:
    base = EncoderConfig(workers=workers)
    return [
        BenchVariant("naive9", base.with_(backend="naive"), 9),
        BenchVariant("optimized9", base.with_(backend="optimized"), 9),
        BenchVariant("naive8", base.with_(backend="naive"), 8),
        BenchVariant("optimized8", base.with_(backend="optimized"), 8),
    ]


def _as_variant(v: Union[BenchVariant, EncoderConfig], i: int) -> BenchVariant:
    if isinstance(v, BenchVariant):
        return v
    return BenchVariant(f"{v.backend}{i}", v, 9)


def _as_image(item) -> GrayImage:
    return item if isinstance(item, GrayImage) else load_image(item)


def _check_equivalence(images, variants, pca, gmm, tol):
    """Compare each optimized variant with a naive run of the same settings."""
    worst, worst_idx = 0.0, -1
    for v in variants:
        if v.cfg.backend != "optimized":
            continue
        ref = Encoder(pca, gmm, v.cfg.with_(backend="naive"), v.num_scales)
        enc = Encoder(pca, gmm, v.cfg, v.num_scales)
        for img in images:
            desc = enc.descriptors(img)
            err, idx = max_relative_error(enc.encode_descriptors(desc), ref.encode_descriptors(desc))
            if err > tol:
                raise EquivalenceError(err, idx, tol)
            if err > worst:
                worst, worst_idx = err, idx
    return worst, worst_idx


def _speedups(timings: List[VariantTiming]) -> Dict[str, float]:
    out: Dict[str, float] = {}
    by_key = {(t.backend, t.num_scales, t.workers): t for t in timings}
    for t in timings:
        if t.backend != "optimized":
            continue
        naive = by_key.get(("naive", t.num_scales, t.workers))
        if naive is None:
            continue
        out[f"{t.name}_vs_{naive.name}.encode"] = naive.encode_ms / t.encode_ms
        out[f"{t.name}_vs_{naive.name}.total"] = naive.total_ms / t.total_ms
    for t in timings:
        if t.num_scales != 8:
            continue
        nine = by_key.get((t.backend, 9, t.workers))
        if nine is None:
            continue
        before = nine.total_ms - nine.stage_ms["pyramid"]
        after = t.total_ms - t.stage_ms["pyramid"]
        out[f"{t.name}_vs_{nine.name}.sift_encode_reduction"] = 1.0 - after / before
    encode = [v for k, v in out.items() if k.endswith(".encode")]
    if encode:
        out["speedup"] = min(encode)
        out["sanity_speedup_ge_1"] = float(min(encode) >= 1.0)
    return out


def run_bench(
    images: Sequence,
    variants: Optional[Sequence[Union[BenchVariant, EncoderConfig]]] = None,
    reps: int = 3,
    pca: Optional[PcaModel] = None,
    gmm: Optional[GmmModel] = None,
    tolerance: float = EQUIVALENCE_TOL,
) -> BenchReport:
    """Time each variant on every image and report per-stage medians.

    Equivalence of every optimized variant with the naive backend is checked
    first; on a violation :class:`EquivalenceError` is raised and nothing is
    reported.  Each variant is warmed up once, then run ``reps`` times per
    image; stage times are summed over images and the median over reps kept.
    """
    if not images:
        raise ValueError("at least one image is required")
    if reps < 3:
        raise ValueError("reps must be >= 3")
    if pca is None or gmm is None:
        raise ValueError("PCA and GMM models are required")
    names = [os.fspath(i) if not isinstance(i, GrayImage) else f"<image {i.width}x{i.height}>"
             for i in images]
    imgs = [_as_image(i) for i in images]
    vs = [_as_variant(v, i) for i, v in enumerate(variants or default_variants())]

    max_err, max_idx = _check_equivalence(imgs, vs, pca, gmm, tolerance)

    results = []
    for v in vs:
        enc = Encoder(pca, gmm, v.cfg, v.num_scales)
        enc.encode(imgs[0])  # warm-up (JIT, caches)
        per_rep: List[Dict[str, float]] = []
        hashes: List[str] = []
        for _ in range(reps):
            acc = dict.fromkeys(STAGES, 0.0)
            digest = hashlib.sha256()
            for img in imgs:
                fv, t = enc.encode(img)
                for stage in STAGES:
                    acc[stage] += t[_STAGE_KEYS[stage]]
                digest.update(fv_hash(fv).encode())
            per_rep.append(acc)
            hashes.append(digest.hexdigest()[:16])
        stage_ms = {s: statistics.median(r[s] for r in per_rep) for s in STAGES}
        total = statistics.median(sum(r.values()) for r in per_rep)
        encode = statistics.median(r["phase1"] + r["phase2"] + r["normalize"] for r in per_rep)
        results.append(VariantTiming(v.name, v.cfg.backend, v.num_scales, v.cfg.workers,
                                     stage_ms, total, encode, hashes))

    return BenchReport(results, _speedups(results), max_err, max_idx, machine_descriptor(), reps, names)
