"""Command-line entry point: ``densefv <command> ...``.

Exit codes: 0 success, 2 usage error, 3 data or dimension error,
4 backend equivalence failure.  ``FV_WORKERS`` sets the default for
``--workers``.
"""

from __future__ import annotations

import argparse
import os
import re
import sys
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, TextIO

import numpy as np

from . import formats
from .bench import BenchVariant, default_variants, run_bench
from .classify import auc, train_linear
from .dsift import DsiftGeometry, extract_descriptors
from .embed import DEFAULT_PCA_DIM, train_pca
from .errors import DimensionError, EquivalenceError
from .fvenc import NORMALIZATIONS, Encoder, EncoderConfig, max_relative_error, pooled_descriptors
from .gmm import DEFAULT_COMPONENTS, DEFAULT_THRESHOLD, train_gmm
from .imgpyr import GrayImage, build_pyramid, load_image, save_pgm
from .parallel import WORKERS_ENV, default_workers
from .synth import textured_image, write_frame_sequence

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_EQUIVALENCE = 4

RAW_DIM = DsiftGeometry().descriptor_dim


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _require_files(paths: Sequence[str]) -> None:
    for p in paths:
        if not os.path.isfile(p):
            raise FileNotFoundError(f"no such file: {p}")


def _workers(args) -> Optional[int]:
    if getattr(args, "workers", None) is not None:
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        return args.workers
    if os.environ.get(WORKERS_ENV):
        return default_workers()
    return None


def _encoder_config(args) -> EncoderConfig:
    return EncoderConfig(
        backend=args.backend,
        normalization=args.normalization,
        threshold=args.threshold,
        workers=_workers(args),
        deterministic_merge=not args.strided_merge,
    )


def _raw_descriptors(img: GrayImage, num_scales: int):
    """Pooled 128-D descriptors and their original-image (x, y)."""
    rows, pos = [], []
    for scale, level in build_pyramid(img, num_scales):
        try:
            raw = extract_descriptors(level, level_scale=scale)
        except ValueError:
            continue
        rows.append(raw.descriptors)
        pos.append(raw.original_keypoints)
    if not rows:
        raise ValueError(f"image {img.width}x{img.height} too small for any pyramid level")
    return np.concatenate(rows), np.concatenate(pos)


def _load_rows(paths: Sequence[str], dim: Optional[int] = None) -> np.ndarray:
    _require_files(paths)
    parts = []
    for p in paths:
        rows, _ = formats.load_descriptors(p)
        if dim is not None and rows.shape[1] != dim:
            raise DimensionError(f"{p}: descriptor dimension {rows.shape[1]}, expected {dim}")
        parts.append(rows)
    if len({r.shape[1] for r in parts}) > 1:
        raise DimensionError("descriptor files have different dimensions")
    return np.concatenate(parts)


def _subsample(rows: np.ndarray, limit: Optional[int], seed: int) -> np.ndarray:
    if limit is None or rows.shape[0] <= limit:
        return rows
    idx = np.sort(np.random.default_rng(seed).choice(rows.shape[0], size=limit, replace=False))
    return rows[idx]


def _load_vector(path: str) -> np.ndarray:
    _require_files([path])
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"FV01":
        return formats.load_fv(path).flatten()
    return formats.load_fv_text(path)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_extract(args) -> int:
    _require_files(args.images)
    pca = formats.load_pca(args.pca) if args.pca else None
    rows, pos = [], []
    for path in args.images:
        img = load_image(path)
        if pca is None:
            r, p = _raw_descriptors(img, args.scales)
        else:
            emb = pooled_descriptors(img, pca, args.scales)
            r, p = emb.rows, emb.positions
        rows.append(r)
        pos.append(p)
    rows, pos = np.concatenate(rows), np.concatenate(pos)
    formats.save_descriptors(args.out, rows, pos)
    print(f"descriptors={rows.shape[0]} dim={rows.shape[1]} out={args.out}")
    return EXIT_OK


def cmd_train_pca(args) -> int:
    if not 1 <= args.m < RAW_DIM:
        raise UsageError(f"-m must be in [1, {RAW_DIM - 1}], got {args.m}")
    rows = _subsample(_load_rows(args.descriptors, RAW_DIM), args.max_samples, args.seed)
    pca = train_pca(rows, args.m)
    formats.save_pca(args.out, pca)
    print(f"samples={rows.shape[0]} m={pca.m} out={args.out}")
    return EXIT_OK


def cmd_train_gmm(args) -> int:
    if args.components < 1:
        raise UsageError("--components must be >= 1")
    rows = _subsample(_load_rows(args.descriptors), args.max_samples, args.seed)
    gmm = train_gmm(rows, args.components, seed=args.seed, max_iters=args.max_iters)
    formats.save_gmm(args.out, gmm)
    print(f"samples={rows.shape[0]} components={gmm.num_components} dim={gmm.dim} "
          f"iterations={len(gmm.history)} loglik={gmm.history[-1]:.6f} out={args.out}")
    return EXIT_OK


def cmd_encode(args) -> int:
    _require_files([args.image, args.pca, args.gmm])
    img = load_image(args.image)
    enc = Encoder(formats.load_pca(args.pca), formats.load_gmm(args.gmm),
                  _encoder_config(args), args.scales)
    timings = {}
    data = enc.descriptors(img, timings)
    if args.dump_descriptors:
        formats.save_descriptors(args.dump_descriptors, data.rows, data.positions)
    fv = enc.encode_descriptors(data, timings)
    if args.format == "text":
        formats.save_fv_text(args.out, fv)
    else:
        formats.save_fv(args.out, fv)
    if args.timings:
        for key in ("pyramid", "sift", "posterior", "accumulate", "normalize"):
            print(f"{key}_ms={timings[key]:.3f}")
        print(f"total_ms={sum(timings.values()):.3f}")
        print(f"descriptors={len(data)}")
    return EXIT_OK


def cmd_compare(args) -> int:
    a, b = _load_vector(args.a), _load_vector(args.b)
    err, idx = max_relative_error(a, b)
    ok = err <= args.tolerance
    print(f"max_rel_error={err:.6e} index={idx} tolerance={args.tolerance:g} "
          f"result={'equal' if ok else 'DIFFERENT'}")
    if not ok:
        raise EquivalenceError(err, idx, args.tolerance)
    return EXIT_OK


def cmd_bench(args) -> int:
    if not args.images:
        raise UsageError("bench needs at least one image")
    if args.reps < 3:
        raise UsageError("--reps must be >= 3")
    _require_files(args.images + [args.pca, args.gmm])
    catalogue = {v.name: v for v in default_variants(_workers(args))}
    names = args.variants or list(catalogue)
    unknown = [n for n in names if n not in catalogue]
    if unknown:
        raise UsageError(f"unknown variants {unknown}; choose from {sorted(catalogue)}")
    variants: List[BenchVariant] = [catalogue[n] for n in names]
    report = run_bench(args.images, variants, args.reps,
                       formats.load_pca(args.pca), formats.load_gmm(args.gmm), args.tolerance)
    sys.stdout.write(report.render())
    if args.csv:
        report.write_csv(args.csv)
    return EXIT_OK


# monitoring -----------------------------------------------------------------

_FRAME_RE = re.compile(r"(\d+)\.p[gp]m$", re.IGNORECASE)


def frame_paths(frame_dir: str) -> List[str]:
    """Frame files ordered by the number in their name."""
    found = []
    for name in os.listdir(frame_dir):
        m = _FRAME_RE.search(name)
        if m:
            found.append((int(m.group(1)), os.path.join(frame_dir, name)))
    return [p for _, p in sorted(found)]


@dataclass
class MonitorRun:
    frame_dir: str
    labels: np.ndarray
    train_count: int
    scores: List[float] = field(default_factory=list)
    frame_ms: List[float] = field(default_factory=list)
    auc: float = float("nan")


def _train_models(paths, args):
    """PCA and GMM fitted on a seeded sample of the training frames' descriptors."""
    rng = np.random.default_rng(args.seed)
    per_frame = max(1, args.max_train_descriptors // len(paths))
    raw, pos, sizes = [], [], []
    for p in paths:
        img = load_image(p)
        r, xy = _raw_descriptors(img, args.scales)
        keep = np.sort(rng.choice(r.shape[0], size=min(per_frame, r.shape[0]), replace=False))
        raw.append(r[keep])
        pos.append(xy[keep])
        sizes.append(np.tile([img.width, img.height], (keep.size, 1)))
    raw, pos, sizes = np.concatenate(raw), np.concatenate(pos), np.concatenate(sizes)
    pca = train_pca(raw, args.pca_dim)
    xy = np.clip(pos / sizes, 0.0, 1.0)
    rows = np.concatenate([pca.project(raw), xy], axis=1)
    gmm = train_gmm(rows, args.components, seed=args.seed, max_iters=args.max_iters)
    return pca, gmm


def run_monitor(frame_dir: str, labels_path: Optional[str], args, out: TextIO) -> MonitorRun:
    paths = frame_paths(frame_dir)
    if not paths:
        raise FileNotFoundError(f"no frame files in {frame_dir}")
    labels_path = labels_path or os.path.join(frame_dir, "labels.txt")
    _require_files([labels_path])
    labels = formats.load_labels(labels_path)
    if labels.size != len(paths):
        raise DimensionError(f"{labels_path}: {labels.size} labels for {len(paths)} frames")
    n_train = args.train_count
    if not 0 < n_train < len(paths):
        raise UsageError(f"--train-count must be in [1, {len(paths) - 1}], got {n_train}")
    if np.unique(labels[:n_train]).size < 2:
        raise ValueError(f"training span of {frame_dir} contains a single class")

    if args.pca and args.gmm:
        _require_files([args.pca, args.gmm])
        pca, gmm = formats.load_pca(args.pca), formats.load_gmm(args.gmm)
    else:
        pca, gmm = _train_models(paths[:n_train], args)
    enc = Encoder(pca, gmm, _encoder_config(args), args.scales)

    feats = np.stack([enc.encode(load_image(p))[0].flatten() for p in paths[:n_train]])
    model = train_linear(feats, labels[:n_train], C=args.C, seed=args.seed)

    run = MonitorRun(frame_dir, labels, n_train)
    for i in range(n_train, len(paths)):
        t0 = time.perf_counter()
        fv, _ = enc.encode(load_image(paths[i]))
        s = float(model.decision(fv.flatten())[0])
        ms = (time.perf_counter() - t0) * 1e3
        run.scores.append(s)
        run.frame_ms.append(ms)
        out.write(f"{i},{s:.9g},{ms:.3f}\n")
        out.flush()
    test_labels = labels[n_train:]
    if np.unique(test_labels).size == 2:
        run.auc = auc(np.asarray(run.scores), test_labels)
    return run


def cmd_monitor(args) -> int:
    if not os.path.isdir(args.frame_dir):
        raise FileNotFoundError(f"no such directory: {args.frame_dir}")
    # one scene per directory; a directory of scene directories is processed per scene
    scenes = [args.frame_dir]
    if not frame_paths(args.frame_dir):
        subdirs = sorted(os.path.join(args.frame_dir, d) for d in os.listdir(args.frame_dir)
                         if os.path.isdir(os.path.join(args.frame_dir, d)))
        scenes = [d for d in subdirs if frame_paths(d)] or scenes
    out = open(args.csv, "w") if args.csv else sys.stdout
    try:
        out.write("index,score,ms\n")
        runs = []
        for scene in scenes:
            labels = args.labels if len(scenes) == 1 else None
            runs.append(run_monitor(scene, labels, args, out))
    finally:
        if out is not sys.stdout:
            out.close()
    for run in runs:
        tag = "" if len(runs) == 1 else f"{os.path.basename(run.frame_dir)}."
        print(f"{tag}auc={run.auc:.6f}", file=sys.stderr)
        print(f"{tag}mean_ms={np.mean(run.frame_ms):.3f}", file=sys.stderr)
        print(f"{tag}test_frames={len(run.scores)}", file=sys.stderr)
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.kind == "image":
        save_pgm(args.out, textured_image(args.width or 320, args.height or 240, args.seed))
        print(f"out={args.out}")
    else:
        paths, labels = write_frame_sequence(args.out, args.frames, width=args.width or 64,
                                             height=args.height or 48, seed=args.seed)
        print(f"frames={len(paths)} abnormal={int(labels.sum())} out={args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _add_encoder_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scales", type=int, choices=(8, 9), default=9)
    p.add_argument("--backend", choices=("naive", "optimized"), default="optimized")
    p.add_argument("--normalization", choices=NORMALIZATIONS, default="improved")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--workers", type=int, default=None,
                   help=f"worker threads (default: ${WORKERS_ENV} or all cores)")
    p.add_argument("--strided-merge", action="store_true",
                   help="one accumulator copy per worker (result depends on worker count)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="densefv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="dense SIFT descriptors of images to a DSF1 file")
    p.add_argument("images", nargs="+")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--pca", help="embed with this PCA model (rows become m+2 wide)")
    p.add_argument("--scales", type=int, choices=(8, 9), default=9)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-pca", help="fit PCA on raw descriptor files")
    p.add_argument("descriptors", nargs="+")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("-m", type=int, default=DEFAULT_PCA_DIM)
    p.add_argument("--max-samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_pca)

    p = sub.add_parser("train-gmm", help="fit a diagonal GMM on embedded descriptor files")
    p.add_argument("descriptors", nargs="+")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("-n", "--components", type=int, default=DEFAULT_COMPONENTS)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--max-samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_gmm)

    p = sub.add_parser("encode", help="encode one image as a Fisher vector")
    p.add_argument("image")
    p.add_argument("--pca", required=True)
    p.add_argument("--gmm", required=True)
    p.add_argument("-o", "--out", required=True)
    _add_encoder_flags(p)
    p.add_argument("--format", choices=("binary", "text"), default="binary")
    p.add_argument("--dump-descriptors", metavar="PATH")
    p.add_argument("--timings", action="store_true", help="print per-stage milliseconds")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; encoding is deterministic")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("compare", help="max relative difference of two Fisher vector files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="per-stage timings, naive vs optimized")
    p.add_argument("images", nargs="*")
    p.add_argument("--pca", required=True)
    p.add_argument("--gmm", required=True)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--variants", nargs="+", metavar="NAME")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--csv", metavar="PATH")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("monitor", help="train on leading frames, score the rest, report AUC")
    p.add_argument("frame_dir")
    p.add_argument("--labels", help="default: FRAME_DIR/labels.txt")
    p.add_argument("--train-count", type=int, default=700)
    p.add_argument("--pca")
    p.add_argument("--gmm")
    p.add_argument("--pca-dim", type=int, default=DEFAULT_PCA_DIM)
    p.add_argument("-n", "--components", type=int, default=DEFAULT_COMPONENTS)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--max-train-descriptors", type=int, default=50000)
    p.add_argument("-C", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", metavar="PATH", help="write rows here instead of stdout")
    _add_encoder_flags(p)
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("synth", help="write synthetic test data")
    p.add_argument("kind", choices=("image", "frames"))
    p.add_argument("out")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--frames", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"densefv {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EquivalenceError as exc:
        print(f"densefv {args.command}: {exc}", file=sys.stderr)
        return EXIT_EQUIVALENCE
    except (OSError, ValueError) as exc:
        print(f"densefv {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
