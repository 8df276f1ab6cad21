"""Little-endian binary file formats.

======  ==============================================================
DSF1    u32 count, u32 dim, count*dim f32 rows, count (x, y) f32 pairs
PCA1    u32 m, u32 in_dim, in_dim f64 mean, m*in_dim f64 basis
GMM1    u32 N, u32 M, N f64 priors, N*M f64 means, N*M f64 variances
FV01    u32 N, u32 M, u8 normalization, 2*N*M f32 (U block, then V)
LIN1    u32 dim, f32 bias, dim f32 weights
======  ==============================================================

Model parameters are stored as float64 so that a saved model reloads
bit-for-bit and GMM priors keep summing to one within 1e-9.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .classify import LinearModel
from .embed import PcaModel
from .fvenc import NORMALIZATIONS, FisherVector
from .gmm import GmmModel

__all__ = [
    "FormatError",
    "save_descriptors", "load_descriptors",
    "save_pca", "load_pca",
    "save_gmm", "load_gmm",
    "save_fv", "load_fv", "save_fv_text", "load_fv_text",
    "save_linear", "load_linear",
    "load_labels",
]

_F32 = np.dtype("<f4")
_F64 = np.dtype("<f8")


class FormatError(ValueError):
    """Malformed or truncated model/descriptor/vector file."""


class _Reader:
    def __init__(self, path, magic: bytes):
        self.path = os.fspath(path)
        try:
            with open(self.path, "rb") as fh:
                self.buf = fh.read()
        except OSError as exc:
            raise FormatError(f"cannot read {self.path!r}: {exc}") from exc
        if self.buf[:4] != magic:
            raise FormatError(f"{self.path!r}: bad magic {self.buf[:4]!r}, expected {magic!r}")
        self.pos = 4

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise FormatError(f"{self.path!r}: truncated header")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def array(self, dtype: np.dtype, count: int) -> np.ndarray:
        nbytes = dtype.itemsize * count
        if self.pos + nbytes > len(self.buf):
            raise FormatError(f"{self.path!r}: truncated data")
        arr = np.frombuffer(self.buf, dtype=dtype, count=count, offset=self.pos)
        self.pos += nbytes
        return arr.astype(np.float64)

    def done(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{self.path!r}: {len(self.buf) - self.pos} trailing bytes")


def _write(path, *chunks: bytes) -> None:
    with open(path, "wb") as fh:
        for c in chunks:
            fh.write(c)


# descriptors ---------------------------------------------------------------

def save_descriptors(path, rows, positions) -> None:
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    if positions.shape[0] != rows.shape[0]:
        raise ValueError("one (x, y) pair per descriptor row is required")
    _write(path, b"DSF1", struct.pack("<II", *rows.shape),
           rows.astype(_F32).tobytes(), positions.astype(_F32).tobytes())


def load_descriptors(path):
    """Return ``(rows, positions)`` as float64 arrays."""
    r = _Reader(path, b"DSF1")
    count, dim = r.unpack("<II")
    rows = r.array(_F32, count * dim).reshape(count, dim)
    pos = r.array(_F32, count * 2).reshape(count, 2)
    r.done()
    return rows, pos


# PCA -----------------------------------------------------------------------

def save_pca(path, pca: PcaModel) -> None:
    _write(path, b"PCA1", struct.pack("<II", pca.m, pca.in_dim),
           pca.mean.astype(_F64).tobytes(), pca.basis.astype(_F64).tobytes())


def load_pca(path) -> PcaModel:
    r = _Reader(path, b"PCA1")
    m, in_dim = r.unpack("<II")
    mean = r.array(_F64, in_dim)
    basis = r.array(_F64, m * in_dim).reshape(m, in_dim)
    r.done()
    try:
        return PcaModel(mean=mean, basis=basis)
    except ValueError as exc:
        raise FormatError(f"{os.fspath(path)!r}: {exc}") from exc


# GMM -----------------------------------------------------------------------

def save_gmm(path, gmm: GmmModel) -> None:
    _write(path, b"GMM1", struct.pack("<II", gmm.num_components, gmm.dim),
           gmm.priors.astype(_F64).tobytes(), gmm.means.astype(_F64).tobytes(),
           gmm.covariances.astype(_F64).tobytes())


def load_gmm(path) -> GmmModel:
    r = _Reader(path, b"GMM1")
    n, m = r.unpack("<II")
    priors = r.array(_F64, n)
    means = r.array(_F64, n * m).reshape(n, m)
    var = r.array(_F64, n * m).reshape(n, m)
    r.done()
    try:
        return GmmModel(priors=priors, means=means, covariances=var)
    except ValueError as exc:
        raise FormatError(f"{os.fspath(path)!r}: {exc}") from exc


# Fisher vectors ------------------------------------------------------------

def save_fv(path, fv: FisherVector) -> None:
    mode = NORMALIZATIONS.index(fv.normalization)
    _write(path, b"FV01", struct.pack("<IIB", fv.num_components, fv.dim, mode),
           fv.flatten().astype(_F32).tobytes())


def load_fv(path) -> FisherVector:
    r = _Reader(path, b"FV01")
    n, m, mode = r.unpack("<IIB")
    if mode >= len(NORMALIZATIONS):
        raise FormatError(f"{r.path!r}: unknown normalization code {mode}")
    vec = r.array(_F32, 2 * n * m)
    r.done()
    return FisherVector.from_flat(vec, n, m, NORMALIZATIONS[mode])


def save_fv_text(path, fv: FisherVector) -> None:
    vec = fv.flatten().astype(np.float32)
    with open(path, "w") as fh:
        fh.writelines(f"{v!r}\n" for v in vec.tolist())


def load_fv_text(path) -> np.ndarray:
    return np.loadtxt(path, dtype=np.float64, ndmin=1)


# linear model --------------------------------------------------------------

def save_linear(path, model: LinearModel) -> None:
    _write(path, b"LIN1", struct.pack("<If", model.w.size, model.b),
           model.w.astype(_F32).tobytes())


def load_linear(path) -> LinearModel:
    r = _Reader(path, b"LIN1")
    dim, bias = r.unpack("<If")
    w = r.array(_F32, dim)
    r.done()
    return LinearModel(w=w, b=float(bias))


def load_labels(path) -> np.ndarray:
    """One 0/1 integer per line; line index is the frame index."""
    try:
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise FormatError(f"cannot read labels {os.fspath(path)!r}: {exc}") from exc
    try:
        labels = np.array([int(ln) for ln in lines], dtype=np.int64)
    except ValueError as exc:
        raise FormatError(f"{os.fspath(path)!r}: labels must be integers") from exc
    if np.any((labels != 0) & (labels != 1)):
        raise FormatError(f"{os.fspath(path)!r}: labels must be 0 or 1")
    return labels
