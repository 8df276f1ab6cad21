"""PCA reduction of raw descriptors plus normalised (x, y) channels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsift import RawDescriptorSet

__all__ = ["PcaModel", "EmbeddedDescriptorSet", "train_pca", "embed", "DEFAULT_PCA_DIM"]

DEFAULT_PCA_DIM = 80


@dataclass
class PcaModel:
    mean: np.ndarray    # (in_dim,)
    basis: np.ndarray   # (m, in_dim), orthonormal rows

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.basis = np.atleast_2d(np.asarray(self.basis, dtype=np.float64))
        if self.basis.shape[1] != self.mean.shape[0]:
            raise ValueError("basis width does not match mean length")
        if self.m >= self.in_dim:
            raise ValueError(f"m must be < {self.in_dim}, got {self.m}")

    @property
    def m(self) -> int:
        return self.basis.shape[0]

    @property
    def in_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def out_dim(self) -> int:
        """Embedded dimension M = m + 2."""
        return self.m + 2

    def project(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.basis.T


@dataclass
class EmbeddedDescriptorSet:
    rows: np.ndarray        # (T, M)
    positions: np.ndarray   # (T, 2), original-image pixel coordinates

    def __len__(self):
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @classmethod
    def concatenate(cls, parts) -> "EmbeddedDescriptorSet":
        parts = list(parts)
        return cls(
            rows=np.concatenate([p.rows for p in parts], axis=0),
            positions=np.concatenate([p.positions for p in parts], axis=0),
        )


def train_pca(samples: np.ndarray, m: int = DEFAULT_PCA_DIM) -> PcaModel:
    """Top-m principal directions of ``samples`` (one row per sample).

    Each basis vector is signed so that its largest-magnitude component is
    positive, which makes the result independent of the eigensolver.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("samples must be a 2-D matrix")
    if m < 1 or m >= x.shape[1]:
        raise ValueError(f"m must be in [1, {x.shape[1] - 1}], got {m}")
    if x.shape[0] < m:
        raise ValueError(f"need at least m={m} samples, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite values")

    mean = x.mean(axis=0)
    centred = x - mean
    cov = centred.T @ centred / max(x.shape[0] - 1, 1)
    if not np.any(cov):
        raise ValueError("zero covariance: all samples are identical")

    # eigh returns ascending eigenvalues
    _, evecs = np.linalg.eigh(cov)
    evecs = evecs[:, ::-1][:, :m].T
    pivot = np.argmax(np.abs(evecs), axis=1)
    signs = np.sign(evecs[np.arange(m), pivot])
    signs[signs == 0] = 1.0
    return PcaModel(mean=mean, basis=evecs * signs[:, None])


def embed(raw: RawDescriptorSet, pca: PcaModel, orig_w: int, orig_h: int) -> EmbeddedDescriptorSet:
    """Rows ``[basis @ (d - mean), x / orig_w, y / orig_h]``."""
    desc = np.asarray(raw.descriptors, dtype=np.float64)
    if desc.ndim != 2 or desc.shape[1] != pca.in_dim:
        raise ValueError(
            f"descriptor dimension {desc.shape[-1]} does not match PCA input {pca.in_dim}"
        )
    pos = raw.original_keypoints
    xy = np.column_stack([pos[:, 0] / orig_w, pos[:, 1] / orig_h])
    xy = np.clip(xy, 0.0, 1.0)
    rows = np.concatenate([pca.project(desc), xy], axis=1)
    return EmbeddedDescriptorSet(rows=rows, positions=pos)
