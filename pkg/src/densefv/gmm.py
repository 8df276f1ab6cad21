"""Diagonal-covariance GMM: model, EM training and posterior computation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import _kernels
from .errors import DimensionError
from .parallel import worker_threads

__all__ = [
    "GmmModel",
    "PosteriorMatrix",
    "train_gmm",
    "posteriors",
    "DEFAULT_THRESHOLD",
    "DEFAULT_COMPONENTS",
]

DEFAULT_THRESHOLD = 1e-6
DEFAULT_COMPONENTS = 256
PRIOR_FLOOR = 1e-8
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GmmModel:
    priors: np.ndarray        # (N,)
    means: np.ndarray         # (N, M)
    covariances: np.ndarray   # (N, M) diagonal variances
    history: List[float] = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        self.priors = np.ascontiguousarray(self.priors, dtype=np.float64).ravel()
        self.means = np.ascontiguousarray(np.atleast_2d(self.means), dtype=np.float64)
        self.covariances = np.ascontiguousarray(np.atleast_2d(self.covariances), dtype=np.float64)
        n, m = self.means.shape
        if self.priors.shape != (n,) or self.covariances.shape != (n, m):
            raise DimensionError(
                f"inconsistent GMM shapes: priors {self.priors.shape}, "
                f"means {self.means.shape}, covariances {self.covariances.shape}"
            )
        if np.any(self.covariances <= 0.0) or not np.all(np.isfinite(self.covariances)):
            raise ValueError("covariances must be finite and positive")
        if np.any(self.priors <= 0.0) or not np.all(np.isfinite(self.priors)):
            raise ValueError("priors must be finite and positive")
        self.inv_cov = 1.0 / self.covariances
        self.inv_sqrt_cov = np.sqrt(self.inv_cov)
        self.log_consts = np.log(self.priors) - 0.5 * (
            np.log(self.covariances).sum(axis=1) + m * LOG_2PI
        )

    def lane_tables(self, tile_i: int, tile_j: int):
        """Means and inverse variances laid out for the tiled kernel (cached)."""
        cache = self.__dict__.setdefault("_lane_cache", {})
        key = (tile_i, tile_j)
        if key not in cache:
            cache[key] = (
                _kernels.expand_lanes(self.means, tile_i, tile_j),
                _kernels.expand_lanes(self.inv_cov, tile_i, tile_j),
            )
        return cache[key]

    @property
    def num_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_likelihood(self, data: np.ndarray) -> float:
        """Mean per-sample log-likelihood."""
        _, ll = _e_step(np.asarray(data, dtype=np.float64), self)
        return ll


@dataclass
class PosteriorMatrix:
    values: np.ndarray   # (T, N), rows sum to 1
    threshold: float = DEFAULT_THRESHOLD

    @property
    def shape(self):
        return self.values.shape

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


# --------------------------------------------------------------------------
# Phase 1
# --------------------------------------------------------------------------

def _check_data(data, model: GmmModel) -> np.ndarray:
    x = np.ascontiguousarray(getattr(data, "rows", data), dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise DimensionError(
            f"descriptor dimension {x.shape[-1] if x.ndim else 0} does not match GMM dimension {model.dim}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("descriptors contain non-finite values")
    return x


def posteriors(
    data,
    model: GmmModel,
    backend: str = "naive",
    chunk: int = 4,
    tile_descriptors: int = 4,
    tile_components: int = 2,
    threshold: float = DEFAULT_THRESHOLD,
    workers: Optional[int] = None,
) -> PosteriorMatrix:
    """Soft assignments of each descriptor to each component.

    Scores are ``log prior_j - 0.5 * sum_k log(2 pi var_jk) - 0.5 * t_ij``
    with ``t_ij`` the squared Mahalanobis distance; each row is shifted by
    its maximum before exponentiation and then divided by its sum.  Both
    backends produce bit-identical values.
    """
    x = _check_data(data, model)
    out = np.empty((x.shape[0], model.num_components))
    if x.shape[0] == 0:
        return PosteriorMatrix(out, threshold)
    if backend == "naive":
        _kernels.phase1_naive(x, model.means, model.inv_cov, model.log_consts, out)
    elif backend == "optimized":
        if min(chunk, tile_descriptors, tile_components) < 1:
            raise ValueError("chunk and tile sizes must be >= 1")
        mt, ct = model.lane_tables(tile_descriptors, tile_components)
        with worker_threads(workers):
            _kernels.phase1_optimized(
                x, mt, ct, model.log_consts, out, chunk, tile_descriptors, tile_components,
            )
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return PosteriorMatrix(out, threshold)


# --------------------------------------------------------------------------
# EM training
# --------------------------------------------------------------------------

def _log_scores(x: np.ndarray, model: GmmModel) -> np.ndarray:
    # t_ij = sum_k (x_ik - mu_jk)^2 / var_jk, expanded for matrix products
    t = (x * x) @ model.inv_cov.T
    t -= 2.0 * x @ (model.means * model.inv_cov).T
    t += np.sum(model.means * model.means * model.inv_cov, axis=1)
    np.maximum(t, 0.0, out=t)
    return model.log_consts - 0.5 * t


def _e_step(x: np.ndarray, model: GmmModel):
    scores = _log_scores(x, model)
    top = scores.max(axis=1, keepdims=True)
    w = np.exp(scores - top)
    s = w.sum(axis=1, keepdims=True)
    ll = float(np.mean(np.log(s[:, 0]) + top[:, 0]))
    return w / s, ll


def _kmeans_pp(x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    T = x.shape[0]
    centers = np.empty((n, x.shape[1]))
    centers[0] = x[rng.integers(T)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for c in range(1, n):
        total = d2.sum()
        if total > 0.0:
            idx = rng.choice(T, p=d2 / total)
        else:
            idx = rng.integers(T)
        centers[c] = x[idx]
        np.minimum(d2, np.sum((x - centers[c]) ** 2, axis=1), out=d2)
    return centers


def _normalize_priors(weights: np.ndarray) -> np.ndarray:
    p = np.maximum(weights / weights.sum(), PRIOR_FLOOR)
    return p / p.sum()


def train_gmm(
    data,
    n_components: int = DEFAULT_COMPONENTS,
    seed: int = 0,
    max_iters: int = 100,
    tol: float = 1e-6,
) -> GmmModel:
    """Fit a diagonal GMM by EM from a seeded k-means++ initialisation.

    Variances are floored at ``max(1e-6, 1e-4 * global variance)`` per
    dimension and priors at 1e-8.  The mean log-likelihood of every E-step
    is recorded in ``model.history``.
    """
    x = np.ascontiguousarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("data must be a non-empty 2-D matrix")
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    if n_components > x.shape[0]:
        raise ValueError(f"{n_components} components need at least as many samples, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("data contains non-finite values")

    T, M = x.shape
    rng = np.random.default_rng(seed)
    global_var = x.var(axis=0)
    floor = np.maximum(1e-6, 1e-4 * global_var)

    # initial hard assignment to the k-means++ seeds
    centers = _kmeans_pp(x, n_components, rng)
    d2 = (x * x).sum(1)[:, None] - 2.0 * x @ centers.T + (centers * centers).sum(1)[None, :]
    labels = np.argmin(d2, axis=1)
    resp = np.zeros((T, n_components))
    resp[np.arange(T), labels] = 1.0
    means = centers.copy()
    variances = np.tile(np.maximum(global_var, floor), (n_components, 1))
    model = _m_step(x, resp, means, variances, floor)

    history: List[float] = []
    prev = None
    for _ in range(max_iters):
        resp, ll = _e_step(x, model)
        history.append(ll)
        if prev is not None and ll - prev < tol * abs(prev):
            break
        prev = ll
        model = _m_step(x, resp, model.means, model.covariances, floor)
    else:
        history.append(model.log_likelihood(x))
    model.history = history
    return model


def _m_step(x, resp, old_means, old_vars, floor) -> GmmModel:
    nk = resp.sum(axis=0)
    alive = nk > 1e-10
    safe = np.where(alive, nk, 1.0)[:, None]
    # centre on the data mean to limit cancellation in E[x^2] - mu^2
    shift = x.mean(axis=0)
    xc = x - shift
    mu_c = resp.T @ xc / safe
    var = resp.T @ (xc * xc) / safe - mu_c * mu_c
    means = np.where(alive[:, None], mu_c + shift, old_means)
    var = np.where(alive[:, None], np.maximum(var, floor), old_vars)
    return GmmModel(priors=_normalize_priors(nk + 0.0), means=means, covariances=var)
