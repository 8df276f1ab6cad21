"""Binary linear SVM (dual coordinate descent) and rank-based AUC."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.stats import rankdata

from .errors import DimensionError

__all__ = ["LinearModel", "LabeledSequence", "train_linear", "score", "auc", "primal_objective"]


@dataclass
class LinearModel:
    """Weights and bias, held at float32 precision so they save losslessly."""

    w: np.ndarray
    b: float = 0.0
    C: float = 1.0
    dual_history: List[float] = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float32).astype(np.float64).ravel()
        self.b = float(np.float32(self.b))
        if not (np.all(np.isfinite(self.w)) and np.isfinite(self.b)):
            raise ValueError("linear model has non-finite parameters")

    @property
    def dim(self) -> int:
        return self.w.size

    def decision(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise DimensionError(f"feature length {X.shape[1]} does not match model length {self.dim}")
        return X @ self.w + self.b

    def predict(self, X) -> np.ndarray:
        return (self.decision(X) > 0.0).astype(np.int64)


@dataclass
class LabeledSequence:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.labels = np.asarray(self.labels).ravel()
        if self.scores.shape != self.labels.shape:
            raise DimensionError("scores and labels differ in length")


def score(model: LinearModel, x) -> float:
    """w . x + b"""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != model.dim:
        raise DimensionError(f"feature length {x.size} does not match model length {model.dim}")
    return float(x @ model.w + model.b)


def _signed_labels(y) -> np.ndarray:
    y = np.asarray(y).ravel()
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return np.where(y == 1, 1.0, -1.0)


def primal_objective(model: LinearModel, X, y) -> float:
    """0.5 (|w|^2 + b^2) + C * sum hinge(y_i (w . x_i + b)), labels in {0, 1}."""
    s = _signed_labels(y)
    margins = s * model.decision(X)
    reg = 0.5 * (model.w @ model.w + model.b * model.b)
    return float(reg + model.C * np.maximum(0.0, 1.0 - margins).sum())


def train_linear(X, y, C: float = 1.0, seed: int = 0, epochs: int = 50, tol: float = 1e-4) -> LinearModel:
    """L2-regularised hinge-loss SVM by dual coordinate descent.

    The bias is learned as the weight of a constant unit feature (and is
    regularised with the rest).  Coordinates are visited in a seeded random
    order each epoch.  ``dual_history`` holds the dual objective
    ``0.5 |w|^2 - sum(alpha)`` after every epoch; each coordinate step
    minimises it exactly, so the sequence never increases.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    s = _signed_labels(y)
    if X.shape[0] != s.size:
        raise DimensionError(f"{X.shape[0]} feature rows but {s.size} labels")
    if not (np.any(s > 0) and np.any(s < 0)):
        raise ValueError("training data must contain both classes")
    if C <= 0.0:
        raise ValueError("C must be positive")

    n, d = X.shape
    qii = np.einsum("ij,ij->i", X, X) + 1.0
    alpha = np.zeros(n)
    w = np.zeros(d)
    b = 0.0
    rng = np.random.default_rng(seed)
    history: List[float] = []
    for _ in range(epochs):
        max_pg, min_pg = -np.inf, np.inf
        for i in rng.permutation(n):
            g = s[i] * (X[i] @ w + b) - 1.0
            a = alpha[i]
            if a == 0.0:
                pg = min(g, 0.0)
            elif a == C:
                pg = max(g, 0.0)
            else:
                pg = g
            max_pg = max(max_pg, pg)
            min_pg = min(min_pg, pg)
            if pg != 0.0:
                new = min(max(a - g / qii[i], 0.0), C)
                delta = (new - a) * s[i]
                alpha[i] = new
                w += delta * X[i]
                b += delta
        history.append(0.5 * (w @ w + b * b) - alpha.sum())
        if max_pg - min_pg < tol:
            break
    return LinearModel(w=w, b=b, C=C, dual_history=history)


def auc(scores, labels=None) -> float:
    """Mann-Whitney AUC from average ranks; tied pairs count one half."""
    seq = scores if isinstance(scores, LabeledSequence) else LabeledSequence(scores, labels)
    pos = seq.labels == 1
    n_pos = int(pos.sum())
    n_neg = seq.labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    ranks = rankdata(seq.scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
