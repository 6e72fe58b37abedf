"""Gaussian soft labels, cross-entropy losses and the two-branch score merge."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .tensor import Tensor

PROB_EPS = 1e-7


@dataclass
class SoftLabels:
    binary: np.ndarray                 # (T,)
    categorical: np.ndarray | None     # (K+1, T)


def _gaussian_weights(boundaries, T: int, sigma: float, radius: float) -> np.ndarray:
    """(n_boundaries, T) truncated Gaussian bumps."""
    b = np.asarray(boundaries, dtype=np.int64).reshape(-1)
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if b.size and (b.min() < 0 or b.max() >= T):
        raise ValueError(f"boundary index out of range [0, {T}): {b.tolist()}")
    dist = np.arange(T)[None, :] - b[:, None]
    w = np.exp(-(dist.astype(np.float64) ** 2) / (2.0 * sigma ** 2))
    w[np.abs(dist) > radius] = 0.0
    return w


def soften(boundaries, T: int, sigma: float = 1.0, radius: float | None = None) -> np.ndarray:
    """Per-frame soft boundary label: max over boundaries of the truncated Gaussian."""
    radius = 3.0 * sigma if radius is None else radius
    w = _gaussian_weights(boundaries, T, sigma, radius)
    return w.max(axis=0) if len(w) else np.zeros(T)


def soften_categorical(boundaries, categories, T: int, K: int, sigma: float = 1.0,
                       radius: float | None = None) -> np.ndarray:
    """(K+1, T) soft class distribution per frame; class 0 is background.

    Class k takes the Gaussian weight of its nearest category-k boundary,
    background takes one minus the largest of those, and each column is then
    renormalised.
    """
    radius = 3.0 * sigma if radius is None else radius
    categories = np.asarray(categories, dtype=np.int64).reshape(-1)
    if len(categories) != len(np.asarray(boundaries).reshape(-1)):
        raise ValueError("boundaries and categories differ in length")
    if categories.size and (categories.min() < 1 or categories.max() > K):
        raise ValueError(f"categories must lie in [1, {K}], got {categories.tolist()}")
    w = _gaussian_weights(boundaries, T, sigma, radius)
    out = np.zeros((K + 1, T))
    for k in np.unique(categories):
        # nearest boundary has the largest Gaussian weight
        out[k] = w[categories == k].max(axis=0)
    out[0] = 1.0 - out[1:].max(axis=0)
    return out / out.sum(axis=0, keepdims=True)


def binary_loss(b: Tensor, labels) -> Tensor:
    """Mean per-frame binary cross entropy against soft targets."""
    y = np.asarray(labels, dtype=tc.get_dtype())
    if b.shape != y.shape:
        raise ValueError(f"prediction shape {b.shape} != label shape {y.shape}")
    p = tc.clip(b, PROB_EPS, 1.0 - PROB_EPS)
    ll = tc.log(p) * y + tc.log(1.0 - p) * (1.0 - y)
    return -ll.mean()


def categorical_loss(m: Tensor, labels) -> Tensor:
    """Mean over frames of the cross entropy between soft labels and ``m`` (K+1, T)."""
    y = np.asarray(labels, dtype=tc.get_dtype())
    if m.shape != y.shape:
        raise ValueError(f"prediction shape {m.shape} != label shape {y.shape}")
    p = tc.clip(m, PROB_EPS, 1.0 - PROB_EPS)
    return -(tc.log(p) * y).sum() * (1.0 / y.shape[1])


def merge(b, m) -> np.ndarray:
    """Final score per frame: the larger of the binary score and the
    non-background mass of the category distribution."""
    b = np.asarray(b.data if isinstance(b, Tensor) else b)
    if m is None:
        return b.copy()
    m = np.asarray(m.data if isinstance(m, Tensor) else m)
    if m.ndim != 2 or m.shape[1] != b.shape[0]:
        raise ValueError(f"score lengths differ: b has {b.shape[0]}, m has shape {m.shape}")
    return np.maximum(b, 1.0 - m[0])
