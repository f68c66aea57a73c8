"""Training objectives with closed-form gradients.

Two losses drive the three-stage schedule:

  * ``rec_loss`` -- per-patch MSE between predicted pixels and standardized
    target patches (reconstruction of masked temporal-difference patches).
  * ``info_nce`` -- queue-based contrastive loss pulling a query toward its
    paired key against K stored negatives, scaled by a temperature.

Gradients are derived by hand and exercised against central finite
differences in the test suite; both losses are pure and allocation-light.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

EPS_STD = 1e-6
DEFAULT_TEMPERATURE = 0.07  # MoCo-family convention
DEFAULT_QUEUE_CAPACITY = 1024


@dataclass(eq=False)
class PatchTarget:
    """Flat pixel target for one masked patch, optionally standardized."""

    pixels: np.ndarray
    standardized: bool = False

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64).reshape(-1)
        if self.pixels.size == 0:
            raise ValueError("patch target must contain at least one pixel")


def standardize(patch, eps: float = EPS_STD) -> PatchTarget:
    """Shift to zero mean and scale to unit population std.

    Flat patches (std <= eps) are mean-subtracted and divided by eps instead,
    so static regions of a difference map yield all-zero targets rather than
    NaNs.
    """
    arr = np.asarray(patch, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError("cannot standardize an empty patch")
    mu = arr.mean()
    sigma = arr.std()  # population std
    denom = sigma if sigma > eps else eps
    return PatchTarget((arr - mu) / denom, standardized=True)


def rec_loss(preds: Sequence[np.ndarray], targets: Sequence[PatchTarget]):
    """Mean over patches of per-patch mean squared error.

    Returns (loss, grads) where grads[j] is d loss / d preds[j], i.e.
    2 * (pred - target) / (n_pixels * n_patches).
    """
    if len(preds) == 0 or len(preds) != len(targets):
        raise ValueError("need equally many (>=1) predictions and targets")
    n_patches = len(preds)
    loss = 0.0
    grads = []
    for pred, target in zip(preds, targets):
        p = np.asarray(pred, dtype=np.float64).reshape(-1)
        t = target.pixels
        if p.shape != t.shape:
            raise ValueError(f"prediction shape {p.shape} != target {t.shape}")
        diff = p - t
        n = p.size
        loss += float(diff @ diff) / n
        grads.append(2.0 * diff / (n * n_patches))
    return loss / n_patches, grads


@dataclass(eq=False)
class ContrastBatch:
    """One query against its positive key and a queue of negatives.

    All vectors must be L2-normalized before similarity computation.
    """

    query: np.ndarray
    positive: np.ndarray
    negatives: np.ndarray  # (K, D); K may be 0
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        self.query = np.asarray(self.query, dtype=np.float64).reshape(-1)
        self.positive = np.asarray(self.positive, dtype=np.float64).reshape(-1)
        self.negatives = np.asarray(self.negatives, dtype=np.float64)
        if self.negatives.size == 0:
            self.negatives = self.negatives.reshape(0, self.query.size)
        if self.negatives.ndim != 2 or self.negatives.shape[1] != self.query.size:
            raise ValueError("negatives must be (K, D) matching the query")
        if self.positive.shape != self.query.shape:
            raise ValueError("positive must match the query dimension")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        for name, v in (("query", self.query), ("positive", self.positive)):
            nrm = np.linalg.norm(v)
            if nrm == 0.0:
                raise ValueError(f"{name} has zero norm")
            if abs(nrm - 1.0) > 1e-5:
                raise ValueError(f"{name} is not L2-normalized (norm={nrm:.6g})")
        if len(self.negatives):
            nrm = np.linalg.norm(self.negatives, axis=1)
            if np.any(nrm == 0.0):
                raise ValueError("a negative has zero norm")
            if np.any(np.abs(nrm - 1.0) > 1e-5):
                raise ValueError("negatives are not L2-normalized")


def info_nce(batch: ContrastBatch):
    """Contrastive loss -log softmax(positive logit) over {positive, negatives}.

    Logits are dot products divided by the temperature; the log-sum-exp is
    stabilized by subtracting the max logit. With an empty queue the loss is
    exactly zero.

    Returns (loss, grad_query, grad_positive, grad_negatives).
    """
    q, pos, negs, tau = batch.query, batch.positive, batch.negatives, batch.temperature
    l_pos = float(q @ pos) / tau
    if len(negs) == 0:
        return 0.0, np.zeros_like(q), np.zeros_like(pos), np.zeros_like(negs)
    l_neg = (negs @ q) / tau
    logits = np.concatenate(([l_pos], l_neg))
    mx = logits.max()
    exps = np.exp(logits - mx)
    z = exps.sum()
    loss = float(np.log(z) + mx - l_pos)

    # Softmax probabilities over {positive, negatives}.
    probs = exps / z
    p_pos, p_neg = probs[0], probs[1:]
    grad_q = ((p_pos - 1.0) * pos + p_neg @ negs) / tau
    grad_pos = (p_pos - 1.0) * q / tau
    grad_negs = np.outer(p_neg, q) / tau
    return loss, grad_q, grad_pos, grad_negs


@dataclass(eq=False)
class NegativeQueue:
    """Fixed-capacity FIFO of negative key vectors (oldest evicted first).

    Single-writer: callers serialize pushes externally; ``snapshot`` hands
    back a frozen copy safe to read during loss evaluation.
    """

    capacity: int = DEFAULT_QUEUE_CAPACITY
    _items: deque = field(init=False, repr=False)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        self._items = deque(maxlen=self.capacity)

    def push(self, vectors) -> None:
        arr = np.asarray(vectors, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        for row in arr:
            self._items.append(row.copy())

    def snapshot(self) -> np.ndarray:
        if not self._items:
            return np.empty((0, 0))
        return np.stack(list(self._items))

    def __len__(self) -> int:
        return len(self._items)
