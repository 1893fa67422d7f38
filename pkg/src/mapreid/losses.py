"""Identity cross-entropy, batch-hard triplet loss and the weighted loss sum."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import as_embeddings, euclidean_distance_matrix
from .errors import DegenerateBatch, DimensionMismatch, LabelOutOfRange, NonFiniteLoss

DEFAULT_MARGIN = 0.3


@dataclass
class ClassifierHead:
    weights: np.ndarray  # (C, D)
    bias: np.ndarray  # (C,)

    @property
    def num_classes(self):
        return self.weights.shape[0]

    @classmethod
    def init(cls, num_classes, dim, rng):
        limit = math.sqrt(6.0 / (num_classes + dim))
        return cls(rng.uniform(-limit, limit, size=(num_classes, dim)), np.zeros(num_classes))

    def params(self):
        return [self.weights, self.bias]


@dataclass
class LossReport:
    l_id: float
    l_triplet: float
    l_map: float
    l_total: float  # unit-weight sum
    l_weighted: float
    active_triplets: int = 0

    def log_line(self, step):
        return (f"{step}\t{self.l_id:.10f}\t{self.l_triplet:.10f}\t{self.l_map:.10f}"
                f"\t{self.l_total:.10f}\t{self.active_triplets}")


def cross_entropy_loss(features, labels, head: ClassifierHead):
    """Mean softmax cross-entropy of ``features @ W.T + b``.

    Returns ``(loss, d_features, (d_weights, d_bias))``.
    """
    x = as_embeddings(features, "features")
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != x.shape[0]:
        raise DimensionMismatch(f"{y.shape[0]} labels for {x.shape[0]} rows")
    if x.shape[1] != head.weights.shape[1]:
        raise DimensionMismatch(f"feature dim {x.shape[1]} != head dim {head.weights.shape[1]}")
    c = head.num_classes
    if y.size and (y.min() < 0 or y.max() >= c):
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    b = x.shape[0]
    logits = x @ head.weights.T + head.bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_z[:, None]
    rows = np.arange(b)
    loss = float(-log_p[rows, y].mean())
    d_logits = np.exp(log_p)
    d_logits[rows, y] -= 1.0
    d_logits /= b
    return loss, d_logits @ head.weights, (d_logits.T @ x, d_logits.sum(axis=0))


def hardest_pairs(dist, labels):
    """Per anchor: index of the farthest same-label other row and of the nearest different-label row.

    Ties go to the lowest index.
    """
    y = np.asarray(labels).reshape(-1)
    n = y.shape[0]
    same = y[:, None] == y[None, :]
    np.fill_diagonal(same, False)
    diff = y[:, None] != y[None, :]
    lacking_pos = ~same.any(axis=1)
    lacking_neg = ~diff.any(axis=1)
    if lacking_pos.any() or lacking_neg.any():
        i = int(np.flatnonzero(lacking_pos | lacking_neg)[0])
        what = "positive" if lacking_pos[i] else "negative"
        raise DegenerateBatch(f"anchor {i} has no {what} in the batch")
    pos = np.argmax(np.where(same, dist, -np.inf), axis=1)
    neg = np.argmin(np.where(diff, dist, np.inf), axis=1)
    return pos, neg, np.arange(n)


def batch_hard_triplet_loss(features, labels, margin=DEFAULT_MARGIN, return_active=False):
    """Batch-hard triplet loss on Euclidean distances of unnormalized features.

    The hardest positive/negative selection is treated as constant in the
    gradient; a zero distance contributes a zero gradient.
    """
    x = as_embeddings(features, "features")
    y = np.asarray(labels).reshape(-1)
    if y.shape[0] != x.shape[0]:
        raise DimensionMismatch(f"{y.shape[0]} labels for {x.shape[0]} rows")
    dist = euclidean_distance_matrix(x, x)
    pos, neg, anchors = hardest_pairs(dist, y)
    d_p = dist[anchors, pos]
    d_n = dist[anchors, neg]
    hinge = margin + d_p - d_n
    active = hinge > 0
    b = x.shape[0]
    # correctly rounded sum, so the result does not depend on summation order
    loss = math.fsum(np.where(active, hinge, 0.0).tolist()) / b

    grad = np.zeros_like(x)
    a_idx = np.flatnonzero(active)
    for partner, dd, sign in ((pos, d_p, 1.0), (neg, d_n, -1.0)):
        j = partner[a_idx]
        d = dd[a_idx]
        unit = np.zeros((a_idx.size, x.shape[1]))
        nz = d > 0
        unit[nz] = (x[a_idx[nz]] - x[j[nz]]) / d[nz, None]
        np.add.at(grad, a_idx, sign * unit / b)
        np.add.at(grad, j, -sign * unit / b)
    if return_active:
        return loss, grad, int(active.sum())
    return loss, grad


def combine_losses(l_id, l_triplet, l_map, weights=(1.0, 1.0, 1.0), active_triplets=0):
    w = tuple(float(v) for v in weights)
    if len(w) != 3 or any(v < 0 or not math.isfinite(v) for v in w):
        raise ValueError(f"loss weights must be three non-negative reals, got {weights}")
    parts = (float(l_id), float(l_triplet), float(l_map))
    if not all(math.isfinite(p) for p in parts):
        raise NonFiniteLoss(f"non-finite loss component in {parts}")
    total = parts[0] + parts[1] + parts[2]
    weighted = w[0] * parts[0] + w[1] * parts[1] + w[2] * parts[2]
    return LossReport(*parts, total, weighted, int(active_triplets))
