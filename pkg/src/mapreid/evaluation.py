"""Exact retrieval metrics: per-query AP, mAP and CMC."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import SimilarityMatrix
from .errors import AllQueriesSkipped, DimensionMismatch, EmptyGallery, IndexOutOfRange, NoPositives

log = logging.getLogger(__name__)

REPORT_RANKS = (1, 5, 10, 20)


@dataclass
class EvalResult:
    map: float
    cmc: np.ndarray  # cmc[r - 1] is the rank-r score
    per_query_ap: np.ndarray  # NaN for skipped queries
    skipped_queries: list = field(default_factory=list)

    def rank(self, r):
        return float(self.cmc[r - 1])

    def report_items(self, ranks=REPORT_RANKS):
        """Ordered ``(key, value)`` pairs for the key-value report."""
        items = [("map", f"{self.map:.10f}")]
        for r in ranks:
            if r <= len(self.cmc):
                items.append((f"cmc.{r}", f"{self.rank(r):.10f}"))
        items.append(("skipped", ",".join(str(q) for q in self.skipped_queries)))
        items.append(("cmc.full", ",".join(f"{v:.10f}" for v in self.cmc)))
        return items

    def to_table(self, ranks=REPORT_RANKS):
        ranks = [r for r in ranks if r <= len(self.cmc)]
        head = "".join(f"{'R' + str(r):>8}" for r in ranks) + f"{'mAP':>8}"
        row = "".join(f"{100 * self.rank(r):8.1f}" for r in ranks) + f"{100 * self.map:8.1f}"
        return head + "\n" + row


def exact_ap(similarities, matches, valid=None):
    """Average precision of one ranked list.

    Valid entries are sorted by similarity, descending; ties go to the lower
    gallery index. Raises :class:`NoPositives` if no valid match exists.
    """
    s = np.asarray(similarities, dtype=np.float64).reshape(1, -1)
    y = np.asarray(matches, dtype=bool).reshape(1, -1)
    v = np.ones_like(y) if valid is None else np.asarray(valid, dtype=bool).reshape(1, -1)
    if not (s.shape == y.shape == v.shape):
        raise DimensionMismatch("similarities, matches and valid must have equal length")
    ap, _, n_pos = kernels.rank_queries(np.ascontiguousarray(s), y, v)
    if n_pos[0] == 0:
        raise NoPositives("no valid positive in ranking")
    return float(ap[0])


def valid_mask(sim, camera_filter=False, q_cameras=None, g_cameras=None):
    """Entries that take part in ranking: not self-matches, and (optionally) not same-id-same-camera."""
    valid = ~sim.self_mask
    if camera_filter:
        if q_cameras is None or g_cameras is None:
            raise ValueError("camera_filter needs query and gallery camera labels")
        qc = np.asarray(q_cameras).reshape(-1, 1)
        gc = np.asarray(g_cameras).reshape(1, -1)
        if qc.shape[0] != sim.shape[0] or gc.shape[1] != sim.shape[1]:
            raise DimensionMismatch("camera label lengths do not match the similarity matrix")
        valid = valid & ~(sim.match & (qc == gc))
    return valid


def evaluate(sim: SimilarityMatrix, max_rank=20, camera_filter=False, q_cameras=None, g_cameras=None):
    n_q, n_g = sim.shape
    if n_g == 0:
        raise EmptyGallery("gallery is empty")
    if not 1 <= max_rank <= n_g:
        raise ValueError(f"max_rank must lie in [1, {n_g}], got {max_rank}")
    valid = valid_mask(sim, camera_filter, q_cameras, g_cameras)
    ap, first, n_pos = kernels.rank_queries(
        np.ascontiguousarray(sim.values, dtype=np.float64),
        np.ascontiguousarray(sim.match), np.ascontiguousarray(valid))
    live = n_pos > 0
    skipped = [int(i) for i in np.flatnonzero(~live)]
    if not live.any():
        raise AllQueriesSkipped(f"all {n_q} queries lack a valid positive")
    if skipped:
        log.warning("skipping %d queries without valid positives", len(skipped))
    hits = first[live]
    ranks = np.arange(1, max_rank + 1)
    cmc = (hits[None, :] <= ranks[:, None]).mean(axis=1)
    per_query = np.where(live, ap, np.nan)
    return EvalResult(float(ap[live].mean()), cmc, per_query, skipped)


def ranking_list(sim: SimilarityMatrix, query_index, top_k, valid=None):
    """Top-``top_k`` valid gallery entries for one query as ``(gallery_index, similarity, is_match)``."""
    n_q, _ = sim.shape
    if not 0 <= query_index < n_q:
        raise IndexOutOfRange(f"query index {query_index} outside [0, {n_q})")
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    v = sim.valid if valid is None else valid
    idx = np.flatnonzero(v[query_index])
    order = idx[np.argsort(-sim.values[query_index, idx], kind="stable")][:top_k]
    return [(int(j), float(sim.values[query_index, j]), bool(sim.match[query_index, j])) for j in order]
