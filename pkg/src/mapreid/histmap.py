"""Differentiable histogram approximation of mAP.

Similarities are soft-assigned to ``M`` evenly spaced bins by a triangular
kernel. Per query, cumulative positive/total bin counts (taken from the
highest-similarity bin downward) give a precision per bin, and the positive
mass of each bin gives its recall increment; AP is the sum of their products.

The kernel has at most two non-zero bins per similarity, so the state keeps a
sparse form: the upper bin index ``k`` and the offset ``frac`` in ``[0, 1]``,
with weight ``1 - frac`` on bin ``k`` and ``frac`` on bin ``k + 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import SimilarityMatrix, as_embeddings
from .errors import DimensionMismatch, NoPositiveQueries, StateMismatch

DEFAULT_BINS = 40
DEFAULT_TAU = 1e-12


@dataclass(frozen=True)
class BinGrid:
    m_bins: int = DEFAULT_BINS
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if int(self.m_bins) != self.m_bins or self.m_bins < 2:
            raise ValueError(f"m_bins must be an integer >= 2, got {self.m_bins}")
        if not self.hi > self.lo:
            raise ValueError(f"bin range must satisfy lo < hi, got [{self.lo}, {self.hi}]")
        object.__setattr__(self, "m_bins", int(self.m_bins))

    @property
    def epsilon(self):
        return (self.hi - self.lo) / (self.m_bins - 1)

    @property
    def centers(self):
        """Bin centers, descending from ``hi`` to ``lo``."""
        return np.linspace(self.hi, self.lo, self.m_bins)


@dataclass
class HistogramApState:
    bin_index: np.ndarray  # (Q, G) upper bin of each similarity, -1 where invalid
    frac: np.ndarray  # (Q, G)
    pos_counts: np.ndarray  # (Q, M)
    all_counts: np.ndarray  # (Q, M)
    n_pos: np.ndarray  # (Q,)
    valid: np.ndarray  # (Q, G)
    grid: BinGrid
    values: np.ndarray  # similarities the state was built from
    match: np.ndarray
    tau: float = DEFAULT_TAU
    per_query_ap: np.ndarray | None = None
    loss: float | None = None

    @property
    def cum_pos(self):
        return np.cumsum(self.pos_counts, axis=1)

    @property
    def cum_all(self):
        return np.cumsum(self.all_counts, axis=1)

    @property
    def live(self):
        return self.n_pos > 0

    def query_weight(self):
        live = self.live
        return np.where(live, 1.0 / max(int(live.sum()), 1), 0.0)

    def dense_kernel(self):
        """Expand to the full ``(Q, M, G)`` assignment tensor (diagnostics and tests only)."""
        n_q, n_g = self.bin_index.shape
        out = np.zeros((n_q, self.grid.m_bins, n_g))
        qi, gj = np.nonzero(self.valid)
        k = self.bin_index[qi, gj]
        f = self.frac[qi, gj]
        out[qi, k, gj] = 1.0 - f
        out[qi, k + 1, gj] += f
        return out


def triangular_kernel(s, grid: BinGrid):
    """Soft assignment of one similarity to every bin: ``max(1 - |s - b_m| / eps, 0)``.

    ``s`` is clamped to ``[lo, hi]`` first.
    """
    s = min(max(float(s), grid.lo), grid.hi)
    # same floor/frac split as the sparse kernels, so at most two bins are nonzero
    t = (grid.hi - s) / grid.epsilon
    k = min(int(np.floor(t)), grid.m_bins - 2)
    frac = t - k
    out = np.zeros(grid.m_bins)
    out[k] = 1.0 - frac
    out[k + 1] = frac
    return out


def soft_histograms(sim: SimilarityMatrix, grid: BinGrid, valid=None, tau=DEFAULT_TAU):
    values = np.ascontiguousarray(sim.values, dtype=np.float64)
    match = np.ascontiguousarray(sim.match, dtype=bool)
    v = np.ascontiguousarray(sim.valid if valid is None else valid, dtype=bool)
    if v.shape != values.shape:
        raise DimensionMismatch("valid mask shape does not match similarities")
    k, frac, pos, tot, n_pos = kernels.soft_hist_forward(
        values, match, v, float(grid.hi), float(grid.epsilon), grid.m_bins)
    return HistogramApState(k, frac, pos, tot, n_pos, v, grid, values, match, tau)


def soft_map(state: HistogramApState, tau=None):
    """Mean histogram-AP over queries with at least one valid positive."""
    if tau is not None:
        state.tau = float(tau)
    live = state.live
    if not live.any():
        raise NoPositiveQueries("no query has a valid positive")
    precision = state.cum_pos / np.maximum(state.cum_all, state.tau)
    n = np.where(live, state.n_pos, 1.0)[:, None]
    recall_step = state.pos_counts / n
    ap = np.where(live, np.sum(precision * recall_step, axis=1), np.nan)
    state.per_query_ap = ap
    return float(ap[live].mean())


def map_loss_forward(sim: SimilarityMatrix, grid: BinGrid, tau=DEFAULT_TAU, valid=None):
    """``1 - soft_map`` and the state needed for :func:`map_loss_backward`."""
    state = soft_histograms(sim, grid, valid=valid, tau=tau)
    state.loss = 1.0 - soft_map(state)
    return state.loss, state


def map_loss_backward(state: HistogramApState, sim: SimilarityMatrix, grid: BinGrid):
    """Analytic ``dLoss/ds`` of the forward expression.

    Kernel slopes are ``-sign(s - b_m) / eps`` on the open support. Similarities
    sitting exactly on a bin center, or at/outside the range ends, get 0.
    """
    if state.loss is None:
        raise StateMismatch("state has no forward loss; call map_loss_forward first")
    if grid != state.grid:
        raise StateMismatch(f"grid {grid} differs from the forward grid {state.grid}")
    if (sim.values.shape != state.values.shape
            or not np.array_equal(sim.values, state.values)
            or not np.array_equal(sim.match, state.match)):
        raise StateMismatch("similarity matrix differs from the one used in the forward pass")
    return kernels.soft_hist_backward(
        state.bin_index, state.frac, state.values, state.match, state.valid,
        state.pos_counts, state.all_counts, state.n_pos,
        float(grid.hi), float(grid.epsilon), float(state.tau), state.query_weight())


def chain_to_embeddings(dloss_dsim, q_norm, g_norm):
    """Backprop through ``s_ij = q_i . g_j`` to both (normalized) embedding sets."""
    q = as_embeddings(q_norm, "query")
    g = as_embeddings(g_norm, "gallery")
    d = np.asarray(dloss_dsim, dtype=np.float64)
    if q.shape[1] != g.shape[1] or d.shape != (q.shape[0], g.shape[0]):
        raise DimensionMismatch(
            f"gradient {d.shape} incompatible with query {q.shape} and gallery {g.shape}")
    return d @ g, d.T @ q
