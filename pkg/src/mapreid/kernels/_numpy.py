"""Pure-numpy implementations of the hot kernels.

Signatures and outputs mirror ``_numba`` exactly; the two paths agree to
rounding (the numpy path uses pairwise summation in a few reductions).
"""
import numpy as np


def bin_positions(values, valid, hi, eps, m_bins):
    """Lower-bin index and fractional offset of every (clamped) similarity.

    Bin ``k`` has center ``hi - k * eps``. A similarity between centers k and
    k+1 puts weight ``1 - frac`` on k and ``frac`` on k+1. Invalid entries get
    index -1.
    """
    lo = hi - (m_bins - 1) * eps
    s = np.clip(values, lo, hi)
    t = (hi - s) / eps
    k = np.clip(np.floor(t).astype(np.int64), 0, m_bins - 2)
    frac = t - k
    k = np.where(valid, k, -1)
    frac = np.where(valid, frac, 0.0)
    return k, frac


def soft_hist_forward(values, match, valid, hi, eps, m_bins):
    n_q, n_g = values.shape
    k, frac = bin_positions(values, valid, hi, eps, m_bins)
    pos = np.zeros((n_q, m_bins))
    tot = np.zeros((n_q, m_bins))
    rows = np.broadcast_to(np.arange(n_q)[:, None], (n_q, n_g))
    sel = valid
    r, kk, f = rows[sel], k[sel], frac[sel]
    y = match[sel].astype(np.float64)
    np.add.at(tot, (r, kk), 1.0 - f)
    np.add.at(tot, (r, kk + 1), f)
    np.add.at(pos, (r, kk), (1.0 - f) * y)
    np.add.at(pos, (r, kk + 1), f * y)
    n_pos = (match & valid).sum(axis=1).astype(np.float64)
    return k, frac, pos, tot, n_pos


def _bin_grads(pos, tot, n_pos, tau):
    """dAP_i/dh+_i[m] and dAP_i/dh_i[m] for every query (zero rows if n_pos == 0)."""
    cum_pos = np.cumsum(pos, axis=1)
    cum_tot = np.cumsum(tot, axis=1)
    denom = np.maximum(cum_tot, tau)
    n = np.where(n_pos > 0, n_pos, 1.0)[:, None]
    live = (n_pos > 0)[:, None]
    a = pos / (n * denom)
    # reversed cumulative sums: sum over m >= k
    suffix_a = np.cumsum(a[:, ::-1], axis=1)[:, ::-1]
    g_pos = cum_pos / (n * denom) + suffix_a
    b = np.where(cum_tot > tau, -cum_pos * pos / (n * denom * denom), 0.0)
    g_tot = np.cumsum(b[:, ::-1], axis=1)[:, ::-1]
    return np.where(live, g_pos, 0.0), np.where(live, g_tot, 0.0)


def soft_hist_backward(k, frac, values, match, valid, pos, tot, n_pos,
                       hi, eps, tau, query_weight):
    m_bins = pos.shape[1]
    lo = hi - (m_bins - 1) * eps
    g_pos, g_tot = _bin_grads(pos, tot, n_pos, tau)
    kk = np.where(k >= 0, k, 0)
    y = match.astype(np.float64)
    g_lo_bin = np.take_along_axis(g_pos, kk, axis=1) * y + np.take_along_axis(g_tot, kk, axis=1)
    g_hi_bin = np.take_along_axis(g_pos, kk + 1, axis=1) * y + np.take_along_axis(g_tot, kk + 1, axis=1)
    smooth = valid & (values > lo) & (values < hi) & (frac > 0.0) & (frac < 1.0)
    dap = (g_lo_bin - g_hi_bin) / eps
    w = np.asarray(query_weight, dtype=np.float64)[:, None]
    return np.where(smooth, -w * dap, 0.0)


def rank_queries(values, match, valid):
    """Exact AP, 1-based rank of the first valid match (0 = none) and positive count."""
    n_q = values.shape[0]
    ap = np.zeros(n_q)
    first = np.zeros(n_q, dtype=np.int64)
    n_pos = np.zeros(n_q, dtype=np.int64)
    for i in range(n_q):
        idx = np.flatnonzero(valid[i])
        order = idx[np.argsort(-values[i, idx], kind="stable")]
        y = match[i, order]
        p = int(y.sum())
        n_pos[i] = p
        if p == 0:
            continue
        ranks = np.flatnonzero(y) + 1
        hits = np.arange(1, p + 1)
        ap[i] = np.sum(hits / ranks) / p
        first[i] = ranks[0]
    return ap, first, n_pos


def pairwise_euclidean(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.maximum(np.einsum("ijk,ijk->ij", diff, diff), 0.0))
