"""numba-compiled kernels; same contracts as ``_numpy``."""
import numpy as np
from numba import njit


@njit(cache=True)
def soft_hist_forward(values, match, valid, hi, eps, m_bins):
    n_q, n_g = values.shape
    lo = hi - (m_bins - 1) * eps
    k_out = np.full((n_q, n_g), -1, dtype=np.int64)
    frac_out = np.zeros((n_q, n_g))
    pos = np.zeros((n_q, m_bins))
    tot = np.zeros((n_q, m_bins))
    n_pos = np.zeros(n_q)
    for i in range(n_q):
        for j in range(n_g):
            if not valid[i, j]:
                continue
            s = min(max(values[i, j], lo), hi)
            t = (hi - s) / eps
            k = int(np.floor(t))
            if k > m_bins - 2:
                k = m_bins - 2
            if k < 0:
                k = 0
            f = t - k
            k_out[i, j] = k
            frac_out[i, j] = f
            tot[i, k] += 1.0 - f
            tot[i, k + 1] += f
            if match[i, j]:
                pos[i, k] += 1.0 - f
                pos[i, k + 1] += f
                n_pos[i] += 1.0
    return k_out, frac_out, pos, tot, n_pos


@njit(cache=True)
def soft_hist_backward(k, frac, values, match, valid, pos, tot, n_pos,
                       hi, eps, tau, query_weight):
    n_q, n_g = values.shape
    m_bins = pos.shape[1]
    lo = hi - (m_bins - 1) * eps
    grad = np.zeros((n_q, n_g))
    g_pos = np.empty(m_bins)
    g_tot = np.empty(m_bins)
    cum_pos = np.empty(m_bins)
    denom = np.empty(m_bins)
    for i in range(n_q):
        n = n_pos[i]
        if n <= 0.0:
            continue
        cp = 0.0
        ct = 0.0
        for m in range(m_bins):
            cp += pos[i, m]
            ct += tot[i, m]
            cum_pos[m] = cp
            denom[m] = ct if ct > tau else tau
        acc_a = 0.0
        acc_b = 0.0
        for m in range(m_bins - 1, -1, -1):
            d = denom[m]
            acc_a += pos[i, m] / (n * d)
            if denom[m] > tau:
                acc_b += -cum_pos[m] * pos[i, m] / (n * d * d)
            g_pos[m] = cum_pos[m] / (n * d) + acc_a
            g_tot[m] = acc_b
        w = query_weight[i]
        for j in range(n_g):
            if not valid[i, j]:
                continue
            s = values[i, j]
            f = frac[i, j]
            if s <= lo or s >= hi or f <= 0.0 or f >= 1.0:
                continue
            kk = k[i, j]
            y = 1.0 if match[i, j] else 0.0
            g_lo_bin = g_pos[kk] * y + g_tot[kk]
            g_hi_bin = g_pos[kk + 1] * y + g_tot[kk + 1]
            grad[i, j] = -w * (g_lo_bin - g_hi_bin) / eps
    return grad


@njit(cache=True)
def rank_queries(values, match, valid):
    n_q, n_g = values.shape
    ap = np.zeros(n_q)
    first = np.zeros(n_q, dtype=np.int64)
    n_pos = np.zeros(n_q, dtype=np.int64)
    buf_s = np.empty(n_g)
    buf_y = np.empty(n_g, dtype=np.bool_)
    for i in range(n_q):
        c = 0
        for j in range(n_g):
            if valid[i, j]:
                buf_s[c] = -values[i, j]
                buf_y[c] = match[i, j]
                c += 1
        order = np.argsort(buf_s[:c], kind="mergesort")
        p = 0
        for r in range(c):
            if buf_y[order[r]]:
                p += 1
        n_pos[i] = p
        if p == 0:
            continue
        hits = 0
        acc = 0.0
        for r in range(c):
            if buf_y[order[r]]:
                hits += 1
                acc += hits / (r + 1.0)
                if hits == 1:
                    first[i] = r + 1
        ap[i] = acc / p
    return ap, first, n_pos


@njit(cache=True)
def pairwise_euclidean(a, b):
    n_a, d = a.shape
    n_b = b.shape[0]
    out = np.empty((n_a, n_b))
    for i in range(n_a):
        for j in range(n_b):
            acc = 0.0
            for c in range(d):
                diff = a[i, c] - b[j, c]
                acc += diff * diff
            out[i, j] = np.sqrt(acc)
    return out
