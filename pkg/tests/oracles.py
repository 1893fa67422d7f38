"""Independent reference implementations used only by the tests.

Nothing here imports the code paths it checks: AP is computed by counting
ranks pairwise (no sorting), the histogram AP from the dense kernel formula,
distances by explicit loops, and gradients by central differences.
"""
import math

import numpy as np


def brute_force_rank(s, valid, j):
    """1-based rank of entry j among valid entries (higher similarity first, ties -> lower index)."""
    r = 1
    for l in range(len(s)):
        if l != j and valid[l] and (s[l] > s[j] or (s[l] == s[j] and l < j)):
            r += 1
    return r


def brute_force_ap(s, y, valid=None):
    valid = np.ones(len(s), bool) if valid is None else valid
    pos = [j for j in range(len(s)) if valid[j] and y[j]]
    if not pos:
        return None
    ranks = {j: brute_force_rank(s, valid, j) for j in pos}
    total = 0.0
    for j in pos:
        better = sum(1 for i in pos if ranks[i] <= ranks[j])
        total += better / ranks[j]
    return total / len(pos)


def brute_force_eval(values, match, valid, max_rank):
    """``(map, cmc, per_query_ap, skipped)`` by pairwise rank counting."""
    aps, firsts, skipped = [], [], []
    for i in range(values.shape[0]):
        ap = brute_force_ap(values[i], match[i], valid[i])
        if ap is None:
            skipped.append(i)
            continue
        aps.append(ap)
        firsts.append(min(brute_force_rank(values[i], valid[i], j)
                          for j in range(values.shape[1]) if valid[i, j] and match[i, j]))
    cmc = [sum(1 for f in firsts if f <= r) / len(firsts) for r in range(1, max_rank + 1)]
    return sum(aps) / len(aps), np.array(cmc), aps, skipped


def dense_hist_ap(values, match, valid, m_bins, lo=-1.0, hi=1.0, tau=1e-12):
    """Mean histogram AP straight from the kernel formula, with a dense (Q, G, M) tensor."""
    eps = (hi - lo) / (m_bins - 1)
    centers = hi - eps * np.arange(m_bins)
    s = np.clip(values, lo, hi)
    delta = np.maximum(1.0 - np.abs(s[..., None] - centers) / eps, 0.0) * valid[..., None]
    yv = (match & valid)[..., None]
    h_pos = (delta * yv).sum(axis=1)
    h_all = delta.sum(axis=1)
    n_pos = (match & valid).sum(axis=1)
    aps = []
    for i in range(values.shape[0]):
        if n_pos[i] == 0:
            continue
        prec = np.cumsum(h_pos[i]) / np.maximum(np.cumsum(h_all[i]), tau)
        aps.append(float(np.sum(prec * h_pos[i] / n_pos[i])))
    return float(np.mean(aps))


def naive_distances(a, b):
    out = np.empty((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            out[i, j] = math.sqrt(sum((float(p) - float(q)) ** 2 for p, q in zip(a[i], b[j])))
    return out


def exhaustive_triplet(dist, labels, margin):
    """Batch-hard loss with selection by plain loops over a given distance matrix."""
    n = len(labels)
    hinges = []
    for i in range(n):
        dp, dn = -math.inf, math.inf
        for j in range(n):
            if j == i:
                continue
            if labels[j] == labels[i]:
                dp = max(dp, dist[i, j])
            else:
                dn = min(dn, dist[i, j])
        hinges.append(max(margin + dp - dn, 0.0))
    return math.fsum(hinges) / n


def central_diff(f, x, h=1e-6, coords=None):
    """Central-difference gradient of scalar ``f`` at ``x`` (optionally only at ``coords``)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    for c in idx:
        old = flat[c]
        flat[c] = old + h
        fp = f(x)
        flat[c] = old - h
        fm = f(x)
        flat[c] = old
        gflat[c] = (fp - fm) / (2 * h)
    return grad


def rel_err(analytic, numeric):
    """max |a - n| / max(1, |n|)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(n))))


def tie_free_instance(rng, q_max=8, g_max=32, pos_rate=0.3):
    """Random similarity/match matrices, distinct values, at least one positive per query."""
    n_q = int(rng.integers(1, q_max + 1))
    n_g = int(rng.integers(2, g_max + 1))
    values = rng.uniform(-1.0, 1.0, size=(n_q, n_g))
    match = rng.random((n_q, n_g)) < pos_rate
    match[np.arange(n_q), rng.integers(0, n_g, size=n_q)] = True
    return values, match
