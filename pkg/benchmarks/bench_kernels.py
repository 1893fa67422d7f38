"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--queries 64] [--gallery 2048] [--bins 40] [--repeat 5]

Each kernel is warmed up once (JIT compile) before timing; the best of
``--repeat`` runs is reported.
"""
import argparse
import time

import numpy as np

from mapreid import kernels


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n_q, n_g, m_bins, seed=0):
    rng = np.random.default_rng(seed)
    values = rng.uniform(-1, 1, (n_q, n_g))
    match = rng.random((n_q, n_g)) < 0.05
    match[:, 0] = True
    valid = np.ones((n_q, n_g), bool)
    hi, eps = 1.0, 2.0 / (m_bins - 1)
    a = rng.normal(size=(n_q, 64))
    b = rng.normal(size=(n_g, 64))

    def forward(impl):
        return lambda: impl.soft_hist_forward(values, match, valid, hi, eps, m_bins)

    def backward(impl):
        k, frac, pos, tot, n_pos = impl.soft_hist_forward(values, match, valid, hi, eps, m_bins)
        w = np.full(n_q, 1.0 / n_q)
        return lambda: impl.soft_hist_backward(k, frac, values, match, valid, pos, tot, n_pos, hi, eps, 1e-12, w)

    return {
        "soft_hist_forward": forward,
        "soft_hist_backward": backward,
        "rank_queries": lambda impl: (lambda: impl.rank_queries(values, match, valid)),
        "pairwise_euclidean": lambda impl: (lambda: impl.pairwise_euclidean(a, b)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--queries", type=int, default=64)
    ap.add_argument("--gallery", type=int, default=2048)
    ap.add_argument("--bins", type=int, default=40)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    if kernels.numba_impl is None:
        print("numba unavailable (or MAPREID_DISABLE_NUMBA set); timing numpy only")
    print(f"Q={args.queries} G={args.gallery} M={args.bins}")
    print(f"{'kernel':<20} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, make in cases(args.queries, args.gallery, args.bins).items():
        t_np = best_of(make(kernels.numpy_impl), args.repeat)
        if kernels.numba_impl is None:
            print(f"{name:<20} {t_np * 1e3:>10.2f} {'-':>10} {'-':>8}")
            continue
        t_nb = best_of(make(kernels.numba_impl), args.repeat)
        print(f"{name:<20} {t_np * 1e3:>10.2f} {t_nb * 1e3:>10.2f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
