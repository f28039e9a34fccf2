"""Time the compiled enumeration kernels against the numpy fallback.

    python benchmarks/bench_backends.py [--sites 20] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from rgexact import _backend


def workload(n: int):
    rng = np.random.default_rng(0)
    masks = np.array([(1 << i) | (1 << ((i + 1) % n)) for i in range(n)], dtype=np.uint64)
    values = rng.normal(size=n)
    lw = _backend.fallback.neg_energy(n, masks, values)
    bins = (np.arange(1 << n, dtype=np.int64) & ((1 << (n // 2)) - 1))
    return masks, values, lw, bins, 1 << (n // 2)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sites", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    n = args.sites
    masks, values, lw, bins, nbins = workload(n)
    pair = np.array([masks[0], masks[1]], dtype=np.uint64)
    shift = _backend.fallback.group_logsumexp(lw, bins, nbins)
    cases = {
        "fwht": lambda m: m.fwht(lw.copy()),
        "neg_energy": lambda m: m.neg_energy(n, masks, values),
        "char_values": lambda m: m.char_values(n, int(masks[0] | masks[3])),
        "group_logsumexp": lambda m: m.group_logsumexp(lw, bins, nbins),
        "group_moments": lambda m: m.group_moments(lw, bins, shift, pair),
    }
    mods = _backend.available()
    print(f"{n} sites, 2^{n} configurations, best of {args.repeat}")
    print(f"{'kernel':<18}" + "".join(f"{m.NAME:>12}" for m in mods) + ("   speedup" if len(mods) > 1 else ""))
    for name, fn in cases.items():
        times = [min(timeit.repeat(lambda: fn(m), number=1, repeat=args.repeat)) for m in mods]
        row = f"{name:<18}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) > 1:
            row += f"   {times[1] / times[0]:>6.2f}x"
        print(row)


if __name__ == "__main__":
    main()
