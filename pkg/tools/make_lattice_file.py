"""Search an extensible rank-1 lattice generating vector and write it to stdout.

Component-by-component search over random odd candidates.  The figure of merit
is the squared worst-case error of the order-1 shift-invariant product kernel
with weights 1/j^2, summed in log scale over every power-of-two prefix
2^m_min .. 2^m_max of the radical-inverse ordered lattice.

Usage: python tools/make_lattice_file.py [d] [m_max] [candidates] [seed] > src/qmcfast/data/lattice_cbc.lat
"""
import sys

import numpy as np


def _bernoulli2(x):
    return x * x - x + 1.0 / 6.0


def main(d: int = 64, m_max: int = 16, candidates: int = 128, seed: int = 7, m_min: int = 4) -> None:
    rng = np.random.default_rng(seed)
    n = 2**m_max
    i = np.arange(n, dtype=np.uint64)
    rev = np.zeros(n, dtype=np.uint64)
    for k in range(32):
        rev |= ((i >> np.uint64(k)) & np.uint64(1)) << np.uint64(31 - k)
    mask = np.uint64(2**32 - 1)
    prod = np.ones(n)
    counts = 2.0 ** np.arange(m_min, m_max + 1)
    g = []
    for j in range(1, d + 1):
        w = 2 * np.pi**2 / j**2
        cands = [1] if j == 1 else (2 * rng.integers(0, n // 2, size=candidates) + 1).tolist()
        best, best_score, best_prod = None, np.inf, None
        for c in cands:
            x = ((rev * np.uint64(c)) & mask).astype(np.float64) / 2.0**32
            p = prod * (1.0 + w * _bernoulli2(x))
            cs = np.cumsum(p)[counts.astype(np.int64) - 1] / counts - 1.0
            score = np.sum(np.log(np.maximum(cs, 1e-300)))
            if score < best_score:
                best, best_score, best_prod = c, score, p
        g.append(best)
        prod = best_prod
    print(f"# lattice d={d}")
    for c in g:
        print(c)


if __name__ == "__main__":
    main(*[int(a) for a in sys.argv[1:]])
