"""Write the default base-2 generating matrices (Joe-Kuo 6.21201 direction numbers).

The direction numbers are read from scipy's bundled Sobol' tables (via an
unscrambled ``scipy.stats.qmc.Sobol`` instance) and re-encoded
so that bit k (LSB = 0) of each stored column integer is matrix row k.

Usage: python tools/make_dnet_file.py [d] [m] > src/qmcfast/data/sobol_joe_kuo.dnet
"""
import sys

from scipy.stats import qmc


def main(d: int = 256, m: int = 32) -> None:
    v = qmc.Sobol(d, scramble=False, bits=m)._sv
    print(f"# dnet d={d} m={m} t={m}")
    for j in range(d):
        cols = []
        for k in range(m):
            msb = int(v[j, k])
            cols.append(int(format(msb, f"0{m}b")[::-1], 2))
        print(" ".join(str(c) for c in cols))


if __name__ == "__main__":
    args = [int(a) for a in sys.argv[1:]]
    main(*args)
