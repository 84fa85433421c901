"""Randomized low-discrepancy point generators.

Rank-1 lattices, base-2 digital nets (with higher-order interlacing) and Halton
sequences, each with their randomizations, plus an IID baseline.

Conventions
-----------
* Indices are decomposed into digits least-significant first.
* Generating matrices are handled in two encodings.  The *bit* encoding is a
  0/1 array of shape ``(d, t, m)``; row 0 is the first digit after the binary
  point.  The *column* encoding stores each column as an unsigned integer with
  bit ``k`` (LSB = 0) equal to row ``k`` (the on-disk format).  Internally,
  columns are kept MSB-aligned to ``t_max`` bits so that XOR of columns gives
  the point's integer numerator directly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "LatticeConfig",
    "DigitalNetConfig",
    "HaltonConfig",
    "van_der_corput",
    "lattice_points",
    "digital_net_points",
    "linear_matrix_scramble",
    "nested_uniform_scramble",
    "interlace",
    "halton_points",
    "iid_uniform",
    "first_primes",
    "load_lattice_vector",
    "load_net_matrices",
    "columns_to_bits",
    "bits_to_columns",
]

DATA_ENV = "QMCFAST_DATA_DIR"
LATTICE_FILE = "lattice_cbc.lat"
NET_FILE = "sobol_joe_kuo.dnet"

_U1 = np.uint64(1)


# ----------------------------------------------------------------------------
# hashing (counter-based randomness for lazily defined permutation trees)
# ----------------------------------------------------------------------------


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, vectorized over uint64 arrays."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _combine(h: np.ndarray, v) -> np.ndarray:
    with np.errstate(over="ignore"):
        return _mix64(np.asarray(h, dtype=np.uint64) * np.uint64(31) ^ np.asarray(v, dtype=np.uint64))


# ----------------------------------------------------------------------------
# van der Corput and primes
# ----------------------------------------------------------------------------


def _digits(i: np.ndarray, b: int, t: int) -> np.ndarray:
    """Base-``b`` digits of integers ``i``, LSB first, shape ``i.shape + (t,)``."""
    i = np.asarray(i, dtype=np.int64).copy()
    out = np.empty(i.shape + (t,), dtype=np.int64)
    for k in range(t):
        out[..., k] = i % b
        i //= b
    return out


def _digit_count(b: int, bits: int = 52) -> int:
    """Number of base-``b`` digits resolvable in double precision."""
    return max(1, int(np.floor(bits * np.log(2) / np.log(b))))


def van_der_corput(i, b: int = 2):
    """Radical inverse ``sum_t i_{t-1} b^{-t}`` of a nonnegative integer (or array).

    Examples
    --------
    >>> van_der_corput(3, 2)
    0.75
    """
    scalar = np.ndim(i) == 0
    i = np.asarray(i, dtype=np.int64)
    if np.any(i < 0):
        raise ValueError("index must be nonnegative")
    x = np.zeros(i.shape)
    f = 1.0 / b
    rem = i.copy()
    while np.any(rem > 0):
        x += (rem % b) * f
        rem //= b
        f /= b
    return float(x) if scalar else x


def first_primes(d: int) -> list[int]:
    primes: list[int] = []
    c = 2
    while len(primes) < d:
        if all(c % p for p in primes if p * p <= c):
            primes.append(c)
        c += 1
    return primes


# ----------------------------------------------------------------------------
# data files
# ----------------------------------------------------------------------------


def _data_path(name: str, path: Optional[str | os.PathLike]) -> Path:
    if path is not None:
        return Path(path)
    env = os.environ.get(DATA_ENV)
    if env:
        return Path(env) / name
    return Path(str(resources.files("qmcfast") / "data" / name))


def _read_lines(p: Path) -> list[tuple[int, str]]:
    with open(p) as fh:
        return [(k + 1, ln.strip()) for k, ln in enumerate(fh) if ln.strip()]


def load_lattice_vector(path=None, d: Optional[int] = None) -> np.ndarray:
    """Read a lattice file: header ``# lattice d=<d>`` then one integer per line."""
    p = _data_path(LATTICE_FILE, path)
    lines = _read_lines(p)
    if not lines or not lines[0][1].startswith("# lattice"):
        raise ValueError(f"{p}:1: expected '# lattice d=<d>' header")
    g = []
    for lineno, ln in lines[1:]:
        try:
            g.append(int(ln))
        except ValueError:
            raise ValueError(f"{p}:{lineno}: not an integer: {ln!r}") from None
    g = np.array(g, dtype=np.int64)
    if d is not None:
        if d > len(g):
            raise ValueError(f"lattice file holds {len(g)} dimensions, {d} requested")
        g = g[:d]
    return g


def load_net_matrices(path=None, d: Optional[int] = None) -> tuple[np.ndarray, int]:
    """Read a net file: header ``# dnet d=<d> m=<m> t=<t>`` then ``d`` lines of ``m`` columns.

    Returns the LSB-first column integers, shape ``(d, m)``, and ``t``.
    """
    p = _data_path(NET_FILE, path)
    lines = _read_lines(p)
    head = lines[0][1] if lines else ""
    if not head.startswith("# dnet"):
        raise ValueError(f"{p}:1: expected '# dnet d=<d> m=<m> t=<t>' header")
    try:
        meta = dict(tok.split("=") for tok in head.split()[2:])
        m, t = int(meta["m"]), int(meta["t"])
    except (KeyError, ValueError):
        raise ValueError(f"{p}:1: malformed header {head!r}") from None
    rows = []
    for lineno, ln in lines[1:]:
        try:
            cols = [int(c) for c in ln.split()]
        except ValueError:
            raise ValueError(f"{p}:{lineno}: non-integer column") from None
        if len(cols) != m:
            raise ValueError(f"{p}:{lineno}: expected {m} columns, found {len(cols)}")
        rows.append(cols)
    C = np.array(rows, dtype=np.uint64)
    if d is not None:
        if d > C.shape[0]:
            raise ValueError(f"net file holds {C.shape[0]} dimensions, {d} requested")
        C = C[:d]
    return C, t


# ----------------------------------------------------------------------------
# bit-matrix helpers
# ----------------------------------------------------------------------------


def columns_to_bits(cols: np.ndarray, t: int) -> np.ndarray:
    """LSB-first column integers ``(d, m)`` -> 0/1 matrices ``(d, t, m)``."""
    cols = np.asarray(cols, dtype=np.uint64)
    k = np.arange(t, dtype=np.uint64)
    return ((cols[:, None, :] >> k[None, :, None]) & _U1).astype(np.uint8)


def bits_to_columns(bits: np.ndarray) -> np.ndarray:
    """0/1 matrices ``(d, t, m)`` -> LSB-first column integers ``(d, m)``."""
    bits = np.asarray(bits, dtype=np.uint64)
    t = bits.shape[1]
    if t > 64:
        raise ValueError("at most 64 rows fit in a column integer")
    k = np.arange(t, dtype=np.uint64)
    return np.bitwise_or.reduce(bits << k[None, :, None], axis=1)


def _bits_to_aligned(bits: np.ndarray, t_max: int) -> np.ndarray:
    """0/1 matrices ``(d, t, m)`` -> MSB-aligned column integers (row k at bit t_max-1-k)."""
    bits = np.asarray(bits, dtype=np.uint64)[:, :t_max, :]
    t = bits.shape[1]
    k = np.arange(t, dtype=np.uint64)
    shifts = np.uint64(t_max - 1) - k
    return np.bitwise_or.reduce(bits << shifts[None, :, None], axis=1)


def linear_matrix_scramble(S: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Left-multiply generating matrices by scrambling matrices over GF(2).

    Parameters
    ----------
    S : array (d, t_out, t_in) of 0/1, lower triangular with unit diagonal.
    C : array (d, t_in, m) of 0/1.

    Returns
    -------
    array (d, t_out, m) with ``S_j C_j mod 2``.
    """
    S = np.asarray(S, dtype=np.int64)
    C = np.asarray(C, dtype=np.int64)
    if S.ndim != 3 or C.ndim != 3 or S.shape[0] != C.shape[0] or S.shape[2] != C.shape[1]:
        raise ValueError(f"dimension mismatch: S {S.shape}, C {C.shape}")
    return ((S @ C) % 2).astype(np.uint8)


def random_lms_matrices(rng: np.random.Generator, d: int, t_out: int, t_in: int) -> np.ndarray:
    """Random unit-lower-triangular 0/1 matrices ``(d, t_out, t_in)``."""
    S = rng.integers(0, 2, size=(d, t_out, t_in), dtype=np.uint8)
    r = np.arange(t_out)[:, None]
    c = np.arange(t_in)[None, :]
    S = np.where(c < r, S, 0).astype(np.uint8)
    S[:, r == c] = 1
    return S


def interlace(matrices: np.ndarray, alpha: int) -> np.ndarray:
    """Digitally interlace ``alpha * d`` matrices of shape ``(t, m)`` into ``d`` matrices ``(alpha t, m)``.

    Row ``k`` of output matrix ``j`` is row ``k // alpha`` of input matrix
    ``alpha * j + k % alpha`` (0-indexed).
    """
    A = np.asarray(matrices)
    if alpha < 1:
        raise ValueError("alpha must be positive")
    if A.ndim != 3 or A.shape[0] % alpha != 0 or A.shape[0] == 0:
        raise ValueError(f"need a positive multiple of alpha={alpha} matrices, got shape {A.shape}")
    if alpha == 1:
        return A.copy()
    na, t, m = A.shape
    d = na // alpha
    # (d, alpha, t, m) -> (d, t, alpha, m) -> (d, t*alpha, m)
    return A.reshape(d, alpha, t, m).transpose(0, 2, 1, 3).reshape(d, t * alpha, m)


# ----------------------------------------------------------------------------
# lattices
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class LatticeConfig:
    """Rank-1 lattice description.

    ``order`` is ``"radical_inverse"`` (extensible) or ``"linear"``.
    """

    g: tuple
    base: int = 2
    order: str = "radical_inverse"
    shift: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "g", tuple(int(v) for v in self.g))
        if not self.g or min(self.g) < 1:
            raise ValueError("generating vector entries must be positive integers")
        if self.order not in ("radical_inverse", "linear"):
            raise ValueError(f"unknown order {self.order!r}")
        if self.base < 2:
            raise ValueError("base must be at least 2")
        if self.shift is not None:
            s = tuple(float(v) for v in self.shift)
            if len(s) != len(self.g) or any(not 0.0 <= v < 1.0 for v in s):
                raise ValueError("shift must lie in [0,1)^d")
            object.__setattr__(self, "shift", s)

    @property
    def d(self) -> int:
        return len(self.g)

    @classmethod
    def default(cls, d: int, **kw) -> "LatticeConfig":
        return cls(g=tuple(load_lattice_vector(d=d)), **kw)

    def randomize(self, rng) -> "LatticeConfig":
        rng = np.random.default_rng(rng)
        return replace(self, shift=tuple(rng.random(self.d)))


def lattice_points(cfg: LatticeConfig, n: int, start: int = 0) -> np.ndarray:
    """Points ``start .. start+n-1`` of the (shifted) lattice, shape ``(n, d)``."""
    if n < 0 or start < 0:
        raise ValueError("n and start must be nonnegative")
    g = np.array(cfg.g, dtype=np.int64)
    idx = np.arange(start, start + n, dtype=np.int64)
    if cfg.order == "linear":
        m = round(np.log(n) / np.log(cfg.base)) if n > 0 else 0
        if n < 1 or cfg.base**m != n or start != 0:
            raise ValueError("linear order needs n = base^m and start = 0")
        x = ((idx[:, None] * g[None, :]) % n) / n
    elif cfg.base == 2:
        # exact integer arithmetic modulo 2^32
        mask = np.uint64(2**32 - 1)
        ui = idx.astype(np.uint64)
        rev = np.zeros_like(ui)
        for k in range(32):
            rev |= ((ui >> np.uint64(k)) & _U1) << np.uint64(31 - k)
        with np.errstate(over="ignore"):
            z = (rev[:, None] * (g.astype(np.uint64) & mask)[None, :]) & mask
        x = z.astype(np.float64) / 2.0**32
    else:
        v = van_der_corput(idx, cfg.base)
        x = np.mod(np.outer(v, g), 1.0)
    if cfg.shift is not None:
        x = np.mod(x + np.array(cfg.shift)[None, :], 1.0)
    return x


# ----------------------------------------------------------------------------
# digital nets
# ----------------------------------------------------------------------------

_RANDOMIZATIONS = ("none", "digital_shift", "lms_plus_shift", "nus", "permute")


@dataclass(frozen=True)
class DigitalNetConfig:
    """Base-2 digital net description.

    Parameters
    ----------
    matrices : LSB-first column integers ``(alpha*d, m_max)``.
    t_in : number of rows stored in ``matrices``.
    t_max : output digit precision (bits); at most 63.
    order : ``"radical_inverse"`` or ``"gray_code"``.
    alpha : interlacing order.
    randomization : one of ``none``, ``digital_shift``, ``lms_plus_shift``,
        ``nus``, ``permute``.
    lms : unit-lower-triangular 0/1 matrices ``(alpha*d, t_max, t_in)``, for
        ``lms_plus_shift``.  Applied before interlacing.
    shift : ``d`` integers of ``t_max`` bits (MSB = first digit), for shifts.
    seed : seed of the NUS tree.
    """

    matrices: np.ndarray = field(repr=False)
    t_in: int
    t_max: int = 53
    order: str = "radical_inverse"
    alpha: int = 1
    randomization: str = "none"
    lms: Optional[np.ndarray] = field(default=None, repr=False)
    shift: Optional[np.ndarray] = field(default=None, repr=False)
    seed: Optional[int] = None

    def __post_init__(self):
        C = np.array(self.matrices, dtype=np.uint64)
        C.setflags(write=False)
        object.__setattr__(self, "matrices", C)
        if C.ndim != 2:
            raise ValueError("matrices must be a (alpha*d, m) array of column integers")
        if not 1 <= self.t_max <= 63:
            raise ValueError("t_max must lie in 1..63")
        if self.alpha < 1 or C.shape[0] % self.alpha:
            raise ValueError(f"{C.shape[0]} matrices cannot be interlaced with alpha={self.alpha}")
        if self.order not in ("radical_inverse", "gray_code"):
            raise ValueError(f"unknown order {self.order!r}")
        if self.randomization not in _RANDOMIZATIONS:
            raise ValueError(f"unknown randomization {self.randomization!r}")
        if self.randomization == "lms_plus_shift" and self.lms is None:
            raise ValueError("lms_plus_shift needs lms matrices")
        if self.lms is not None:
            S = np.array(self.lms, dtype=np.uint8)
            if S.shape != (C.shape[0], self.t_max, self.t_in):
                raise ValueError(f"lms shape {S.shape} != {(C.shape[0], self.t_max, self.t_in)}")
            if not np.all(np.diagonal(S, axis1=1, axis2=2) == 1):
                raise ValueError("lms matrices need a unit diagonal")
            S.setflags(write=False)
            object.__setattr__(self, "lms", S)
        if self.randomization == "nus" and self.seed is None:
            raise ValueError("nus needs a seed")
        if self.shift is not None:
            s = np.array(self.shift, dtype=np.uint64)
            if s.shape != (self.d,):
                raise ValueError("shift must hold d integers")
            if np.any(s >> np.uint64(self.t_max)):
                raise ValueError("shift exceeds t_max bits")
            s.setflags(write=False)
            object.__setattr__(self, "shift", s)

    @property
    def d(self) -> int:
        return self.matrices.shape[0] // self.alpha

    @property
    def m_max(self) -> int:
        return self.matrices.shape[1]

    @classmethod
    def default(cls, d: int, alpha: int = 1, **kw) -> "DigitalNetConfig":
        C, t = load_net_matrices(d=alpha * d)
        return cls(matrices=C, t_in=t, alpha=alpha, **kw)

    def randomize(self, rng, kind: str = "lms_plus_shift", lms: Optional[np.ndarray] = None) -> "DigitalNetConfig":
        """Return a randomized copy.

        ``lms`` may be passed to share scrambling matrices across sequences
        (needed for fast Gram structure across levels).
        """
        rng = np.random.default_rng(rng)
        shift = rng.integers(0, 2**self.t_max, size=self.d, dtype=np.uint64)
        if kind in ("digital_shift", "permute"):
            return replace(self, randomization=kind, shift=shift, lms=None)
        if kind == "lms_plus_shift":
            if lms is None:
                lms = random_lms_matrices(rng, self.matrices.shape[0], self.t_max, self.t_in)
            return replace(self, randomization=kind, shift=shift, lms=lms)
        if kind == "nus":
            return replace(self, randomization=kind, seed=int(rng.integers(0, 2**63)), shift=None, lms=None)
        if kind == "none":
            return replace(self, randomization="none", shift=None, lms=None, seed=None)
        raise ValueError(f"unknown randomization {kind!r}")

    def aligned_columns(self) -> np.ndarray:
        """Effective generating matrices, MSB-aligned to ``t_max`` bits, ``(d, m_max)``."""
        bits = columns_to_bits(self.matrices, self.t_in)
        if self.randomization == "lms_plus_shift":
            bits = linear_matrix_scramble(self.lms, bits)
        bits = interlace(bits, self.alpha)[:, : self.t_max, :]
        return _bits_to_aligned(bits, self.t_max)


def _net_integers(cols: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """XOR of the columns selected by the bits of ``idx``; shape ``(n, d)``."""
    z = np.zeros((idx.size, cols.shape[0]), dtype=np.uint64)
    ui = idx.astype(np.uint64)
    for k in range(cols.shape[1]):
        sel = ((ui >> np.uint64(k)) & _U1).astype(bool)
        if not sel.any():
            continue
        z[sel] ^= cols[:, k][None, :]
    return z


def nested_uniform_scramble(z: np.ndarray, t: int, seed: int, flip=None) -> np.ndarray:
    """Owen-scramble ``t``-bit integers (MSB = first digit), base 2.

    Output digit ``k`` of coordinate ``j`` is the input digit XOR a flip bit
    that depends only on ``(seed, j, k, input digits 0..k-1)``.  ``flip`` may
    override the bit function, taking ``(j, k, prefix)`` arrays and returning
    0/1 arrays; the default draws it from a counter-based hash, which is
    equivalent to a lazily built and memoized permutation tree.
    """
    z = np.asarray(z, dtype=np.uint64)
    if z.ndim == 1:
        z = z[:, None]
    n, d = z.shape
    out = np.zeros_like(z)
    j = np.broadcast_to(np.arange(d, dtype=np.uint64)[None, :], z.shape)
    base = _combine(np.uint64(seed), j)
    for k in range(t):
        sh = np.uint64(t - 1 - k)
        bit = (z >> sh) & _U1
        prefix = z >> np.uint64(t - k)  # input digits 0..k-1
        if flip is None:
            h = _combine(_combine(base, np.uint64(k)), prefix)
            fb = h >> np.uint64(63)
        else:
            fb = np.asarray(flip(j, k, prefix), dtype=np.uint64)
        out |= (bit ^ fb) << sh
    return out


def digital_net_points(cfg: DigitalNetConfig, i_start: int, i_end: int, return_ints: bool = False) -> np.ndarray:
    """Points ``i_start .. i_end-1`` of the (randomized) net, shape ``(n, d)``."""
    if i_end > 2**cfg.m_max:
        raise ValueError(f"i_end={i_end} exceeds 2^m_max = {2 ** cfg.m_max}")
    if not 0 <= i_start <= i_end:
        raise ValueError("need 0 <= i_start <= i_end")
    idx = np.arange(i_start, i_end, dtype=np.int64)
    if cfg.order == "gray_code":
        idx = idx ^ (idx >> 1)
    z = _net_integers(cfg.aligned_columns(), idx)
    if cfg.randomization == "nus":
        z = nested_uniform_scramble(z, cfg.t_max, cfg.seed)
    if cfg.shift is not None and cfg.randomization in ("digital_shift", "lms_plus_shift", "permute"):
        z ^= cfg.shift[None, :]
    if return_ints:
        return z
    return z.astype(np.float64) * 2.0 ** (-cfg.t_max)


def gray_code_steps(cfg: DigitalNetConfig, n: int) -> np.ndarray:
    """Generate the first ``n`` unrandomized Gray-order integers by single-column XOR updates."""
    cols = cfg.aligned_columns()
    z = np.zeros((n, cols.shape[0]), dtype=np.uint64)
    for i in range(1, n):
        k = (i & -i).bit_length() - 1
        z[i] = z[i - 1] ^ cols[:, k]
    return z


# ----------------------------------------------------------------------------
# Halton
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class HaltonConfig:
    """Halton sequence in the first ``d`` prime bases.

    ``randomization`` is ``none``, ``digital_shift``, ``lms_plus_permutation``
    or ``nus``; the random state is drawn from ``seed``.
    """

    d: int
    randomization: str = "none"
    seed: Optional[int] = None
    shift_digits: Optional[tuple] = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be positive")
        if self.randomization not in ("none", "digital_shift", "lms_plus_permutation", "nus"):
            raise ValueError(f"unknown randomization {self.randomization!r}")
        if self.randomization != "none" and self.seed is None and self.shift_digits is None:
            raise ValueError("randomized Halton needs a seed")

    @property
    def bases(self) -> list[int]:
        return first_primes(self.d)


def _halton_coordinate(idx: np.ndarray, b: int, j: int, cfg: HaltonConfig, rng_seed) -> np.ndarray:
    t = _digit_count(b)
    dig = _digits(idx, b, t)  # (n, t) LSB-first digits of i -> output digit k = dig[:, k]
    kind = cfg.randomization
    if kind == "digital_shift":
        if cfg.shift_digits is not None:
            sh = np.array(cfg.shift_digits[j], dtype=np.int64)[:t]
            sh = np.pad(sh, (0, t - sh.size))
        else:
            sh = np.random.default_rng([rng_seed, j]).integers(0, b, size=t)
        dig = (dig + sh[None, :]) % b
    elif kind == "lms_plus_permutation":
        rng = np.random.default_rng([rng_seed, j])
        S = np.tril(rng.integers(0, b, size=(t, t)), -1) + np.diag(rng.integers(1, b, size=t))
        dig = (dig @ S.T) % b
        perms = np.argsort(rng.random((t, b)), axis=1)
        dig = perms[np.arange(t)[None, :], dig]
    elif kind == "nus":
        h = np.broadcast_to(_combine(np.uint64(rng_seed), np.uint64(j)), (idx.size,)).copy()
        out = np.empty_like(dig)
        cs = np.arange(b, dtype=np.uint64)
        for k in range(t):
            keys = _combine(h[:, None], cs[None, :])
            perm = np.argsort(keys, axis=1)
            out[:, k] = perm[np.arange(idx.size), dig[:, k]]
            h = _combine(h, dig[:, k].astype(np.uint64))
        dig = out
    w = float(b) ** -np.arange(1, t + 1)
    return np.minimum(dig @ w, np.nextafter(1.0, 0.0))


def halton_points(cfg: HaltonConfig, n: int, start: int = 0) -> np.ndarray:
    """Points ``start .. start+n-1`` of the (randomized) Halton sequence, shape ``(n, d)``."""
    idx = np.arange(start, start + n, dtype=np.int64)
    if cfg.randomization == "none":
        return np.column_stack([van_der_corput(idx, b) for b in cfg.bases]) if n else np.zeros((0, cfg.d))
    seed = cfg.seed if cfg.seed is not None else 0
    cols = [_halton_coordinate(idx, b, j, cfg, seed) for j, b in enumerate(cfg.bases)]
    return np.column_stack(cols) if n else np.zeros((0, cfg.d))


# ----------------------------------------------------------------------------
# IID
# ----------------------------------------------------------------------------


def iid_uniform(seed, n: int, d: int) -> np.ndarray:
    """IID uniform points, deterministic given ``seed``."""
    return np.random.default_rng(seed).random((n, d))


def replicate(cfg, R: int, seed, kind: Optional[str] = None) -> list:
    """``R`` independently randomized copies of a lattice or net config."""
    rngs = np.random.default_rng(seed).spawn(R)
    if isinstance(cfg, LatticeConfig):
        return [cfg.randomize(r) for r in rngs]
    if isinstance(cfg, DigitalNetConfig):
        return [cfg.randomize(r, kind or "lms_plus_shift") for r in rngs]
    raise TypeError(f"cannot replicate {type(cfg).__name__}")


def generate(cfg, n: int, start: int = 0) -> np.ndarray:
    """Dispatch point generation on the config type."""
    if isinstance(cfg, LatticeConfig):
        return lattice_points(cfg, n, start)
    if isinstance(cfg, DigitalNetConfig):
        return digital_net_points(cfg, start, start + n)
    if isinstance(cfg, HaltonConfig):
        return halton_points(cfg, n, start)
    raise TypeError(f"unknown config {type(cfg).__name__}")
