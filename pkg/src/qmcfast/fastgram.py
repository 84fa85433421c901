"""Gram matrices represented by their eigenvalues.

Matched pairs (lattice + SI kernel, base-2 net + DSI kernel) give Gram matrices
``K = V diag(lam) V^H`` with ``V`` the IFFTBR (lattices) or FWHT (nets)
transform, so products, solves and log-determinants cost ``O(n log n)`` once
``lam = sqrt(n) V^H K[:, 0]`` is known.

For several sequences that are prefixes of one another (sizes
``n_1 >= ... >= n_L``), the cross-Gram blocks share this structure:
``K_{ab} = V_a Lam_{ab} V_b^H`` where ``Lam_{ab}`` stacks ``n_a / n_b``
diagonal ``n_b x n_b`` blocks.  :class:`BlockLambda` stores these, and
:func:`block_inverse_det` inverts them by a Schur-complement sweep over levels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import fft as sfft

from . import fastxform as fx
from . import kernels as kn

__all__ = [
    "StructuredGram",
    "BlockLambda",
    "ClassBlockMatrix",
    "build_spectrum",
    "first_column",
    "transform_kind",
    "forward",
    "inverse",
    "matvec",
    "solve",
    "logdet",
    "trace_inv",
    "block_inverse_det",
    "build_block_lambda",
    "kernel_discrepancy",
    "real_spectrum",
    "optimal_weights",
]


def transform_kind(spec: kn.KernelSpec) -> str:
    if spec.is_si:
        return "fftbr"
    if spec.is_dsi:
        return "fwht"
    raise ValueError(f"{spec.family} has no fast Gram structure")


def forward(kind: str, y: np.ndarray) -> np.ndarray:
    """``V^H y`` along the last axis."""
    return fx.fftbr(y) if kind == "fftbr" else fx.fwht(y)


def inverse(kind: str, y: np.ndarray) -> np.ndarray:
    """``V y`` along the last axis."""
    return fx.ifftbr(y) if kind == "fftbr" else fx.fwht(y)


def real_spectrum(kind: str, cols: np.ndarray, permuted: bool = False) -> np.ndarray:
    """``sqrt(n) V^H c`` for first columns ``c`` of real symmetric structured Grams.

    Such spectra are real, so the FFT path only needs a real transform.
    ``permuted`` says the columns are already in bit-reversed order.
    """
    cols = np.asarray(cols, dtype=np.float64)
    n = cols.shape[-1]
    if kind == "fwht":
        return np.sqrt(n) * fx.fwht(cols)
    if not permuted:
        cols = cols[..., fx.bit_reversal_permutation(n)]
    half = sfft.rfft(cols, axis=-1).real
    # entry k equals entry n - k
    return np.concatenate([half, half[..., -2:0:-1]], axis=-1)


def _check_pairing(spec: kn.KernelSpec, seq) -> None:
    if seq is None:
        return
    from .ldseq import DigitalNetConfig, LatticeConfig

    if isinstance(seq, LatticeConfig):
        if not spec.is_si:
            raise ValueError("lattice points need a shift-invariant kernel")
        if seq.order != "radical_inverse" or seq.base != 2:
            raise ValueError("fast Gram structure needs base-2 radical-inverse lattices")
    elif isinstance(seq, DigitalNetConfig):
        if not spec.is_dsi:
            raise ValueError("digital nets need a digitally-shift-invariant kernel")
        if seq.randomization == "nus":
            raise ValueError("nested uniform scrambling destroys the fast Gram structure")
    else:
        raise ValueError(f"no fast structure for {type(seq).__name__}")


def first_column(points: np.ndarray, spec: kn.KernelSpec, rows: Optional[int] = None) -> np.ndarray:
    """``K(x_i, x_0)`` for ``i < rows``; DSI kernels are evaluated on integer XORs."""
    X = np.asarray(points)
    X = X if rows is None else X[:rows]
    if spec.is_dsi:
        Z = kn.to_bits(X, spec.t)
        return np.asarray(kn.eval_from_bits(spec, Z ^ Z[:1]), dtype=np.float64)
    return np.asarray(kn.multivariate_eval(spec, X, X[:1]), dtype=np.float64)


@dataclass(frozen=True)
class StructuredGram:
    """Gram matrix ``V diag(lam) V^H`` (nugget already folded into ``lam``)."""

    kind: str
    lam: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.kind not in ("fftbr", "fwht"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        lam = np.array(self.lam)
        fx.log2_exact(lam.size)
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)

    @property
    def n(self) -> int:
        return self.lam.size

    @property
    def lam0(self) -> float:
        """Row sum ``sum_i K(x_i, x_0)``: the eigenvalue of the constant vector."""
        return float(np.real(self.lam[0]))

    def _real(self, v):
        return np.real(v) if self.kind == "fftbr" else v

    def matvec(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y)
        out = inverse(self.kind, forward(self.kind, y) * self.lam)
        return self._real(out) if np.isrealobj(y) else out

    def _check_spd(self):
        if np.any(np.real(self.lam) <= 0):
            raise np.linalg.LinAlgError("nonpositive eigenvalue: Gram matrix is not SPD")

    def solve(self, y: np.ndarray) -> np.ndarray:
        self._check_spd()
        y = np.asarray(y)
        out = inverse(self.kind, forward(self.kind, y) / self.lam)
        return self._real(out) if np.isrealobj(y) else out

    def solve2(self, y: np.ndarray) -> np.ndarray:
        """``K^{-2} y``."""
        self._check_spd()
        y = np.asarray(y)
        out = inverse(self.kind, forward(self.kind, y) / self.lam**2)
        return self._real(out) if np.isrealobj(y) else out

    def logdet(self) -> float:
        self._check_spd()
        return float(np.sum(np.log(np.abs(self.lam))))

    def trace_inv(self) -> float:
        self._check_spd()
        return float(np.sum(np.real(1.0 / self.lam)))

    def dense(self) -> np.ndarray:
        """Assemble ``V diag(lam) V^H`` densely (for testing)."""
        cols = inverse(self.kind, forward(self.kind, np.eye(self.n)) * self.lam)
        # rows of the batch are images of unit vectors: cols[k] = K e_k
        return self._real(cols.T)


def build_spectrum(points: np.ndarray, spec: kn.KernelSpec, xi: float = 0.0, seq=None) -> StructuredGram:
    """Eigenvalues of ``K + xi I`` from its first column.

    ``points`` must be the first ``2^m`` points (in generation order) of a
    matched sequence; pass its config as ``seq`` to have the pairing checked.
    """
    _check_pairing(spec, seq)
    kind = transform_kind(spec)
    X = np.asarray(points)
    fx.log2_exact(X.shape[0])
    k = first_column(X, spec)
    k[0] += xi
    lam = np.sqrt(k.size) * forward(kind, k)
    if kind == "fwht":
        lam = np.real(lam)
    return StructuredGram(kind, lam)


def matvec(G: StructuredGram, y):
    return G.matvec(y)


def solve(G: StructuredGram, y):
    return G.solve(y)


def logdet(G: StructuredGram) -> float:
    return G.logdet()


def trace_inv(G: StructuredGram) -> float:
    return G.trace_inv()


# ----------------------------------------------------------------------------
# multitask block spectra
# ----------------------------------------------------------------------------


def _check_sizes(sizes: Sequence[int]) -> tuple:
    sizes = tuple(int(s) for s in sizes)
    for s in sizes:
        fx.log2_exact(s)
    if any(a < b for a, b in zip(sizes, sizes[1:])):
        raise ValueError("level sizes must be non-increasing")
    return sizes


@dataclass(frozen=True)
class BlockLambda:
    """Block eigenvalue matrix for levels of sizes ``n_1 >= ... >= n_L``.

    ``blocks[(a, b)]`` for ``a <= b`` is a length-``n_a`` vector: entry ``r`` of
    block ``Lam_{ab}`` sits at row ``r``, column ``r mod n_b``.  Blocks with
    ``a > b`` are the conjugate transposes.
    """

    sizes: tuple
    blocks: dict = field(repr=False)
    kind: str = "fwht"

    def __post_init__(self):
        sizes = _check_sizes(self.sizes)
        object.__setattr__(self, "sizes", sizes)
        L = len(sizes)
        for a in range(L):
            for b in range(a, L):
                v = self.blocks.get((a, b))
                if v is None or np.shape(v) != (sizes[a],):
                    raise ValueError(f"block ({a}, {b}) must be a length-{sizes[a]} vector")

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    def dense(self) -> np.ndarray:
        off, sizes = self.offsets, self.sizes
        N = off[-1]
        dtype = np.complex128 if any(np.iscomplexobj(v) for v in self.blocks.values()) else np.float64
        M = np.zeros((N, N), dtype=dtype)
        for (a, b), v in self.blocks.items():
            r = np.arange(sizes[a])
            c = r % sizes[b]
            M[off[a] + r, off[b] + c] = v
            if a != b:
                M[off[b] + c, off[a] + r] = np.conj(v)
        return M

    def to_class_blocks(self) -> "ClassBlockMatrix":
        """Regroup into independent dense blocks, one per residue class mod ``n_L``."""
        cb = ClassBlockMatrix.empty(self.sizes, len(self.sizes), self.sizes[-1], self._dtype())
        for (a, b), v in self.blocks.items():
            r = np.arange(self.sizes[a])
            cb.set_entries(a, r, b, r % self.sizes[b], v)
            if a != b:
                cb.set_entries(b, r % self.sizes[b], a, r, np.conj(v))
        return cb

    def _dtype(self):
        return np.complex128 if any(np.iscomplexobj(v) for v in self.blocks.values()) else np.float64


@dataclass
class ClassBlockMatrix:
    """Block-diagonal matrix over residue classes.

    Covers levels ``0..k-1``.  Index ``(a, r)`` (level ``a``, row ``r``) belongs
    to class ``r mod n`` where ``n`` is the modulus.  ``blocks[c]`` is the dense
    matrix of class ``c``, ordered by level then row.
    """

    sizes: tuple
    k: int
    n: int
    blocks: np.ndarray

    @staticmethod
    def _layout(sizes, k, n):
        # position of (a, r) inside its class block
        counts = [sizes[a] // n for a in range(k)]
        starts = np.concatenate([[0], np.cumsum(counts)]).astype(int)
        return counts, starts

    @classmethod
    def empty(cls, sizes, k, n, dtype=np.float64) -> "ClassBlockMatrix":
        counts, starts = cls._layout(sizes, k, n)
        s = int(starts[-1])
        return cls(tuple(sizes), k, n, np.zeros((n, s, s), dtype=dtype))

    def position(self, a: int, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        counts, starts = self._layout(self.sizes, self.k, self.n)
        r = np.asarray(r)
        return r % self.n, starts[a] + r // self.n

    def set_entries(self, a, ra, b, rb, v):
        ca, pa = self.position(a, ra)
        cb, pb = self.position(b, rb)
        if np.any(ca != cb):
            raise ValueError("entries must lie within one residue class")
        self.blocks[ca, pa, pb] = v

    def entry(self, a: int, ra, b: int, rb):
        ca, pa = self.position(a, ra)
        cb, pb = self.position(b, rb)
        return np.where(ca == cb, self.blocks[ca, pa, np.where(ca == cb, pb, 0)], 0)

    def regroup(self, n_new: int) -> "ClassBlockMatrix":
        """Same matrix, coarser classes (``n_new`` divides ``n``)."""
        if self.n % n_new:
            raise ValueError("new modulus must divide the old one")
        out = ClassBlockMatrix.empty(self.sizes, self.k, n_new, self.blocks.dtype)
        counts, starts = self._layout(self.sizes, self.k, self.n)
        # positions in the new layout of every old (class, slot)
        pos = np.empty((self.n, int(starts[-1])), dtype=int)
        for a in range(self.k):
            r = np.arange(self.sizes[a])
            c_old, p_old = self.position(a, r)
            _, p_new = out.position(a, r)
            pos[c_old, p_old] = p_new
        cls = np.arange(self.n) % n_new
        out.blocks[cls[:, None, None], pos[:, :, None], pos[:, None, :]] = self.blocks
        return out

    def dense(self) -> np.ndarray:
        off = np.concatenate([[0], np.cumsum(self.sizes[: self.k])]).astype(int)
        N = off[-1]
        M = np.zeros((N, N), dtype=self.blocks.dtype)
        gidx = np.empty((self.n, self.blocks.shape[1]), dtype=int)
        for a in range(self.k):
            r = np.arange(self.sizes[a])
            c, p = self.position(a, r)
            gidx[c, p] = off[a] + r
        M[gidx[:, :, None], gidx[:, None, :]] = self.blocks
        return M

    def gather(self, vecs: Sequence[np.ndarray]) -> np.ndarray:
        """Stack per-level vectors into class layout, shape ``(n, s)``."""
        s = self.blocks.shape[1]
        dtype = np.result_type(self.blocks.dtype, *[np.asarray(v).dtype for v in vecs])
        out = np.zeros((self.n, s), dtype=dtype)
        for a in range(self.k):
            r = np.arange(self.sizes[a])
            c, p = self.position(a, r)
            out[c, p] = vecs[a]
        return out

    def scatter(self, arr: np.ndarray) -> list[np.ndarray]:
        out = []
        for a in range(self.k):
            r = np.arange(self.sizes[a])
            c, p = self.position(a, r)
            out.append(arr[c, p])
        return out

    def matvec(self, vecs: Sequence[np.ndarray]) -> list[np.ndarray]:
        return self.scatter(np.einsum("cij,cj->ci", self.blocks, self.gather(vecs)))

    def square(self) -> "ClassBlockMatrix":
        return ClassBlockMatrix(self.sizes, self.k, self.n, self.blocks @ self.blocks)


def block_inverse_det(lam: BlockLambda) -> tuple[ClassBlockMatrix, float]:
    """Inverse and log-determinant of a :class:`BlockLambda` by a Schur sweep over levels.

    Level ``l`` adds ``n_l`` indices whose Schur complement is diagonal, so the
    cost of step ``l`` is ``O((n_1 + ... + n_{l-1})^2 / n_l)``.  Returns the
    inverse as a :class:`ClassBlockMatrix` with modulus ``n_L``.
    """
    sizes = lam.sizes
    dtype = lam._dtype()
    d0 = np.asarray(lam.blocks[(0, 0)], dtype=dtype)
    if np.any(np.real(d0) <= 0):
        raise np.linalg.LinAlgError("nonpositive leading diagonal entry")
    A = ClassBlockMatrix(sizes, 1, sizes[0], (1.0 / d0)[:, None, None])
    logdet = float(np.sum(np.log(np.abs(d0))))
    for l in range(1, len(sizes)):
        nl = sizes[l]
        A = A.regroup(nl)
        s = A.blocks.shape[1]
        # B[c] = Lam_{<l, l} restricted to class c: entries Lam_{a l}[r] for members (a, r)
        Bv = [np.asarray(lam.blocks[(a, l)], dtype=dtype) for a in range(l)]
        B = A.gather(Bv)  # (nl, s)
        E = np.einsum("cij,cj->ci", A.blocks, B)
        F = np.einsum("ci,ci->c", np.conj(B), E)
        S = np.asarray(lam.blocks[(l, l)], dtype=dtype) - F
        if np.any(np.real(S) <= 0):
            raise np.linalg.LinAlgError(f"nonpositive Schur complement at level {l}")
        logdet += float(np.sum(np.log(np.abs(S))))
        G = 1.0 / S
        H = E * G[:, None]
        M = A.blocks + H[:, :, None] * np.conj(E)[:, None, :]
        new = np.empty((nl, s + 1, s + 1), dtype=np.result_type(M.dtype, G.dtype))
        new[:, :s, :s] = M
        new[:, :s, s] = -H
        new[:, s, :s] = -np.conj(H)
        new[:, s, s] = G
        A = ClassBlockMatrix(sizes, l + 1, nl, new)
    return A, logdet


def build_block_lambda(
    points: np.ndarray, spec: kn.KernelSpec, sizes: Sequence[int], R: np.ndarray, xi: Sequence[float]
) -> BlockLambda:
    """Block spectrum of ``K((a, x), (b, x')) = R_ab Q(x, x') + xi_a delta``.

    Level ``a`` uses the first ``sizes[a]`` rows of ``points``.
    """
    sizes = _check_sizes(sizes)
    kind = transform_kind(spec)
    n1 = sizes[0]
    X = np.asarray(points)[:n1]
    col = first_column(X, spec)
    lam_level = {}
    for na in sorted(set(sizes)):
        v = np.sqrt(na) * forward(kind, col[:na])
        lam_level[na] = np.real(v) if kind == "fwht" else v
    blocks = {}
    L = len(sizes)
    for a in range(L):
        for b in range(a, L):
            v = R[a, b] * np.sqrt(sizes[b] / sizes[a]) * lam_level[sizes[a]]
            if a == b:
                v = v + xi[a]
            blocks[(a, b)] = v
    return BlockLambda(sizes, blocks, kind)


# ----------------------------------------------------------------------------
# discrepancy and optimal weights
# ----------------------------------------------------------------------------


def _integrals(points: np.ndarray, spec: kn.KernelSpec) -> tuple[float, np.ndarray]:
    n = points.shape[0]
    if spec.family == "squared_exponential":
        return kn.se_double_integral(spec.d, spec.gamma, spec.eta), kn.se_integral(points, spec.gamma, spec.eta)
    c = kn.kernel_mean(spec)
    return c, np.full(n, c)


def _is_fast(points, spec, fast) -> bool:
    if fast is None:
        n = points.shape[0]
        fast = (spec.is_si or spec.is_dsi) and n > 0 and n & (n - 1) == 0
    return bool(fast)


def kernel_discrepancy(points: np.ndarray, weights: np.ndarray, spec: kn.KernelSpec, fast: Optional[bool] = None) -> float:
    """Squared discrepancy ``int int K - 2 sum w_i int K(., x_i) + w^T K w``.

    ``fast`` uses the structured Gram (points must be a matched sequence prefix);
    by default it is used whenever the family and ``n`` allow it.
    """
    X = np.asarray(points)
    w = np.asarray(weights, dtype=np.float64)
    dbl, sgl = _integrals(X, spec)
    if _is_fast(X, spec, fast):
        Kw = build_spectrum(X, spec).matvec(w)
    else:
        Kw = kn.gram(spec, X) @ w
    return float(dbl - 2.0 * w @ sgl + w @ Kw)


def optimal_weights(points: np.ndarray, spec: kn.KernelSpec, xi: float = 0.0, fast: Optional[bool] = None) -> np.ndarray:
    """Weights ``K^{-1} k`` minimizing the discrepancy, ``k_i = int K(., x_i)``."""
    X = np.asarray(points)
    _, sgl = _integrals(X, spec)
    if _is_fast(X, spec, fast):
        return build_spectrum(X, spec, xi).solve(sgl)
    K = kn.gram(spec, X) + xi * np.eye(X.shape[0])
    return np.linalg.solve(K, sgl)
