"""Measure transforms and adaptive single-level stopping criteria.

The array-QOI driver :func:`adaptive_array_qoi` approximates quantities
``s = C(mu)`` that are functions of an array of means ``mu = E[f(X)]``.  Bounds
on ``mu`` come from a scalar method (CLT for IID points, Student-t over
replicated randomized LD sequences) and are pushed through user propagators
``C_lo, C_hi`` built with :func:`interval_op`.
"""

from __future__ import annotations

import inspect
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special, stats

from . import ldseq

__all__ = [
    "MeasureTransform",
    "transform",
    "clt_bounds",
    "student_t_bounds",
    "interval_op",
    "abs_or_rel",
    "abs_and_rel",
    "optimal_estimate_and_stop",
    "dependency_index",
    "split_uncertainty",
    "QOIBounds",
    "adaptive_array_qoi",
    "adaptive_bayes",
    "sensitivity_problem",
    "ishigami_sobol_indices",
]


# ----------------------------------------------------------------------------
# measure transforms
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class MeasureTransform:
    """Map from ``[0,1)^d`` to a target measure.

    Build with :meth:`uniform`, :meth:`gaussian` or :meth:`brownian_motion`.
    ``factor`` satisfies ``factor @ factor.T == covariance``.
    """

    kind: str
    lower: Optional[np.ndarray] = field(default=None, repr=False)
    upper: Optional[np.ndarray] = field(default=None, repr=False)
    mean: Optional[np.ndarray] = field(default=None, repr=False)
    covariance: Optional[np.ndarray] = field(default=None, repr=False)
    factor: Optional[np.ndarray] = field(default=None, repr=False)
    decomposition: str = "cholesky"

    @property
    def d(self) -> int:
        return (self.lower if self.kind == "uniform" else self.mean).size

    @classmethod
    def uniform(cls, lower, upper) -> "MeasureTransform":
        lo, hi = np.broadcast_arrays(np.asarray(lower, float), np.asarray(upper, float))
        if lo.ndim != 1 or np.any(hi < lo):
            raise ValueError("uniform bounds must be 1-d with upper >= lower")
        return cls("uniform", lower=lo.copy(), upper=hi.copy())

    @classmethod
    def gaussian(cls, mean, covariance, decomposition: str = "cholesky") -> "MeasureTransform":
        M = np.atleast_1d(np.asarray(mean, float))
        S = np.asarray(covariance, float)
        if S.ndim == 0:
            S = S * np.eye(M.size)
        elif S.ndim == 1:
            S = np.diag(S)
        if M.size == 1 and S.shape[0] > 1:
            M = np.full(S.shape[0], M[0])
        if S.shape != (M.size, M.size) or not np.allclose(S, S.T):
            raise ValueError("covariance must be a symmetric (d, d) matrix")
        return cls("gaussian", mean=M, covariance=S, factor=_factor(S, decomposition), decomposition=decomposition)

    @classmethod
    def brownian_motion(
        cls, times, b0: float = 0.0, drift: float = 0.0, diffusion: float = 1.0, decomposition: str = "pca"
    ) -> "MeasureTransform":
        """Brownian motion observed at ``times``: mean ``b0 + drift*t``, covariance ``diffusion*min(t, t')``."""
        tau = np.asarray(times, float)
        if tau.ndim != 1 or np.any(tau <= 0) or np.any(np.diff(tau) <= 0):
            raise ValueError("times must be positive and strictly increasing")
        if not diffusion > 0:
            raise ValueError("diffusion must be positive")
        S = diffusion * np.minimum.outer(tau, tau)
        t = cls.gaussian(b0 + drift * tau, S, decomposition)
        object.__setattr__(t, "kind", "brownian_motion")
        return t

    def __call__(self, x) -> np.ndarray:
        return transform(x, self)


def _factor(S: np.ndarray, decomposition: str) -> np.ndarray:
    if decomposition == "cholesky":
        return np.linalg.cholesky(S)
    if decomposition == "pca":
        w, V = np.linalg.eigh(S)
        order = np.argsort(w)[::-1]
        w, V = np.clip(w[order], 0.0, None), V[:, order]
        # fix the sign ambiguity so nested discretizations share modes
        V = V * np.where(V[-1] < 0, -1.0, 1.0)
        return V * np.sqrt(w)
    raise ValueError(f"unknown decomposition {decomposition!r}")


def transform(points, t: MeasureTransform) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != t.d:
        raise ValueError(f"points must have shape (n, {t.d})")
    if t.kind == "uniform":
        return t.lower + (t.upper - t.lower) * x
    if np.any(x <= 0.0) or np.any(x >= 1.0):
        raise ValueError("Gaussian transforms need points in the open cube; randomize the sequence")
    return t.mean + special.ndtri(x) @ t.factor.T


# ----------------------------------------------------------------------------
# scalar bounds
# ----------------------------------------------------------------------------


def clt_bounds(samples, alpha=0.05, inflation: float = 1.2):
    """CLT interval ``mean +- inflation * z_{alpha/2} * std / sqrt(n)`` along axis 0."""
    y = np.asarray(samples, dtype=np.float64)
    n = y.shape[0]
    if n < 2:
        raise ValueError("CLT bounds need at least 2 samples")
    mu = y.mean(axis=0)
    half = inflation * stats.norm.isf(np.asarray(alpha) / 2) * y.std(axis=0, ddof=1) / math.sqrt(n)
    return mu - half, mu + half


def student_t_bounds(replicate_means, alpha=0.05, inflation: float = 1.2):
    """Student-t interval over ``R`` independent replicate means along axis 0."""
    m = np.asarray(replicate_means, dtype=np.float64)
    R = m.shape[0]
    if R < 2:
        raise ValueError("Student-t bounds need at least 2 replicates")
    mu = m.mean(axis=0)
    half = inflation * stats.t.isf(np.asarray(alpha) / 2, R - 1) * m.std(axis=0, ddof=1) / math.sqrt(R)
    return mu - half, mu + half


# ----------------------------------------------------------------------------
# interval arithmetic and the stopping rule
# ----------------------------------------------------------------------------


def _products(a_lo, a_hi, b_lo, b_hi, f):
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.stack([f(a_lo, b_lo), f(a_lo, b_hi), f(a_hi, b_lo), f(a_hi, b_hi)])
    # 0 * inf and inf / inf are NaN; the enclosure comes from the remaining corners
    nan = np.isnan(c)
    lo = np.where(nan, np.inf, c).min(axis=0)
    hi = np.where(nan, -np.inf, c).max(axis=0)
    none = nan.all(axis=0)
    return np.where(none, -np.inf, lo), np.where(none, np.inf, hi)


def interval_op(op: str, a, b):
    """Enclose ``op(x, y)`` for ``x`` in ``[a_lo, a_hi]`` and ``y`` in ``[b_lo, b_hi]``.

    ``a`` and ``b`` are ``(lo, hi)`` pairs of arrays; returns ``(lo, hi)``.
    Division by an interval containing zero gives ``(-inf, inf)``.
    """
    a_lo, a_hi = (np.asarray(v, dtype=np.float64) for v in a)
    b_lo, b_hi = (np.asarray(v, dtype=np.float64) for v in b)
    if op == "+":
        return a_lo + b_lo, a_hi + b_hi
    if op == "-":
        return a_lo - b_hi, a_hi - b_lo
    if op == "*":
        return _products(a_lo, a_hi, b_lo, b_hi, np.multiply)
    if op == "/":
        lo, hi = _products(a_lo, a_hi, b_lo, b_hi, np.divide)
        zero = (b_lo <= 0) & (b_hi >= 0)
        return np.where(zero, -np.inf, lo), np.where(zero, np.inf, hi)
    if op == "min":
        return np.minimum(a_lo, b_lo), np.minimum(a_hi, b_hi)
    if op == "max":
        return np.maximum(a_lo, b_lo), np.maximum(a_hi, b_hi)
    raise ValueError(f"unknown interval operation {op!r}")


def abs_or_rel(abs_tol=0.0, rel_tol=0.0) -> Callable:
    """Tolerance ``max(abs_tol, rel_tol |s|)``."""
    return lambda s: np.maximum(abs_tol, rel_tol * np.abs(s))


def abs_and_rel(abs_tol=0.0, rel_tol=0.0) -> Callable:
    """Tolerance ``min(abs_tol, rel_tol |s|)``."""
    return lambda s: np.minimum(abs_tol, rel_tol * np.abs(s))


def optimal_estimate_and_stop(s_lo, s_hi, h: Callable):
    """Minimax estimate and stopping flag for ``s`` known to lie in ``[s_lo, s_hi]``.

    ``h`` must satisfy ``|h(s1) - h(s2)| <= |s1 - s2|``.  Unbounded intervals
    never stop; their estimate is the finite endpoint (or 0).
    """
    lo = np.asarray(s_lo, dtype=np.float64)
    hi = np.asarray(s_hi, dtype=np.float64)
    finite = np.isfinite(lo) & np.isfinite(hi)
    with np.errstate(invalid="ignore"):
        h_lo = np.asarray(h(lo), dtype=np.float64)
        h_hi = np.asarray(h(hi), dtype=np.float64)
        est = 0.5 * (lo + hi + h_lo - h_hi)
        stop = finite & (hi - lo <= h_lo + h_hi)
    fallback = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
    est = np.where(finite, np.clip(est, lo, hi), fallback)
    if est.ndim == 0:
        return float(est), bool(stop)
    return est, stop


# ----------------------------------------------------------------------------
# dependency structure
# ----------------------------------------------------------------------------


def dependency_index(D: Callable, shape_s: tuple, shape_mu: tuple) -> np.ndarray:
    """Flat ``s``-index owning each flat ``mu``-index, found by probing ``D`` with one-hot flags.

    Raises if some mean has no owner or more than one.
    """
    ns, nmu = int(np.prod(shape_s)), int(np.prod(shape_mu))
    owner = np.full(nmu, -1, dtype=np.int64)
    for l in range(ns):
        b = np.zeros(ns, dtype=bool)
        b[l] = True
        hit = np.asarray(D(b.reshape(shape_s)), dtype=bool)
        if hit.shape != tuple(shape_mu):
            raise ValueError(f"D returned shape {hit.shape}, expected {tuple(shape_mu)}")
        hit = hit.ravel()
        if np.any(owner[hit] >= 0):
            raise ValueError("each mean must be a dependency of exactly one QOI; duplicate the shared means")
        owner[hit] = l
    if np.any(owner < 0):
        raise ValueError(f"means {np.flatnonzero(owner < 0).tolist()} are not a dependency of any QOI")
    return owner


def split_uncertainty(alpha_s, D: Callable, shape_mu: tuple) -> np.ndarray:
    """Per-mean uncertainty ``alpha_s[l] / N_l`` with ``N_l`` the dependency count of QOI ``l``."""
    a = np.asarray(alpha_s, dtype=np.float64)
    owner = dependency_index(D, a.shape, shape_mu)
    N = np.bincount(owner, minlength=a.size)
    return (a.ravel()[owner] / N[owner]).reshape(shape_mu)


# ----------------------------------------------------------------------------
# the array-QOI driver
# ----------------------------------------------------------------------------


@dataclass
class QOIBounds:
    """State and result of :func:`adaptive_array_qoi`."""

    s_hat: np.ndarray
    s_lo: np.ndarray
    s_hi: np.ndarray
    mu_lo: np.ndarray
    mu_hi: np.ndarray
    alpha_s: np.ndarray
    alpha_mu: np.ndarray
    stop_s: np.ndarray
    stop_mu: np.ndarray
    n_used: np.ndarray
    n_total: int = 0
    budget_exhausted: bool = False
    trace: list = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return bool(np.all(self.stop_s))


def _accepts_mask(f: Callable) -> bool:
    try:
        params = [
            p
            for p in inspect.signature(f).parameters.values()
            if p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD, p.VAR_POSITIONAL)
        ]
    except (TypeError, ValueError):
        return False
    return len(params) >= 2 or any(p.kind == p.VAR_POSITIONAL for p in params)


def _make_sequences(method: str, seq: str, d: int, R: int, seed):
    if method == "clt":
        return None
    if seq == "lattice":
        base = ldseq.LatticeConfig.default(d)
    elif seq == "dnet":
        base = ldseq.DigitalNetConfig.default(d)
    else:
        raise ValueError(f"replicated bounds need seq 'lattice' or 'dnet', got {seq!r}")
    return ldseq.replicate(base, R, seed)


def adaptive_array_qoi(
    integrand: Callable,
    d: int,
    shape_mu,
    C_lo: Optional[Callable] = None,
    C_hi: Optional[Callable] = None,
    D: Optional[Callable] = None,
    alpha_s=0.01,
    h: Callable = None,
    m1: int = 8,
    method: str = "student_t",
    seq: str = "dnet",
    R: int = 8,
    inflation: float = 1.2,
    seed=None,
    max_samples: int = 2**22,
) -> QOIBounds:
    """Adaptive (Q)MC for an array of QOIs ``s = C(mu)``.

    Parameters
    ----------
    integrand : ``f(x)`` or ``f(x, mask)`` returning shape ``(n,) + shape_mu``.
        With the two-argument form only entries where ``mask`` is true need
        to be computed (economic evaluation); the rest are ignored.
    C_lo, C_hi : bound propagators ``(mu_lo, mu_hi) -> s_lo`` / ``s_hi``.
        Default to the identity map.
    D : maps stopping flags of shape ``shape_s`` to flags of shape
        ``shape_mu``.  Defaults to the identity.
    alpha_s : uncertainty per QOI, scalar or shape ``shape_s``.
    h : tolerance function ``h(s)``; see :func:`abs_or_rel`.
    method : ``"clt"`` (IID points) or ``"student_t"`` (``R`` randomized
        ``seq`` sequences, ``"dnet"`` or ``"lattice"``).
    max_samples : cap on the total number of points; on overflow the partial
        result is returned with ``budget_exhausted`` set.
    """
    shape_mu = tuple(np.atleast_1d(shape_mu).tolist()) if not isinstance(shape_mu, tuple) else shape_mu
    if h is None:
        raise ValueError("a tolerance function h is required")
    if method not in ("clt", "student_t"):
        raise ValueError(f"unknown method {method!r}")
    if method == "student_t" and R < 2:
        raise ValueError("Student-t bounds need R >= 2")
    C_lo = C_lo or (lambda lo, hi: lo)
    C_hi = C_hi or (lambda lo, hi: hi)
    identity_D = D is None
    D = D or (lambda b: b)
    probe = np.zeros(shape_mu)
    shape_s = np.shape(C_lo(probe, probe))
    alpha_s = np.broadcast_to(np.asarray(alpha_s, dtype=np.float64), shape_s).copy()
    if np.any(alpha_s <= 0) or np.any(alpha_s >= 1):
        raise ValueError("uncertainty levels must lie in (0, 1)")
    if identity_D and shape_s != shape_mu:
        raise ValueError("a dependency map D is needed when QOI and mean shapes differ")
    alpha_mu = split_uncertainty(alpha_s, D, shape_mu)
    masked = _accepts_mask(integrand)
    seqs = _make_sequences(method, seq, d, R, seed)
    rng = np.random.default_rng(seed)
    reps = 1 if method == "clt" else R

    sums = np.zeros((reps,) + shape_mu)
    sq = np.zeros(shape_mu)
    n_used = np.zeros(shape_mu, dtype=np.int64)
    mu_lo = np.full(shape_mu, -np.inf)
    mu_hi = np.full(shape_mu, np.inf)
    stop_mu = np.zeros(shape_mu, dtype=bool)
    stop_s = np.zeros(shape_s, dtype=bool)
    s_lo = np.full(shape_s, -np.inf)
    s_hi = np.full(shape_s, np.inf)
    trace = []
    n_start, n_end, n_total = 0, 2**m1, 0
    exhausted = False
    while not np.all(stop_s):
        batch = n_end - n_start
        if n_total + reps * batch > max_samples:
            exhausted = True
            break
        need = ~stop_mu
        for r in range(reps):
            if method == "clt":
                x = rng.random((batch, d))
                x[x == 0.0] = 2.0**-53  # stay inside the open cube
            else:
                x = ldseq.generate(seqs[r], batch, n_start)
            y = np.asarray(integrand(x, need.copy()) if masked else integrand(x), dtype=np.float64)
            y = y.reshape((batch,) + shape_mu)
            ys = np.where(need, y, 0.0)
            sums[r] = np.where(need, sums[r] + ys.sum(axis=0), sums[r])
            if method == "clt":
                sq = np.where(need, sq + (ys**2).sum(axis=0), sq)
        n_total += reps * batch
        n_used = np.where(need, n_used + reps * batch, n_used)
        n = n_end
        if method == "clt":
            mean = sums[0] / n
            var = np.maximum(sq - n * mean**2, 0.0) / (n - 1)
            half = inflation * stats.norm.isf(alpha_mu / 2) * np.sqrt(var / n)
            lo, hi = mean - half, mean + half
        else:
            lo, hi = student_t_bounds(sums / n, alpha_mu, inflation)
        mu_lo = np.where(need, lo, mu_lo)
        mu_hi = np.where(need, hi, mu_hi)
        s_lo = np.asarray(C_lo(mu_lo, mu_hi), dtype=np.float64).reshape(shape_s)
        s_hi = np.asarray(C_hi(mu_lo, mu_hi), dtype=np.float64).reshape(shape_s)
        _, stop = optimal_estimate_and_stop(s_lo, s_hi, h)
        stop_s = np.asarray(stop, dtype=bool).reshape(shape_s)
        stop_mu = np.asarray(D(stop_s), dtype=bool).reshape(shape_mu)
        trace.append((n, s_lo.copy(), s_hi.copy(), stop_s.copy()))
        n_start, n_end = n_end, 2 * n_end
    s_hat, _ = optimal_estimate_and_stop(s_lo, s_hi, h)
    return QOIBounds(
        s_hat=np.asarray(s_hat).reshape(shape_s),
        s_lo=s_lo,
        s_hi=s_hi,
        mu_lo=mu_lo,
        mu_hi=mu_hi,
        alpha_s=alpha_s,
        alpha_mu=alpha_mu,
        stop_s=stop_s,
        stop_mu=stop_mu,
        n_used=n_used,
        n_total=n_total,
        budget_exhausted=exhausted,
        trace=trace,
    )


def adaptive_bayes(
    integrand: Callable,
    d: int,
    h: Callable,
    alpha: float = 0.01,
    m1: int = 8,
    m_max: int = 20,
    seed=None,
    kernel=None,
    max_iter: int = 20,
):
    """Adaptive fast Bayesian cubature on one randomized digital net.

    Doubles ``n`` from ``2^m1`` until the credible interval
    ``mu_hat +- z_{alpha/2} sqrt(V_hat)`` meets the stopping rule for ``h``.
    Returns ``(estimate, (lo, hi), n, converged)``.
    """
    from . import gp, kernels

    net = ldseq.DigitalNetConfig.default(d).randomize(seed)
    spec = kernel or kernels.KernelSpec("dsi_adaptive_sum", d, eta=1.0)
    z = stats.norm.isf(alpha / 2)
    y = np.zeros(0)
    m = m1
    while True:
        n = 2**m
        x_new = ldseq.generate(net, n - y.size, y.size)
        y = np.concatenate([y, np.asarray(integrand(x_new), dtype=np.float64).reshape(-1)])
        model = gp.FastGP(spec, max_iter=max_iter, seq=net).fit(ldseq.generate(net, n), y)
        spec = model.kernel_
        res = model.bayes_cubature()
        half = z * math.sqrt(max(res.variance, 0.0))
        lo, hi = res.estimate - half, res.estimate + half
        est, stop = optimal_estimate_and_stop(lo, hi, h)
        if stop or m >= m_max:
            return est, (lo, hi), n, bool(stop)
        m += 1


# ----------------------------------------------------------------------------
# Sobol' sensitivity indices as an array QOI
# ----------------------------------------------------------------------------


def sensitivity_problem(f: Callable, nu: int, subsets: Sequence[Sequence[int]]):
    """Integrand and propagators for closed and total sensitivity indices.

    The node dimension is ``2 nu``: ``x`` takes the first ``nu`` coordinates
    and ``z`` the rest.  Means have shape ``(2, 3, c)``: for ``i = 0`` (closed)
    and ``i = 1`` (total), slot 0 holds the Sobol' index integrand and slots 1
    and 2 the first and second moments of ``f``.  QOIs have shape ``(2, c)``.
    Returns ``(integrand, d, shape_mu, C_lo, C_hi, D)``.
    """
    c = len(subsets)
    us = [np.array(sorted(u), dtype=np.int64) for u in subsets]

    def integrand(x, mask):
        xa, za = x[:, :nu], x[:, nu:]
        n = x.shape[0]
        out = np.full((n, 2, 3, c), np.nan)
        fx, fz = f(xa), f(za)
        for j, u in enumerate(us):
            if not (mask[0, :, j].any() or mask[1, :, j].any()):
                continue
            mix = za.copy()
            mix[:, u] = xa[:, u]
            fm = f(mix)
            out[:, 0, 0, j] = fx * (fm - fz)
            out[:, 1, 0, j] = 0.5 * (fz - fm) ** 2
            out[:, :, 1, j] = fx[:, None]
            out[:, :, 2, j] = (fx**2)[:, None]
        return out

    def _var_bounds(lo, hi):
        m1_lo, m1_hi = lo[:, 1], hi[:, 1]
        sq_hi = np.maximum(m1_lo**2, m1_hi**2)
        sq_lo = np.where((m1_lo <= 0) & (m1_hi >= 0), 0.0, np.minimum(m1_lo**2, m1_hi**2))
        return lo[:, 2] - sq_hi, hi[:, 2] - sq_lo

    def C_lo(lo, hi):
        v_lo, v_hi = _var_bounds(lo, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(v_lo > 0, np.clip(np.maximum(lo[:, 0], 0.0) / v_hi, 0.0, 1.0), 0.0)
        return s

    def C_hi(lo, hi):
        v_lo, _ = _var_bounds(lo, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(v_lo > 0, np.clip(hi[:, 0] / v_lo, 0.0, 1.0), 1.0)
        return s

    def D(b):
        return np.broadcast_to(np.asarray(b)[:, None, :], (2, 3, c)).copy()

    return integrand, 2 * nu, (2, 3, c), C_lo, C_hi, D


def ishigami_sobol_indices(subsets, a: float = 7.0, b: float = 0.1):
    """Analytic closed and total sensitivity indices of the Ishigami function, shape ``(2, c)``."""
    pi4 = math.pi**4
    V = {
        (0,): 0.5 * (1 + b * pi4 / 5) ** 2,
        (1,): a * a / 8,
        (0, 2): 8 * b * b * pi4 * pi4 / 225,
    }
    total_var = sum(V.values())
    out = np.zeros((2, len(subsets)))
    for j, u in enumerate(subsets):
        u = set(u)
        out[0, j] = sum(v for k, v in V.items() if set(k) <= u) / total_var
        out[1, j] = sum(v for k, v in V.items() if set(k) & u) / total_var
    return out
