"""Test integrands on the unit cube and multilevel test problems.

Every integrand takes points ``x`` of shape ``(n, d)`` in ``[0,1)^d`` and
returns ``n`` values.  Integrands built on Gaussian inputs need the open cube.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special, stats

from .cubature import MeasureTransform

__all__ = [
    "TestProblem",
    "MultilevelProblem",
    "keister",
    "genz_oscillatory",
    "genz_corner_peak",
    "g_function",
    "ishigami",
    "sumxex",
    "xex",
    "ridge_pl",
    "ridge_jsu",
    "geometric_asian_call",
    "geometric_asian_price",
    "european_call",
    "multilevel_option",
    "elliptic_1d",
    "REGISTRY",
    "get_problem",
]


@dataclass(frozen=True)
class TestProblem:
    """An integrand on ``[0,1)^d`` with its reference mean."""

    __test__ = False  # keep pytest from collecting this class

    name: str
    d: int
    f: Callable = field(repr=False)
    reference: float
    provenance: str
    open_cube: bool = False

    def __call__(self, x) -> np.ndarray:
        return evaluate(self, x)


def evaluate(problem: TestProblem, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != problem.d:
        raise ValueError(f"{problem.name} needs points of shape (n, {problem.d})")
    if problem.open_cube and (np.any(x <= 0) or np.any(x >= 1)):
        raise ValueError(f"{problem.name} maps through the normal inverse CDF and needs points in (0,1)^d")
    return problem.f(x)


def _std_normal(x):
    return special.ndtri(x)


# ----------------------------------------------------------------------------
# single-level problems
# ----------------------------------------------------------------------------


def _keister_reference(d: int) -> float:
    # ||t|| for t ~ N(0, I/2) has density 2 r^{d-1} e^{-r^2} / Gamma(d/2)
    val, _ = integrate.quad(lambda r: r ** (d - 1) * math.exp(-r * r) * math.cos(r), 0, np.inf, limit=200)
    return math.pi ** (d / 2) * 2 * val / math.gamma(d / 2)


def keister(d: int = 6) -> TestProblem:
    """``pi^{d/2} cos(||t||)`` with ``t ~ N(0, I/2)``."""

    def f(x):
        t = _std_normal(x) / math.sqrt(2)
        return math.pi ** (d / 2) * np.cos(np.sqrt(np.sum(t * t, axis=1)))

    return TestProblem("keister", d, f, _keister_reference(d), "analytic (radial quadrature)", open_cube=True)


def genz_oscillatory(d: int = 3) -> TestProblem:
    """``cos(-sum c_j x_j)``, coefficients of the third kind summing to 4.5."""
    ct = np.exp(np.arange(1, d + 1) * math.log(1e-8) / d)
    c = 4.5 * ct / ct.sum()
    ref = float(np.real(np.prod((np.exp(1j * c) - 1) / (1j * c))))
    return TestProblem("genz_oscillatory", d, lambda x: np.cos(-(x @ c)), ref, "analytic")


def _corner_peak_mean(c: np.ndarray) -> float:
    d = c.size
    total = 0.0
    for mask in range(1 << d):
        v = [j for j in range(d) if mask >> j & 1]
        total += (-1) ** len(v) / (1 + c[v].sum())
    return total / (math.factorial(d) * float(np.prod(c)))


def genz_corner_peak(d: int = 3) -> TestProblem:
    """``(1 + sum c_j x_j)^{-(d+1)}``, coefficients of the second kind summing to 1/4."""
    ct = 1.0 / np.arange(1, d + 1) ** 2
    c = 0.25 * ct / ct.sum()
    ref = _corner_peak_mean(c) if d <= 20 else float("nan")
    return TestProblem("genz_corner_peak", d, lambda x: (1 + x @ c) ** (-(d + 1)), ref, "analytic")


def g_function(d: int = 3) -> TestProblem:
    a = (np.arange(1, d + 1) - 2) / 2

    def f(x):
        return np.prod((np.abs(4 * x - 2) - a) / (1 + a), axis=1)

    ref = float(np.prod((1 - a) / (1 + a)))
    return TestProblem("g_function", d, f, ref, "analytic")


def ishigami_raw(t, a: float = 7.0, b: float = 0.1):
    return np.sin(t[:, 0]) + a * np.sin(t[:, 1]) ** 2 + b * t[:, 2] ** 4 * np.sin(t[:, 0])


def ishigami(a: float = 7.0, b: float = 0.1) -> TestProblem:
    """Ishigami function with inputs uniform on ``[-pi, pi]^3``."""
    return TestProblem("ishigami", 3, lambda x: ishigami_raw(np.pi * (2 * x - 1), a, b), a / 2, "analytic")


def sumxex(d: int = 32) -> TestProblem:
    return TestProblem("sumxex", d, lambda x: np.sum(x * np.exp(x), axis=1) - d, 0.0, "analytic")


def xex() -> TestProblem:
    """``x e^x - 1`` in one dimension."""
    return TestProblem("xex", 1, lambda x: x[:, 0] * np.exp(x[:, 0]) - 1, 0.0, "analytic")


def _sparse_weights(d: int) -> np.ndarray:
    c = 2.0 ** -np.arange(1, d + 1)
    return c / np.sqrt(np.sum(c * c))


def ridge_pl(d: int = 32) -> TestProblem:
    """Ridge with ``g(u) = max(u - 1, 0) - phi(1) + Phi(-1)`` and sparse weights."""
    c = _sparse_weights(d)
    shift = stats.norm.pdf(1.0) - stats.norm.cdf(-1.0)

    def f(x):
        return np.maximum(_std_normal(x) @ c - 1, 0.0) - shift

    return TestProblem("ridge_pl", d, f, 0.0, "analytic", open_cube=True)


def ridge_jsu(d: int = 32) -> TestProblem:
    """Ridge through the Johnson SU quantile (gamma = delta = lambda = 1, xi = 0), centred."""
    c = _sparse_weights(d)
    eta = -math.exp(0.5) * math.sinh(1.0)

    def f(x):
        return np.sinh(_std_normal(x) @ c - 1.0) - eta

    return TestProblem("ridge_jsu", d, f, 0.0, "analytic", open_cube=True)


# ----------------------------------------------------------------------------
# options
# ----------------------------------------------------------------------------


def _paths(x, S0, r, sigma, T, decomposition):
    d = x.shape[1]
    times = T * np.arange(1, d + 1) / d
    B = MeasureTransform.brownian_motion(times, decomposition=decomposition)(x)
    return S0 * np.exp((r - sigma**2 / 2) * times + sigma * B)


def geometric_asian_price(d: int, S0=100.0, K=100.0, r=0.05, sigma=0.2, T=1.0) -> float:
    """Discounted geometric-average Asian call price with ``d`` equispaced monitoring times."""
    m = math.log(S0) + (r - sigma**2 / 2) * T * (d + 1) / (2 * d)
    v = sigma**2 * T * (d + 1) * (2 * d + 1) / (6 * d * d)
    sv = math.sqrt(v)
    d2 = (m - math.log(K)) / sv
    return math.exp(-r * T) * (math.exp(m + v / 2) * stats.norm.cdf(d2 + sv) - K * stats.norm.cdf(d2))


def _geo_payoff(S, K, r, T):
    G = np.exp(np.mean(np.log(S), axis=1))
    return np.maximum(G - K, 0.0) * math.exp(-r * T)


def geometric_asian_call(
    d: int = 16, S0=100.0, K=100.0, r=0.05, sigma=0.2, T=1.0, decomposition: str = "pca"
) -> TestProblem:
    def f(x):
        return _geo_payoff(_paths(x, S0, r, sigma, T, decomposition), K, r, T)

    ref = geometric_asian_price(d, S0, K, r, sigma, T)
    return TestProblem("geometric_asian_call", d, f, ref, "analytic (lognormal)", open_cube=True)


def european_call(S0=100.0, K=100.0, r=0.05, sigma=0.2, T=1.0) -> TestProblem:
    def f(x):
        S = S0 * np.exp((r - sigma**2 / 2) * T + sigma * math.sqrt(T) * _std_normal(x[:, 0]))
        return np.maximum(S - K, 0.0) * math.exp(-r * T)

    d1 = (math.log(S0 / K) + (r + sigma**2 / 2) * T) / (sigma * math.sqrt(T))
    ref = S0 * stats.norm.cdf(d1) - K * math.exp(-r * T) * stats.norm.cdf(d1 - sigma * math.sqrt(T))
    return TestProblem("european_call", 1, f, float(ref), "analytic (Black-Scholes)", open_cube=True)


# ----------------------------------------------------------------------------
# multilevel problems
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class MultilevelProblem:
    """Levels ``1..L`` of approximations ``f_l`` and their differences ``Y_l = f_l - f_{l-1}``.

    ``level_dims[l-1]`` coordinates of the shared input are used on level
    ``l``; ``costs`` are normalized so the finest level costs 1.
    """

    name: str
    L: int
    d: int
    f_level: Callable = field(repr=False)
    costs: tuple
    level_dims: tuple
    reference: Optional[float] = None
    provenance: str = ""
    open_cube: bool = True

    def __post_init__(self):
        c = np.asarray(self.costs, dtype=np.float64)
        if c.size != self.L or np.any(c <= 0):
            raise ValueError("need one positive cost per level")
        object.__setattr__(self, "costs", tuple((c / c.max()).tolist()))

    def f(self, level: int, x) -> np.ndarray:
        """Level-``level`` approximation at points ``x`` (``level`` 1-based; 0 gives zeros)."""
        x = np.asarray(x, dtype=np.float64)
        if level == 0:
            return np.zeros(x.shape[0])
        return self.f_level(level, x[:, : self.level_dims[level - 1]])

    def Y(self, level: int, x) -> np.ndarray:
        if not 1 <= level <= self.L:
            raise ValueError(f"level must lie in 1..{self.L}")
        x = np.asarray(x, dtype=np.float64)
        if self.open_cube and (np.any(x <= 0) or np.any(x >= 1)):
            raise ValueError("multilevel problems need points in the open cube")
        return self.f(level, x) - self.f(level - 1, x)


def multilevel_option(L: int = 8, S0=100.0, K=100.0, r=0.05, sigma=0.2, T=1.0) -> MultilevelProblem:
    """Geometric Asian call monitored at ``d_l = 2^{2+l}`` times on level ``l``.

    Paths use the eigendecomposition of the Brownian covariance, so the shared
    leading coordinates drive the dominant modes on every level.
    """
    if not 1 <= L <= 8:
        raise ValueError("L must lie in 1..8")
    dims = tuple(2 ** (2 + l) for l in range(1, L + 1))

    def f_level(level, x):
        return _geo_payoff(_paths(x, S0, r, sigma, T, "pca"), K, r, T)

    ref = geometric_asian_price(dims[-1], S0, K, r, sigma, T)
    return MultilevelProblem(
        "multilevel_option", L, dims[-1], f_level, tuple(2.0**l for l in range(1, L + 1)), dims, ref,
        "analytic (lognormal, finest level)",
    )


def _solve_tridiagonal(lower, diag, upper, rhs):
    """Thomas algorithm, vectorized over the leading axis; system size on the last axis."""
    n = diag.shape[-1]
    c = np.empty_like(diag)
    g = np.empty_like(diag)
    c[:, 0] = upper[:, 0] / diag[:, 0]
    g[:, 0] = rhs[:, 0] / diag[:, 0]
    for i in range(1, n):
        den = diag[:, i] - lower[:, i] * c[:, i - 1]
        if i < n - 1:
            c[:, i] = upper[:, i] / den
        g[:, i] = (rhs[:, i] - lower[:, i] * g[:, i - 1]) / den
    out = np.empty_like(diag)
    out[:, -1] = g[:, -1]
    for i in range(n - 2, -1, -1):
        out[:, i] = g[:, i] - c[:, i] * out[:, i + 1]
    return out


def elliptic_solution(z: np.ndarray, level: int, forcing: float = 1.0) -> np.ndarray:
    """``F_l(1/2)`` for ``-(e^a F')' = forcing`` with zero boundary values.

    ``z`` holds standard normal coefficients ``(n, d)`` of
    ``a(u) = sum_j z_j sin(pi j u) / j``.  The mesh has ``2^{1+l}+1`` nodes and
    the conductivity is taken at cell midpoints.
    """
    z = np.atleast_2d(z)
    m = 2 ** (1 + level)
    h = 1.0 / m
    mid = (np.arange(m) + 0.5) * h
    j = np.arange(1, z.shape[1] + 1)
    a = z @ (np.sin(np.pi * np.outer(j, mid)) / j[:, None])
    k = np.exp(a)  # (n, m) conductivities on cells
    diag = (k[:, :-1] + k[:, 1:]) / h**2
    off = -k[:, 1:-1] / h**2
    n = z.shape[0]
    lower = np.concatenate([np.zeros((n, 1)), off], axis=1)
    upper = np.concatenate([off, np.zeros((n, 1))], axis=1)
    F = _solve_tridiagonal(lower, diag, upper, np.full((n, m - 1), float(forcing)))
    return F[:, m // 2 - 1]


def elliptic_1d(L: int = 4, d: int = 8) -> MultilevelProblem:
    """One-dimensional random-coefficient elliptic PDE; QOI ``F(1/2)``."""
    if not 1 <= L <= 4:
        raise ValueError("L must lie in 1..4")

    def f_level(level, x):
        return elliptic_solution(_std_normal(x), level)

    ref, prov = None, ""
    if L == 4 and d == 8:
        # mean of 4 LMS+DS nets of 2^18 points each, standard error 4.7e-7
        ref, prov = 0.1510297708139818, "brute-force oracle (4 x 2^18 net points)"
    return MultilevelProblem(
        "elliptic_1d", L, d, f_level, tuple(2.0**l for l in range(1, L + 1)), (d,) * L, ref, prov
    )


REGISTRY = {
    "keister": keister,
    "genz_oscillatory": genz_oscillatory,
    "genz_corner_peak": genz_corner_peak,
    "g_function": g_function,
    "ishigami": ishigami,
    "sumxex": sumxex,
    "xex": xex,
    "ridge_pl": ridge_pl,
    "ridge_jsu": ridge_jsu,
    "geometric_asian_call": geometric_asian_call,
    "european_call": european_call,
    "multilevel_option": multilevel_option,
    "elliptic_1d": elliptic_1d,
}


def get_problem(name: str, **kw):
    try:
        return REGISTRY[name](**kw)
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(REGISTRY)}") from None
