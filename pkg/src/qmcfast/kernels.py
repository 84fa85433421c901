"""Kernel families for QMC-matched Gaussian processes.

Shift-invariant (SI) kernels pair with lattices; digitally-shift-invariant
(DSI) kernels pair with base-2 digital nets.  Baseline radial kernels (SE,
Matérn, rational quadratic) are provided for comparison.

Univariate functions are vectorized over broadcastable array arguments.  DSI
kernels are evaluated on the XOR of ``t``-bit integer representations of their
inputs (``t = 53`` by default, exact for dyadic doubles).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction as Fr
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "BERNOULLI_COEFFS",
    "MATERN_COEFFS",
    "bernoulli_poly",
    "si_univariate",
    "dsi_omega",
    "dsi_kdddot",
    "dsi_order1",
    "dsi_adaptive_sum",
    "KernelSpec",
    "multivariate_eval",
    "gram",
    "kernel_mean",
    "se_kernel",
    "matern_kernel",
    "rq_kernel",
    "se_integral",
    "se_double_integral",
    "to_bits",
    "beta_fn",
    "adaptive_components",
    "eval_from_bits",
]

T_BITS = 53

# c_{p,j}: B_p(x) = sum_j c_{p,j} x^j
BERNOULLI_COEFFS: tuple[tuple[Fr, ...], ...] = (
    (Fr(1),),
    (Fr(-1, 2), Fr(1)),
    (Fr(1, 6), Fr(-1), Fr(1)),
    (Fr(0), Fr(1, 2), Fr(-3, 2), Fr(1)),
    (Fr(-1, 30), Fr(0), Fr(1), Fr(-2), Fr(1)),
    (Fr(0), Fr(-1, 6), Fr(0), Fr(5, 3), Fr(-5, 2), Fr(1)),
    (Fr(1, 42), Fr(0), Fr(-1, 2), Fr(0), Fr(5, 2), Fr(-3), Fr(1)),
    (Fr(0), Fr(1, 6), Fr(0), Fr(-7, 6), Fr(0), Fr(7, 2), Fr(-7, 2), Fr(1)),
    (Fr(-1, 30), Fr(0), Fr(2, 3), Fr(0), Fr(-7, 3), Fr(0), Fr(14, 3), Fr(-4), Fr(1)),
    (Fr(0), Fr(-3, 10), Fr(0), Fr(2), Fr(0), Fr(-21, 5), Fr(0), Fr(6), Fr(-9, 2), Fr(1)),
)

_S3, _S5, _S7, _S11, _S13 = (math.sqrt(v) for v in (3, 5, 7, 11, 13))
# Matérn alpha = p + 1/2: gamma exp(-sqrt(2 alpha) r) sum_j c_j r^j
MATERN_COEFFS: dict[float, tuple[float, ...]] = {
    0.5: (1.0,),
    1.5: (1.0, _S3),
    2.5: (1.0, _S5, 5 / 3),
    3.5: (1.0, _S7, 14 / 5, 7 * _S7 / 15),
    4.5: (1.0, 3.0, 27 / 7, 18 / 7, 27 / 35),
    5.5: (1.0, _S11, 44 / 9, 11 * _S11 / 9, 121 / 63, 121 * _S11 / 945),
    6.5: (1.0, _S13, 65 / 11, 52 * _S13 / 33, 338 / 99, 169 * _S13 / 495, 2197 / 10395),
}

FAMILIES = (
    "si_bernoulli",
    "dsi_omega",
    "dsi_kdddot",
    "dsi_order1",
    "dsi_adaptive_sum",
    "squared_exponential",
    "matern",
    "rational_quadratic",
)
SI_FAMILIES = ("si_bernoulli",)
DSI_FAMILIES = ("dsi_omega", "dsi_kdddot", "dsi_order1", "dsi_adaptive_sum")
BASELINE_FAMILIES = ("squared_exponential", "matern", "rational_quadratic")


# ----------------------------------------------------------------------------
# Bernoulli polynomials and SI kernels
# ----------------------------------------------------------------------------


def bernoulli_poly(p: int, x):
    """Bernoulli polynomial of degree ``p <= 9`` via Horner's rule on the tabled coefficients."""
    if not 0 <= p < len(BERNOULLI_COEFFS):
        raise ValueError(f"Bernoulli degree {p} outside 0..{len(BERNOULLI_COEFFS) - 1}")
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for c in reversed(BERNOULLI_COEFFS[p]):
        out = out * x + float(c)
    return out


def si_univariate(alpha: int, beta: int, betap: int, x, xp):
    """Univariate SI kernel of smoothness ``alpha`` with derivative orders ``(beta, betap)``.

    Equals ``(-1)^(alpha+betap+1) (2 pi)^(2 alpha) / p! * B_p((x - xp) mod 1)``
    with ``p = 2 alpha - beta - betap``.
    """
    p = 2 * alpha - beta - betap
    if p <= 1:
        raise ValueError(f"need 2*alpha - beta - beta' > 1, got {p}")
    c = (-1) ** (alpha + betap + 1) * (2 * math.pi) ** (2 * alpha) / math.factorial(p)
    return c * bernoulli_poly(p, np.mod(np.asarray(x) - np.asarray(xp), 1.0))


# ----------------------------------------------------------------------------
# DSI helpers
# ----------------------------------------------------------------------------


def to_bits(x, t: int = T_BITS) -> np.ndarray:
    """``floor(x 2^t)`` as uint64; integer arrays are passed through unchanged."""
    x = np.asarray(x)
    if np.issubdtype(x.dtype, np.integer):
        return x.astype(np.uint64)
    return np.floor(np.ldexp(x.astype(np.float64), t)).astype(np.uint64)


def beta_fn(z: np.ndarray, t: int = T_BITS) -> np.ndarray:
    """``-floor(log2(z / 2^t))`` for ``z > 0``, and 0 at ``z = 0``."""
    z = np.asarray(z, dtype=np.uint64)
    # bit length from the float exponent; exact while the integers fit the 53-bit mantissa
    if t <= 53:
        bl = np.frexp(z.astype(np.float64))[1]
    else:
        hi = (z >> np.uint64(32)).astype(np.float64)
        lo = (z & np.uint64(0xFFFFFFFF)).astype(np.float64)
        bl = np.where(hi > 0, 32 + np.frexp(hi)[1], np.frexp(lo)[1])
    return np.where(z == 0, 0, t + 1 - bl)


def _xor(x, xp, t):
    return to_bits(x, t) ^ to_bits(xp, t)


def _t_nu(b: np.ndarray, nu: int, zero: np.ndarray) -> np.ndarray:
    return np.where(zero, 0.0, np.ldexp(1.0, -nu * b))


def _walsh_sum(z: np.ndarray, t: int) -> np.ndarray:
    """``S(x) = sum_{a>=0} (-1)^{x_{a+1}} / 8^a`` including the all-zero tail beyond ``t`` digits."""
    # digits past the 21st change S by < 1e-18; treat them as zeros
    A = min(t, 21)
    s = np.zeros(z.shape)
    for a in range(A):
        bit = ((z >> np.uint64(t - 1 - a)) & np.uint64(1)).astype(np.float64)
        s += (1.0 - 2.0 * bit) * 8.0**-a
    return s + 8.0**-A / (1 - 1 / 8)


def _omega_from_bits(alpha: int, z: np.ndarray, t: int) -> np.ndarray:
    zero = z == 0
    b = beta_fn(z, t)
    x = z.astype(np.float64) * 2.0**-t
    t1 = _t_nu(b, 1, zero)
    if alpha == 2:
        return -1.0 - b * x + 2.5 * (1.0 - t1)
    t2 = _t_nu(b, 2, zero)
    if alpha == 3:
        return -1.0 + b * x**2 - 5.0 * (1.0 - t1) * x + 43.0 / 18.0 * (1.0 - t2)
    if alpha == 4:
        t3 = _t_nu(b, 3, zero)
        return (
            -1.0
            - 2.0 / 3.0 * b * x**3
            + 5.0 * (1.0 - t1) * x**2
            - 43.0 / 9.0 * (1.0 - t2) * x
            + 701.0 / 294.0 * (1.0 - t3)
            + b * (_walsh_sum(z, t) / 48.0 - 1.0 / 42.0)
        )
    raise ValueError(f"dsi_omega needs alpha in {{2, 3, 4}}, got {alpha}")


def dsi_omega(alpha: int, x, xp, t: int = T_BITS):
    """``omega_alpha(x XOR xp)`` for ``alpha`` in 2, 3, 4."""
    if alpha not in (2, 3, 4):
        raise ValueError(f"dsi_omega needs alpha in {{2, 3, 4}}, got {alpha}")
    return _omega_from_bits(alpha, _xor(x, xp, t), t)


def _upsilon(alpha: float) -> float:
    return 2.0 ** (alpha + 1) / (2.0 ** (alpha + 1) - 2.0)


def _kdddot_from_bits(alpha: float, z: np.ndarray, t: int) -> np.ndarray:
    u = _upsilon(alpha)
    b = beta_fn(z, t)
    return np.where(z == 0, u, u - 2.0 ** (-alpha * (b - 1.0)) * (u + 1.0))


def dsi_kdddot(alpha: float, x, xp, t: int = T_BITS):
    """Base-2 DSI kernel with diagonal ``upsilon(alpha)`` and geometric off-diagonal decay."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return _kdddot_from_bits(float(alpha), _xor(x, xp, t), t)


def _order1_from_bits(z: np.ndarray, t: int) -> np.ndarray:
    b = beta_fn(z, t)
    return np.where(z == 0, 1.0 / 6.0, 1.0 / 6.0 - np.ldexp(1.0, -1 - b))


def dsi_order1(x, xp, t: int = T_BITS):
    """Order-1 base-2 DSI kernel: ``1/6`` on the diagonal, ``1/6 - 2^(-1-beta)`` elsewhere."""
    return _order1_from_bits(_xor(x, xp, t), t)


def _adaptive_from_bits(a: Sequence[float], z: np.ndarray, t: int) -> np.ndarray:
    zero = z == 0
    t1 = _t_nu(beta_fn(z, t), 1, zero)
    out = a[0] * 6.0 * (1.0 - t1 / 2.0)
    for k, al in zip((1, 2, 3), (2, 3, 4)):
        if a[k] != 0:
            out = out + a[k] * _omega_from_bits(al, z, t)
    return out


def adaptive_components(z: np.ndarray, t: int = T_BITS) -> np.ndarray:
    """The four summands ``(R1, omega2, omega3, omega4)`` at XOR-ed integers ``z``; shape ``(4,) + z.shape``."""
    z = np.asarray(z, dtype=np.uint64)
    t1 = _t_nu(beta_fn(z, t), 1, z == 0)
    return np.stack([6.0 * (1.0 - t1 / 2.0)] + [_omega_from_bits(al, z, t) for al in (2, 3, 4)])


def dsi_adaptive_sum(a: Sequence[float], x, xp, t: int = T_BITS):
    """Weighted sum ``a1 R1 + a2 omega2 + a3 omega3 + a4 omega4`` with ``R1 = 6 (1 - t_1 / 2)``."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (4,) or np.any(a < 0) or not np.any(a > 0):
        raise ValueError("adaptive weights must be 4 nonnegative values, not all zero")
    return _adaptive_from_bits(a, _xor(x, xp, t), t)


# integral of each univariate component over [0,1)
_R1_MEAN = 5.0


# ----------------------------------------------------------------------------
# baseline kernels
# ----------------------------------------------------------------------------


def _scaled_sqdist(x, xp, eta):
    x, xp = np.asarray(x, dtype=np.float64), np.asarray(xp, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    return np.sum((x - xp) ** 2 / (2.0 * eta**2), axis=-1)


def se_kernel(x, xp, gamma: float = 1.0, eta=1.0):
    """``gamma exp(-||x - x'||_eta^2)`` with ``||v||_eta^2 = sum v_j^2 / (2 eta_j^2)``."""
    return gamma * np.exp(-_scaled_sqdist(x, xp, eta))


def matern_kernel(x, xp, alpha: float = 1.5, gamma: float = 1.0, eta=1.0):
    """Half-integer Matérn kernel of order ``alpha`` in {1/2, ..., 13/2}."""
    coeffs = MATERN_COEFFS.get(float(alpha))
    if coeffs is None:
        raise ValueError(f"Matérn order must be a half-integer in 1/2..13/2, got {alpha}")
    r = np.sqrt(_scaled_sqdist(x, xp, eta))
    poly = np.zeros_like(r)
    for c in reversed(coeffs):
        poly = poly * r + c
    return gamma * np.exp(-math.sqrt(2 * alpha) * r) * poly


def rq_kernel(x, xp, alpha: float = 1.0, gamma: float = 1.0, eta=1.0):
    """Rational quadratic kernel ``gamma (1 + ||x - x'||_eta^2 / alpha)^(-alpha)``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return gamma * (1.0 + _scaled_sqdist(x, xp, eta) / alpha) ** (-alpha)


def se_integral(x, gamma: float = 1.0, eta=1.0):
    """``int_[0,1]^d K_SE(x, x') dx'`` for points ``x`` of shape ``(..., d)``."""
    x = np.asarray(x, dtype=np.float64)
    eta = np.broadcast_to(np.asarray(eta, dtype=np.float64), x.shape[-1:])
    s = math.sqrt(2.0) * eta
    terms = eta * math.sqrt(math.pi / 2.0) * (erf(x / s) - erf((x - 1.0) / s))
    return gamma * np.prod(terms, axis=-1)


def se_double_integral(d: int, gamma: float = 1.0, eta=1.0) -> float:
    """``int int K_SE(x, x') dx dx'`` over ``[0,1]^d x [0,1]^d``."""
    eta = np.broadcast_to(np.asarray(eta, dtype=np.float64), (d,))
    terms = 2 * eta**2 * (np.exp(-1.0 / (2 * eta**2)) - 1.0) + math.sqrt(2 * math.pi) * eta * erf(
        1.0 / (math.sqrt(2.0) * eta)
    )
    return float(gamma * np.prod(terms))


# ----------------------------------------------------------------------------
# multivariate kernels
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelSpec:
    """Immutable kernel description.

    Parameters
    ----------
    family : one of :data:`FAMILIES`.
    d : dimension.
    alpha : smoothness, scalar or per dimension.  Integer for ``si_bernoulli``,
        2..4 for ``dsi_omega``, positive for ``dsi_kdddot``, half-integer for
        ``matern``, positive for ``rational_quadratic``; unused otherwise.
    gamma : global scale.
    eta : per-dimension weights (SI/DSI) or lengthscales (baseline).
    a : adaptive weights (``dsi_adaptive_sum`` only).
    beta, betap : derivative orders (``si_bernoulli`` only).
    weights : ``None`` for the product form, or a mapping from index tuples
        ``u`` (sorted, possibly empty) to mixture weights; the empty tuple must
        map to 1.  Only for SI/DSI families with ``d <= 12``.
    t : bit precision of DSI evaluations.
    """

    family: str
    d: int
    alpha: object = 1
    gamma: float = 1.0
    eta: object = 1.0
    a: Optional[tuple] = None
    beta: Optional[tuple] = None
    betap: Optional[tuple] = None
    weights: Optional[Mapping] = field(default=None, hash=False, compare=False)
    t: int = T_BITS

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.d < 1:
            raise ValueError("d must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        eta = np.broadcast_to(np.asarray(self.eta, dtype=np.float64), (self.d,))
        if self.family in BASELINE_FAMILIES and np.any(eta <= 0):
            raise ValueError("lengthscales must be positive")
        if np.any(eta < 0):
            raise ValueError("weights eta must be nonnegative")
        object.__setattr__(self, "eta", tuple(float(v) for v in eta))
        alpha = self.alpha
        if self.family in ("si_bernoulli", "dsi_omega", "dsi_kdddot"):
            al = np.broadcast_to(np.asarray(alpha), (self.d,))
            object.__setattr__(self, "alpha", tuple(al.tolist()))
        zeros = (0,) * self.d
        beta = tuple(int(v) for v in (self.beta or zeros))
        betap = tuple(int(v) for v in (self.betap or zeros))
        if (any(beta) or any(betap)) and self.family != "si_bernoulli":
            raise ValueError("derivative orders are supported only for si_bernoulli")
        if len(beta) != self.d or len(betap) != self.d:
            raise ValueError("derivative orders need length d")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "betap", betap)
        if self.family == "si_bernoulli":
            for al, b, bp in zip(self.alpha, beta, betap):
                if int(al) != al or 2 * al - b - bp <= 1:
                    raise ValueError("si_bernoulli needs integer alpha with 2 alpha - beta - beta' > 1")
        if self.family == "dsi_omega" and any(al not in (2, 3, 4) for al in self.alpha):
            raise ValueError("dsi_omega needs alpha in {2, 3, 4}")
        if self.family == "dsi_kdddot" and any(al <= 0 for al in self.alpha):
            raise ValueError("dsi_kdddot needs alpha > 0")
        if self.family == "dsi_adaptive_sum":
            a = np.asarray(self.a if self.a is not None else (1.0, 1.0, 1.0, 1.0), dtype=np.float64)
            if a.shape != (4,) or np.any(a < 0) or not np.any(a > 0):
                raise ValueError("adaptive weights must be 4 nonnegative values, not all zero")
            object.__setattr__(self, "a", tuple(a.tolist()))
        if self.family == "matern" and float(alpha) not in MATERN_COEFFS:
            raise ValueError(f"Matérn order must be a half-integer in 1/2..13/2, got {alpha}")
        if self.family == "rational_quadratic" and not float(alpha) > 0:
            raise ValueError("rational quadratic alpha must be positive")
        if self.weights is not None:
            if self.family in BASELINE_FAMILIES:
                raise ValueError("mixture weights apply only to SI/DSI families")
            if self.d > 12:
                raise ValueError("mixture-product weights are limited to d <= 12")
            w = {tuple(sorted(k)): float(v) for k, v in self.weights.items()}
            if w.get((), None) != 1.0:
                raise ValueError("the empty-set mixture weight must equal 1")
            object.__setattr__(self, "weights", w)

    @property
    def is_si(self) -> bool:
        return self.family in SI_FAMILIES

    @property
    def is_dsi(self) -> bool:
        return self.family in DSI_FAMILIES

    def with_params(self, **kw) -> "KernelSpec":
        fields = dict(
            family=self.family,
            d=self.d,
            alpha=self.alpha,
            gamma=self.gamma,
            eta=self.eta,
            a=self.a,
            beta=self.beta,
            betap=self.betap,
            weights=self.weights,
            t=self.t,
        )
        fields.update(kw)
        return KernelSpec(**fields)

    def component(self, j: int, x, xp):
        """Univariate component ``K_j(x_j, x'_j)`` (without the leading 1 and weight)."""
        f = self.family
        if f == "si_bernoulli":
            return si_univariate(int(self.alpha[j]), self.beta[j], self.betap[j], x, xp)
        return self.component_from_bits(j, _xor(x, xp, self.t))

    def component_from_bits(self, j: int, z):
        f = self.family
        if f == "dsi_omega":
            return _omega_from_bits(int(self.alpha[j]), z, self.t)
        if f == "dsi_kdddot":
            return _kdddot_from_bits(float(self.alpha[j]), z, self.t)
        if f == "dsi_order1":
            return _order1_from_bits(z, self.t)
        if f == "dsi_adaptive_sum":
            return _adaptive_from_bits(self.a, z, self.t)
        raise ValueError(f"{f} is not a DSI family")

    def component_mean(self, j: int) -> float:
        """``int_0^1 K_j(x, x') dx'``, constant in ``x`` for SI/DSI components."""
        if self.family == "dsi_adaptive_sum":
            return self.a[0] * _R1_MEAN
        if self.is_si or self.is_dsi:
            return 0.0
        raise ValueError(f"{self.family} has no constant component integral")


def _combine_components(spec: KernelSpec, comps: list, deriv: Sequence[bool]):
    eta = spec.eta
    if spec.weights is None:
        out = spec.gamma
        for j, c in enumerate(comps):
            out = out * ((0.0 if deriv[j] else 1.0) + eta[j] * c)
        return out
    if any(deriv):
        raise ValueError("derivative orders are not supported with mixture weights")
    shape = np.broadcast(*comps).shape if comps else ()
    total = np.zeros(shape)
    for u, w in spec.weights.items():
        term = np.full(shape, w)
        for j in u:
            term = term * comps[j]
        total = total + term
    return spec.gamma * total


def multivariate_eval(spec: KernelSpec, x, xp):
    """Evaluate the kernel on broadcastable arrays of shape ``(..., d)``."""
    x, xp = np.asarray(x), np.asarray(xp)
    if x.shape[-1] != spec.d or xp.shape[-1] != spec.d:
        raise ValueError(f"points need last dimension {spec.d}")
    f = spec.family
    if f == "squared_exponential":
        return se_kernel(x, xp, spec.gamma, spec.eta)
    if f == "matern":
        return matern_kernel(x, xp, float(spec.alpha), spec.gamma, spec.eta)
    if f == "rational_quadratic":
        return rq_kernel(x, xp, float(spec.alpha), spec.gamma, spec.eta)
    comps = [spec.component(j, x[..., j], xp[..., j]) for j in range(spec.d)]
    deriv = [b + bp > 0 for b, bp in zip(spec.beta, spec.betap)]
    return _combine_components(spec, comps, deriv)


def eval_from_bits(spec: KernelSpec, z: np.ndarray):
    """DSI kernel from XOR-ed integer coordinates ``z`` of shape ``(..., d)``."""
    comps = [spec.component_from_bits(j, z[..., j]) for j in range(spec.d)]
    return _combine_components(spec, comps, [False] * spec.d)


def gram(spec: KernelSpec, X, Z=None) -> np.ndarray:
    """Dense kernel matrix ``K(X_i, Z_k)``."""
    X = np.asarray(X)
    Z = X if Z is None else np.asarray(Z)
    return multivariate_eval(spec, X[:, None, :], Z[None, :, :])


def kernel_mean(spec: KernelSpec) -> float:
    """Constant single integral ``int K(x, x') dx'`` of an SI/DSI kernel.

    This is also the double integral.  It equals ``gamma`` whenever every
    univariate component integrates to zero.
    """
    if spec.family in BASELINE_FAMILIES:
        raise ValueError(f"{spec.family} has no constant single integral")
    if any(b + bp for b, bp in zip(spec.beta, spec.betap)):
        raise ValueError("kernel integrals are implemented only for zero derivative orders")
    m = [spec.component_mean(j) for j in range(spec.d)]
    if spec.weights is None:
        return float(spec.gamma * np.prod([1.0 + e * mj for e, mj in zip(spec.eta, m)]))
    return float(spec.gamma * sum(w * np.prod([m[j] for j in u]) for u, w in spec.weights.items()))


def product_weights_as_mixture(spec: KernelSpec) -> dict:
    """Mixture weights ``eta_u = prod_{j in u} eta_j`` reproducing the product form."""
    out = {}
    for r in range(spec.d + 1):
        for u in itertools.combinations(range(spec.d), r):
            out[u] = float(np.prod([spec.eta[j] for j in u])) if u else 1.0
    return out
