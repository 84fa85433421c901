import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmcfast import kernels as K
from qmcfast import ldseq


def _net(d, n, seed=7):
    cfg = ldseq.DigitalNetConfig.default(d).randomize(np.random.default_rng(seed), "digital_shift")
    return ldseq.generate(cfg, n)


dyadic = st.integers(0, 2**20 - 1).map(lambda k: k / 2**20)


# -- Bernoulli polynomials ----------------------------------------------------


def test_bernoulli_table_rows():
    assert K.BERNOULLI_COEFFS[0] == (Fraction(1),) or list(K.BERNOULLI_COEFFS[0]) == [1]
    assert list(K.BERNOULLI_COEFFS[1]) == [Fraction(-1, 2), 1]
    assert list(K.BERNOULLI_COEFFS[2]) == [Fraction(1, 6), -1, 1]


def test_bernoulli_examples():
    assert K.bernoulli_poly(1, 0.25) == pytest.approx(-0.25, abs=1e-15)
    assert K.bernoulli_poly(2, 0.5) == pytest.approx(-1 / 12, abs=1e-15)


@pytest.mark.parametrize("p", range(1, 10))
def test_bernoulli_zero_integral(p):
    x = (np.arange(2**12) + 0.5) / 2**12
    assert abs(K.bernoulli_poly(p, x).mean()) < 1e-6


@pytest.mark.parametrize("p", range(2, 10))
def test_bernoulli_symmetry(p):
    # B_p(1 - x) = (-1)^p B_p(x)
    x = np.linspace(0, 1, 17)
    np.testing.assert_allclose(K.bernoulli_poly(p, 1 - x), (-1) ** p * K.bernoulli_poly(p, x), atol=1e-12)


def test_bernoulli_degree_out_of_range():
    with pytest.raises(ValueError):
        K.bernoulli_poly(10, 0.5)


# -- shift-invariant kernels --------------------------------------------------


def test_si_diagonal_alpha1():
    assert K.si_univariate(1, 0, 0, 0.3, 0.3) == pytest.approx(math.pi**2 / 3, rel=1e-14)
    assert math.pi**2 / 3 == pytest.approx(3.289868, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(
    ab=st.sampled_from([(1, 0, 0), (2, 0, 0), (2, 1, 0), (2, 1, 1), (3, 2, 1), (4, 0, 3)]),
    x=st.floats(0, 1, exclude_max=True),
    xp=st.floats(0, 1, exclude_max=True),
    delta=st.floats(0, 1, exclude_max=True),
)
def test_si_shift_invariance(ab, x, xp, delta):
    a, b, bp = ab
    v = K.si_univariate(a, b, bp, x, xp)
    w = K.si_univariate(a, b, bp, (x + delta) % 1, (xp + delta) % 1)
    assert abs(v - w) < 1e-7 * max(1, abs(v))


@pytest.mark.parametrize("ab", [(1, 0, 0), (2, 0, 0), (2, 1, 0), (2, 1, 1), (3, 1, 2), (4, 0, 0)])
def test_si_zero_integral(ab):
    a, b, bp = ab
    xp = (np.arange(2**12) + 0.5) / 2**12
    for x in (0.0, 0.3, 0.77):
        v = K.si_univariate(a, b, bp, x, xp)
        # midpoint error scales with the (2 pi)^(2 alpha) prefactor, so measure it relative to max |K|
        assert abs(v.mean()) < 1e-6 * max(1.0, np.abs(v).max())


def test_si_symmetric_when_orders_equal():
    rng = np.random.default_rng(1)
    x, xp = rng.random(50), rng.random(50)
    for a, b in [(1, 0), (2, 1), (3, 2)]:
        np.testing.assert_allclose(K.si_univariate(a, b, b, x, xp), K.si_univariate(a, b, b, xp, x), atol=1e-9)


def test_si_smoothness_violation():
    with pytest.raises(ValueError):
        K.si_univariate(1, 1, 0, 0.1, 0.2)


# -- DSI kernels --------------------------------------------------------------


def test_omega2_examples():
    assert K.dsi_omega(2, 0.0, 0.0) == pytest.approx(1.5, abs=1e-15)
    assert K.dsi_omega(2, 0.5, 0.0) == pytest.approx(-0.25, abs=1e-15)


def test_omega_rejects_alpha():
    with pytest.raises(ValueError):
        K.dsi_omega(5, 0.1, 0.2)


def _mu(alpha, k):
    bits = [a for a in range(k.bit_length() - 1, -1, -1) if k >> a & 1]
    return sum(a + 1 for a in bits[:alpha])


def _omega_series(alpha, x, kmax_bits=12):
    # sum_{k=1}^{2^12-1} 2^{-mu_alpha(k)} wal_k(x) with wal_k(x) = (-1)^{sum_a k_a x_{a+1}}
    xi = int(x * 2**kmax_bits)
    digits = [(xi >> (kmax_bits - 1 - a)) & 1 for a in range(kmax_bits)]
    s = 0.0
    for k in range(1, 2**kmax_bits):
        par = sum(digits[a] for a in range(kmax_bits) if k >> a & 1) & 1
        s += 2.0 ** -_mu(alpha, k) * (-1) ** par
    return s


@pytest.mark.parametrize("alpha", [2, 3, 4])
def test_omega_walsh_series_oracle(alpha):
    rng = np.random.default_rng(alpha)
    xs = rng.integers(0, 2**12, 32) / 2**12
    xps = rng.integers(0, 2**12, 32) / 2**12
    for x, xp in zip(xs, xps):
        z = float(int(x * 2**12) ^ int(xp * 2**12)) / 2**12
        assert abs(K.dsi_omega(alpha, x, xp) - _omega_series(alpha, z)) < 2e-3


@settings(max_examples=40, deadline=None)
@given(alpha=st.sampled_from([2, 3, 4]), x=dyadic, xp=dyadic, s=dyadic)
def test_omega_digital_shift_invariance(alpha, x, xp, s):
    xor = lambda u, v: float(int(u * 2**20) ^ int(v * 2**20)) / 2**20
    assert K.dsi_omega(alpha, xor(x, s), xor(xp, s)) == pytest.approx(K.dsi_omega(alpha, x, xp), abs=1e-12)


def test_kdddot_examples():
    assert K.dsi_kdddot(1.0, 0.3, 0.3) == pytest.approx(2.0)
    # beta(x XOR x') = 1 when the first digits differ
    assert K.dsi_kdddot(1.0, 0.75, 0.25) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        K.dsi_kdddot(0.0, 0.1, 0.2)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.5])
def test_kdddot_zero_integral(alpha):
    xp = _net(1, 2**14)[:, 0]
    for x in (0.1, 0.5, 0.9):
        assert abs(K.dsi_kdddot(alpha, x, xp).mean()) < 1e-3


def test_order1_examples():
    assert K.dsi_order1(0.4, 0.4) == pytest.approx(1 / 6)
    assert K.dsi_order1(0.75, 0.25) == pytest.approx(-1 / 12)


@settings(max_examples=30, deadline=None)
@given(x=st.floats(0, 1, exclude_max=True), xp=st.floats(0, 1, exclude_max=True))
def test_order1_symmetry(x, xp):
    assert K.dsi_order1(x, xp) == K.dsi_order1(xp, x)


def test_dsi_zero_integrals_exact_on_dyadic_grid():
    xp = np.arange(2**14) / 2**14
    for x in (0.0, 0.3, 0.8):
        for a in (2, 3, 4):
            assert abs(K.dsi_omega(a, x, xp).mean()) < 1e-3
        assert abs(K.dsi_order1(x, xp).mean()) < 1e-3


def test_adaptive_examples():
    assert K.dsi_adaptive_sum((1, 0, 0, 0), 0.2, 0.2) == pytest.approx(6.0)
    rng = np.random.default_rng(3)
    x, xp = rng.random(40), rng.random(40)
    np.testing.assert_array_equal(K.dsi_adaptive_sum((0, 1, 0, 0), x, xp), K.dsi_omega(2, x, xp))
    with pytest.raises(ValueError):
        K.dsi_adaptive_sum((0, 0, 0, 0), 0.1, 0.2)


@settings(max_examples=30, deadline=None)
@given(
    a=st.lists(st.floats(0.01, 5), min_size=4, max_size=4),
    b=st.lists(st.floats(0.01, 5), min_size=4, max_size=4),
    x=st.floats(0, 1, exclude_max=True),
    xp=st.floats(0, 1, exclude_max=True),
)
def test_adaptive_linearity(a, b, x, xp):
    ab = [u + v for u, v in zip(a, b)]
    lhs = K.dsi_adaptive_sum(ab, x, xp)
    rhs = K.dsi_adaptive_sum(a, x, xp) + K.dsi_adaptive_sum(b, x, xp)
    assert abs(lhs - rhs) < 1e-10 * max(1, abs(lhs))


def test_adaptive_r1_mean():
    xp = np.arange(2**14) / 2**14
    assert K.dsi_adaptive_sum((1, 0, 0, 0), 0.37, xp).mean() == pytest.approx(5.0, abs=1e-3)


# -- multivariate ---------------------------------------------------------------

SPECS = [
    K.KernelSpec("si_bernoulli", 3, alpha=(1, 2, 1), gamma=1.3, eta=(0.2, 0.5, 0.1)),
    K.KernelSpec("dsi_omega", 2, alpha=(2, 4), gamma=0.7, eta=(0.3, 0.6)),
    K.KernelSpec("dsi_kdddot", 2, alpha=1.5, gamma=2.0, eta=(0.4, 0.2)),
    K.KernelSpec("dsi_order1", 3, gamma=1.0, eta=1.0),
]


@pytest.mark.parametrize("family", ["si_bernoulli", "dsi_omega", "dsi_kdddot", "dsi_order1", "dsi_adaptive_sum"])
def test_zero_eta_gives_gamma(family):
    alpha = 2 if family in ("si_bernoulli", "dsi_omega") else 1
    spec = K.KernelSpec(family, 4, alpha=alpha, gamma=2.5, eta=0.0)
    rng = np.random.default_rng(0)
    np.testing.assert_allclose(K.multivariate_eval(spec, rng.random((10, 4)), rng.random((10, 4))), 2.5)


@settings(max_examples=30, deadline=None)
@given(
    i=st.integers(0, len(SPECS) - 1),
    seed=st.integers(0, 2**31),
)
def test_product_equals_mixture(i, seed):
    spec = SPECS[i]
    mix = spec.with_params(weights=K.product_weights_as_mixture(spec))
    rng = np.random.default_rng(seed)
    x, xp = rng.random((8, spec.d)), rng.random((8, spec.d))
    np.testing.assert_allclose(K.multivariate_eval(mix, x, xp), K.multivariate_eval(spec, x, xp), atol=1e-12, rtol=1e-12)


@pytest.mark.parametrize("spec", SPECS + [K.KernelSpec("dsi_adaptive_sum", 2, gamma=1.0, eta=0.3, a=(0, 1, 1, 1))])
def test_double_integral_is_gamma(spec):
    P = _net(2 * spec.d, 2**14)
    v = K.multivariate_eval(spec, P[:, : spec.d], P[:, spec.d :]).mean()
    assert abs(v - spec.gamma) / spec.gamma < 1e-3
    assert K.kernel_mean(spec) == pytest.approx(spec.gamma)


def test_kernel_mean_adaptive_with_r1():
    spec = K.KernelSpec("dsi_adaptive_sum", 2, gamma=1.5, eta=(0.2, 0.4), a=(1, 0.5, 0, 0))
    assert K.kernel_mean(spec) == pytest.approx(1.5 * (1 + 0.2 * 5) * (1 + 0.4 * 5))


def test_derivative_orders_use_indicator():
    spec = K.KernelSpec("si_bernoulli", 2, alpha=2, gamma=1.0, eta=(0.5, 0.5), beta=(1, 0), betap=(0, 0))
    x, xp = np.array([0.2, 0.6]), np.array([0.7, 0.1])
    want = 0.5 * K.si_univariate(2, 1, 0, 0.2, 0.7) * (1 + 0.5 * K.si_univariate(2, 0, 0, 0.6, 0.1))
    assert K.multivariate_eval(spec, x, xp) == pytest.approx(want, rel=1e-13)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        K.multivariate_eval(SPECS[0], np.zeros(2), np.zeros(2))


# -- baseline kernels -------------------------------------------------------------


def test_se_diagonal():
    x = np.random.default_rng(0).random((5, 3))
    np.testing.assert_allclose(K.se_kernel(x, x, gamma=1.7, eta=0.3), 1.7)


def test_matern_coefficients():
    c = K.MATERN_COEFFS[1.5]
    assert c[0] == 1 and c[1] == pytest.approx(math.sqrt(3))


def test_matern_half_is_exponential():
    x, xp = np.array([0.1, 0.4]), np.array([0.3, 0.9])
    r = np.sqrt(np.sum((x - xp) ** 2 / 2))
    assert K.matern_kernel(x, xp, 0.5) == pytest.approx(math.exp(-r))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), eta=st.floats(0.1, 3))
def test_rq_tends_to_se(seed, eta):
    rng = np.random.default_rng(seed)
    x, xp = rng.random(3), rng.random(3)
    assert abs(K.rq_kernel(x, xp, 1e6, 1.0, eta) - K.se_kernel(x, xp, 1.0, eta)) < 1e-4


def test_se_integrals_against_quadrature():
    P = _net(2, 2**14)
    eta = 0.4
    assert K.se_kernel(P[:, :1], P[:, 1:], 1.0, eta).mean() == pytest.approx(K.se_double_integral(1, 1.0, eta), rel=1e-4)
    x = np.array([[0.3]])
    assert K.se_kernel(x, P[:, :1], 1.0, eta).mean() == pytest.approx(K.se_integral(x, 1.0, eta)[0], rel=1e-4)


def test_baseline_validation():
    with pytest.raises(ValueError):
        K.KernelSpec("matern", 2, alpha=1.0)
    with pytest.raises(ValueError):
        K.KernelSpec("rational_quadratic", 2, alpha=-1.0)
    with pytest.raises(ValueError):
        K.KernelSpec("squared_exponential", 2, eta=0.0)
    with pytest.raises(ValueError):
        K.kernel_mean(K.KernelSpec("squared_exponential", 2))


# -- validation -------------------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [
        dict(family="nope", d=1),
        dict(family="dsi_omega", d=1, alpha=5),
        dict(family="si_bernoulli", d=1, alpha=1, beta=(1,)),
        dict(family="dsi_omega", d=1, alpha=2, beta=(1,)),
        dict(family="dsi_kdddot", d=1, alpha=0),
        dict(family="si_bernoulli", d=1, gamma=0.0),
        dict(family="si_bernoulli", d=1, eta=-1.0),
        dict(family="dsi_adaptive_sum", d=1, a=(0, 0, 0, 0)),
        dict(family="dsi_order1", d=2, weights={(0,): 0.5}),
        dict(family="dsi_order1", d=13, weights={(): 1.0}),
    ],
)
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        K.KernelSpec(**kw)


# -- positive semi-definiteness ---------------------------------------------------

PSD_SPECS = SPECS + [
    K.KernelSpec("dsi_adaptive_sum", 2, gamma=1.0, eta=0.5, a=(1, 1, 1, 1)),
    K.KernelSpec("dsi_omega", 2, alpha=3, eta=1.0),
    K.KernelSpec("squared_exponential", 2, eta=0.3),
    K.KernelSpec("matern", 2, alpha=2.5, eta=0.3),
    K.KernelSpec("rational_quadratic", 2, alpha=2.0, eta=0.3),
    K.KernelSpec("si_bernoulli", 2, alpha=3, eta=(1.0, 1.0), weights={(): 1.0, (0,): 0.5, (0, 1): 0.1}),
]


@settings(max_examples=40, deadline=None)
@given(i=st.integers(0, len(PSD_SPECS) - 1), seed=st.integers(0, 2**31))
def test_gram_is_psd(i, seed):
    spec = PSD_SPECS[i]
    X = np.random.default_rng(seed).random((16, spec.d))
    G = K.gram(spec, X)
    np.testing.assert_allclose(G, G.T, atol=1e-12)
    assert np.linalg.eigvalsh(G).min() > -1e-8 * max(1.0, np.abs(G).max())
