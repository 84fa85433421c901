import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmcfast import fastgram as fg
from qmcfast import kernels as kn
from qmcfast import ldseq


def lattice(n, g=(1, 3), seed=None):
    cfg = ldseq.LatticeConfig(g=g)
    if seed is not None:
        cfg = cfg.randomize(seed)
    return cfg, ldseq.generate(cfg, n)


def net(n, d=2, seed=0, kind="digital_shift"):
    cfg = ldseq.DigitalNetConfig.default(d).randomize(np.random.default_rng(seed), kind)
    return cfg, ldseq.generate(cfg, n)


def V(kind, n):
    # columns are V e_k
    return fg.inverse(kind, np.eye(n, dtype=complex if kind == "fftbr" else float)).T


SI = kn.KernelSpec("si_bernoulli", 2, alpha=1, gamma=1.0, eta=(0.5, 0.8))
DSI = kn.KernelSpec("dsi_omega", 2, alpha=2, gamma=1.0, eta=(0.5, 0.8))


# -- spectra --------------------------------------------------------------------


def test_n1_spectrum():
    _, X = lattice(1)
    G = fg.build_spectrum(X, SI, xi=0.25)
    assert G.lam.shape == (1,)
    assert np.real(G.lam[0]) == pytest.approx(float(kn.multivariate_eval(SI, X[0], X[0])) + 0.25)


def test_lattice_spectrum_matches_dense_eigenvalues():
    cfg, X = lattice(8)
    G = fg.build_spectrum(X, SI, seq=cfg)
    K = kn.gram(SI, X)
    dense = np.sort(np.linalg.eigvalsh(K))
    assert np.max(np.abs(np.sort(np.real(G.lam)) - dense)) < 1e-8
    assert np.max(np.abs(np.imag(G.lam))) < 1e-10


def test_net_reconstruction_n8():
    cfg, X = net(8)
    G = fg.build_spectrum(X, DSI, seq=cfg)
    Vm = V("fwht", 8)
    assert np.max(np.abs(Vm @ np.diag(G.lam) @ Vm.T - kn.gram(DSI, X))) < 1e-8


PAIRS = [
    ("lattice", kn.KernelSpec("si_bernoulli", 3, alpha=(1, 2, 1), gamma=1.2, eta=(0.3, 0.7, 0.2))),
    ("lattice", kn.KernelSpec("si_bernoulli", 2, alpha=2, eta=1.0, weights={(): 1.0, (0,): 0.4, (0, 1): 0.2})),
    ("net", kn.KernelSpec("dsi_omega", 3, alpha=(2, 3, 4), eta=0.5)),
    ("net", kn.KernelSpec("dsi_kdddot", 2, alpha=1.5, eta=0.9)),
    ("net", kn.KernelSpec("dsi_order1", 2, eta=2.0)),
    ("net", kn.KernelSpec("dsi_adaptive_sum", 2, eta=0.3, a=(1, 0.5, 0.2, 0.1))),
    ("lms", kn.KernelSpec("dsi_omega", 2, alpha=3, eta=0.5)),
]


@settings(max_examples=30, deadline=None)
@given(i=st.integers(0, len(PAIRS) - 1), m=st.integers(0, 6), seed=st.integers(0, 2**31))
def test_reconstruction_and_real(i, m, seed):
    kind, spec = PAIRS[i]
    n = 2**m
    if kind == "lattice":
        cfg = ldseq.LatticeConfig.default(spec.d).randomize(seed)
    else:
        cfg = ldseq.DigitalNetConfig.default(spec.d).randomize(
            np.random.default_rng(seed), "lms_plus_shift" if kind == "lms" else "digital_shift"
        )
    X = ldseq.generate(cfg, n)
    G = fg.build_spectrum(X, spec, seq=cfg)
    D = G.dense()
    K = kn.gram(spec, X)
    assert np.max(np.abs(D - K)) < 1e-8 * max(1.0, np.abs(K).max())
    full = V(G.kind, n) @ np.diag(G.lam) @ V(G.kind, n).conj().T
    assert np.max(np.abs(np.imag(full))) < 1e-10 * max(1.0, np.abs(K).max())


def test_nugget_folded_into_spectrum():
    cfg, X = net(16)
    G0 = fg.build_spectrum(X, DSI, seq=cfg)
    G1 = fg.build_spectrum(X, DSI, xi=0.3, seq=cfg)
    np.testing.assert_allclose(G1.lam, G0.lam + 0.3, atol=1e-12)


def test_pairing_errors():
    cfgL, XL = lattice(8)
    cfgN, XN = net(8)
    with pytest.raises(ValueError):
        fg.build_spectrum(XL, DSI, seq=cfgL)
    with pytest.raises(ValueError):
        fg.build_spectrum(XN, SI, seq=cfgN)
    cfgS, XS = net(8, kind="nus")
    with pytest.raises(ValueError):
        fg.build_spectrum(XS, DSI, seq=cfgS)
    with pytest.raises(ValueError):
        fg.build_spectrum(XN, kn.KernelSpec("squared_exponential", 2))
    with pytest.raises(ValueError):
        fg.build_spectrum(XN[:6], DSI)


# -- operations -------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["fftbr", "fwht"])
def test_identity_spectrum(kind):
    G = fg.StructuredGram(kind, np.ones(16))
    y = np.random.default_rng(0).standard_normal(16)
    np.testing.assert_allclose(G.matvec(y), y, atol=1e-14)
    assert G.logdet() == 0.0
    assert G.trace_inv() == pytest.approx(16.0)


@settings(max_examples=30, deadline=None)
@given(i=st.integers(0, len(PAIRS) - 1), m=st.integers(0, 6), seed=st.integers(0, 2**31))
def test_solve_logdet_trace_vs_dense(i, m, seed):
    kind, spec = PAIRS[i]
    n = 2**m
    if kind == "lattice":
        cfg = ldseq.LatticeConfig.default(spec.d).randomize(seed)
    else:
        cfg = ldseq.DigitalNetConfig.default(spec.d).randomize(np.random.default_rng(seed), "digital_shift")
    X = ldseq.generate(cfg, n)
    xi = 1e-3
    G = fg.build_spectrum(X, spec, xi=xi, seq=cfg)
    K = kn.gram(spec, X) + xi * np.eye(n)
    y = np.random.default_rng(seed).standard_normal(n)
    L = np.linalg.cholesky(K)
    x_dense = np.linalg.solve(L.T, np.linalg.solve(L, y))
    x_fast = G.solve(y)
    assert np.linalg.norm(x_fast - x_dense) / np.linalg.norm(x_dense) < 1e-8
    assert abs(G.logdet() - np.sum(np.log(np.linalg.eigvalsh(K)))) < 1e-8 * max(1.0, n)
    assert G.trace_inv() == pytest.approx(np.trace(np.linalg.inv(K)), rel=1e-8)
    np.testing.assert_allclose(G.matvec(y), K @ y, atol=1e-9 * np.abs(K).sum())
    np.testing.assert_allclose(G.solve2(y), np.linalg.solve(K, x_dense), rtol=1e-6, atol=1e-8 * np.abs(x_dense).max())


@settings(max_examples=30, deadline=None)
@given(m=st.integers(0, 8), seed=st.integers(0, 2**31), kind=st.sampled_from(["fftbr", "fwht"]))
def test_round_trip(m, seed, kind):
    rng = np.random.default_rng(seed)
    n = 2**m
    lam = rng.uniform(0.1, 5.0, n)
    G = fg.StructuredGram(kind, lam)
    # an arbitrary positive spectrum is not that of a real matrix under fftbr, so use complex data
    y = rng.standard_normal(n) + (1j * rng.standard_normal(n) if kind == "fftbr" else 0)
    assert np.max(np.abs(G.solve(G.matvec(y)) - y)) < 1e-8


def test_non_spd_rejected():
    G = fg.StructuredGram("fwht", np.array([1.0, -1.0]))
    with pytest.raises(np.linalg.LinAlgError):
        G.solve(np.ones(2))
    with pytest.raises(np.linalg.LinAlgError):
        G.logdet()


def _best_time(f, reps=7):
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        f()
        best = min(best, time.perf_counter() - t0)
    return best


def test_cost_scaling():
    spec = kn.KernelSpec("dsi_omega", 2, alpha=2, eta=0.5)
    cfg = ldseq.DigitalNetConfig.default(2).randomize(np.random.default_rng(0), "digital_shift")
    X = {m: ldseq.generate(cfg, 2**m) for m in (13, 16)}
    y = {m: np.sin(X[m].sum(1)) for m in X}

    def run(m):
        return _best_time(lambda: fg.build_spectrum(X[m], spec, xi=1e-8).solve(y[m]))

    run(13)
    ratio = run(16) / run(13)
    # reference: the same growth for a bare array copy on this machine
    a13, a16 = np.ones(2**14), np.ones(2**17)
    copy_ratio = _best_time(a16.copy) / _best_time(a13.copy)
    print(f"build+solve 2^16/2^13 = {ratio:.1f}x, array copy 8x larger = {copy_ratio:.1f}x")
    assert ratio < 8


# -- block spectra ------------------------------------------------------------------


def _random_block_lambda(sizes, rng, complex_=False):
    # SPD dense matrix with the block pattern, built as V^H K V of a random multitask Gram
    L = len(sizes)
    blocks = {}
    for a in range(L):
        for b in range(a, L):
            v = rng.standard_normal(sizes[a]) * 0.3
            if complex_ and a != b:
                v = v + 1j * rng.standard_normal(sizes[a]) * 0.3
            if a == b:
                v = np.abs(v) + 2.0 + L
            blocks[(a, b)] = v
    return fg.BlockLambda(sizes, blocks, "fftbr" if complex_ else "fwht")


def test_block_L1():
    lam = fg.BlockLambda((8,), {(0, 0): np.arange(1.0, 9.0)})
    inv, ld = fg.block_inverse_det(lam)
    np.testing.assert_allclose(np.diag(inv.dense()), 1 / np.arange(1.0, 9.0))
    assert ld == pytest.approx(np.sum(np.log(np.arange(1.0, 9.0))))


def test_block_2x2():
    a, b, d = 3.0, 1.2, 2.0
    lam = fg.BlockLambda((1, 1), {(0, 0): np.array([a]), (0, 1): np.array([b]), (1, 1): np.array([d])})
    inv, ld = fg.block_inverse_det(lam)
    S = d - b**2 / a
    assert ld == pytest.approx(np.log(a * S))
    np.testing.assert_allclose(inv.dense(), np.array([[d, -b], [-b, a]]) / (a * d - b**2), atol=1e-14)


def test_block_pattern_8_4_2():
    lam = _random_block_lambda((8, 4, 2), np.random.default_rng(0))
    D = lam.dense()
    # pattern: block (a, b) has entries only at (r, r mod n_b)
    assert np.count_nonzero(D[:8, 8:12]) == 8 and np.count_nonzero(D[:8, 12:14]) == 8
    assert np.count_nonzero(D[8:12, 12:14]) == 4
    inv, ld = fg.block_inverse_det(lam)
    assert np.max(np.abs(D @ inv.dense() - np.eye(14))) < 1e-8
    assert abs(ld - np.linalg.slogdet(D)[1]) < 1e-8


@settings(max_examples=40, deadline=None)
@given(
    ms=st.lists(st.integers(0, 4), min_size=1, max_size=4).map(lambda v: sorted(v, reverse=True)),
    seed=st.integers(0, 2**31),
    complex_=st.booleans(),
)
def test_block_inverse_fuzzed(ms, seed, complex_):
    sizes = tuple(2**m for m in ms)
    lam = _random_block_lambda(sizes, np.random.default_rng(seed), complex_)
    D = lam.dense()
    np.testing.assert_allclose(D, D.conj().T)
    inv, ld = fg.block_inverse_det(lam)
    assert np.max(np.abs(D @ inv.dense() - np.eye(D.shape[0]))) < 1e-8
    assert abs(ld - np.linalg.slogdet(D)[1]) < 1e-8


def test_block_inverse_rejects_nonpositive():
    lam = fg.BlockLambda((1, 1), {(0, 0): np.array([1.0]), (0, 1): np.array([2.0]), (1, 1): np.array([1.0])})
    with pytest.raises(np.linalg.LinAlgError):
        fg.block_inverse_det(lam)


def test_block_sizes_validated():
    with pytest.raises(ValueError):
        fg.BlockLambda((2, 4), {(0, 0): np.ones(2), (0, 1): np.ones(2), (1, 1): np.ones(4)})
    with pytest.raises(ValueError):
        fg.BlockLambda((4,), {(0, 0): np.ones(3)})


@pytest.mark.parametrize("kind", ["lattice", "net"])
def test_build_block_lambda_matches_multitask_gram(kind):
    sizes = (8, 4, 2)
    rng = np.random.default_rng(1)
    A = rng.standard_normal((3, 3))
    R = A @ A.T + np.eye(3)
    xi = [1e-2, 2e-2, 3e-2]
    if kind == "lattice":
        cfg, X = lattice(8, g=(1, 3), seed=2)
        spec = SI
    else:
        cfg, X = net(8)
        spec = DSI
    lam = fg.build_block_lambda(X, spec, sizes, R, xi)
    # dense multitask Gram over the stacked prefixes
    idx = [(a, i) for a in range(3) for i in range(sizes[a])]
    K = np.array([[R[a, b] * kn.multivariate_eval(spec, X[i], X[j]) + (xi[a] if (a, i) == (b, j) else 0.0) for b, j in idx] for a, i in idx])
    Vb = np.zeros((14, 14), dtype=complex)
    off = 0
    for s in sizes:
        Vb[off : off + s, off : off + s] = V(lam.kind, s)
        off += s
    assert np.max(np.abs(Vb @ lam.dense() @ Vb.conj().T - K)) < 1e-8
    inv, ld = fg.block_inverse_det(lam)
    assert abs(ld - np.linalg.slogdet(K)[1]) < 1e-8


# -- discrepancy ----------------------------------------------------------------------


def test_discrepancy_equal_weights_identity():
    _, X = lattice(16, seed=3)
    n = 16
    K = kn.gram(SI, X)
    want = K.sum() / n**2 - SI.gamma
    assert fg.kernel_discrepancy(X, np.full(n, 1 / n), SI) == pytest.approx(want, abs=1e-12)
    assert fg.kernel_discrepancy(X, np.full(n, 1 / n), SI, fast=False) == pytest.approx(want, abs=1e-12)


def test_discrepancy_single_point():
    X = np.array([[0.2, 0.7]])
    want = float(kn.multivariate_eval(SI, X[0], X[0])) - SI.gamma
    assert fg.kernel_discrepancy(X, np.ones(1), SI) == pytest.approx(want)


def test_discrepancy_fast_equals_dense_and_se_path():
    cfg, X = net(32, seed=4)
    w = np.random.default_rng(0).random(32) / 32
    assert fg.kernel_discrepancy(X, w, DSI) == pytest.approx(fg.kernel_discrepancy(X, w, DSI, fast=False), abs=1e-12)
    se = kn.KernelSpec("squared_exponential", 2, eta=0.5)
    assert fg.kernel_discrepancy(X, np.full(32, 1 / 32), se) >= -1e-12


def test_optimal_weights():
    cfg, X = net(32, seed=5)
    w = fg.optimal_weights(X, DSI, xi=1e-10)
    np.testing.assert_allclose(w, fg.optimal_weights(X, DSI, xi=1e-10, fast=False), rtol=1e-6)
    # DSI product kernel: constant integrals, so optimal weights are equal
    np.testing.assert_allclose(w, np.full(32, w[0]), rtol=1e-8)
    # optimum beats equal weights
    assert fg.kernel_discrepancy(X, w, DSI) <= fg.kernel_discrepancy(X, np.full(32, 1 / 32), DSI) + 1e-12


def test_discrepancy_median_decreases():
    spec = kn.KernelSpec("si_bernoulli", 2, alpha=1, eta=0.5)
    base = ldseq.LatticeConfig.default(2)
    meds = []
    for m in range(4, 11):
        vals = []
        for s in range(20):
            X = ldseq.generate(base.randomize(s), 2**m)
            vals.append(fg.kernel_discrepancy(X, np.full(2**m, 2.0**-m), spec))
        meds.append(np.median(vals))
    assert all(b < a for a, b in zip(meds, meds[1:]))
