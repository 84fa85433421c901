"""Gaussian-process regression and Bayesian cubature on matched point/kernel pairs.

:class:`FastGP` and :class:`FastMultitaskGP` use structured Gram spectra and
cost ``O(n log n)`` per loss evaluation.  :class:`DenseGP` and
:class:`DenseMultitaskGP` implement the same models with dense Cholesky
algebra; they serve as oracles and as baselines for timing.

All estimators follow the scikit-learn conventions: hyperparameters are
constructor arguments, ``fit`` returns ``self`` and learned state carries a
trailing underscore.
"""

from __future__ import annotations

import inspect
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from . import fastgram as fg
from . import fastxform as fx
from . import kernels as kn
from . import ldseq

__all__ = [
    "CubatureResult",
    "FastGP",
    "DenseGP",
    "FastMultitaskGP",
    "DenseMultitaskGP",
    "kernel_with_grads",
    "rprop_minimize",
    "loglog_interpolate",
    "NotFittedError",
    "save_model",
    "load_model",
]

XI_FLOOR = 1e-8
_LOG_BOUND = 30.0


class NotFittedError(RuntimeError):
    pass


@dataclass
class CubatureResult:
    """Posterior of an integral: mean ``estimate``, variance ``variance`` (``n`` points)."""

    estimate: float
    variance: float
    n: int
    weights: Optional[np.ndarray] = field(default=None, repr=False)


# ----------------------------------------------------------------------------
# utilities
# ----------------------------------------------------------------------------


class _ParamsMixin:
    def get_params(self, deep: bool = True) -> dict:
        names = [p for p in inspect.signature(type(self).__init__).parameters if p != "self"]
        return {k: getattr(self, k) for k in names}

    def set_params(self, **params):
        valid = self.get_params()
        for k, v in params.items():
            if k not in valid:
                raise ValueError(f"invalid parameter {k!r} for {type(self).__name__}")
            setattr(self, k, v)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


def loglog_interpolate(n_hat: float, v_lo: float, v_hi: float, p: int) -> float:
    """Interpolate ``V`` linearly in log-log scale between ``n = 2^p`` and ``2^(p+1)``.

    Returns ``v_lo^(p+1) / v_hi^p * n_hat^(log2(v_hi / v_lo))``.  Nonpositive
    inputs are floored at the smallest positive double.
    """
    tiny = np.finfo(float).tiny
    v_lo, v_hi = max(v_lo, tiny), max(v_hi, tiny)
    slope = math.log2(v_hi / v_lo)
    return math.exp((p + 1) * math.log(v_lo) - p * math.log(v_hi) + slope * math.log(n_hat))


def rprop_minimize(fun: Callable, theta0: np.ndarray, max_iter: int = 20, lr: float = 0.1, tol: float = 1e-6):
    """Sign-based adaptive-step descent with step acceptance.

    ``fun(theta)`` returns ``(loss, grad)``.  A step ``theta - step * sign(grad)``
    is accepted only if it does not increase the loss; accepted steps grow the
    per-coordinate step by 1.2 (0.5 where the gradient sign flipped), rejected
    steps halve it.  Returns ``(theta, loss, history, converged)``.
    """
    theta = np.array(theta0, dtype=np.float64)
    loss, grad = fun(theta)
    history = [loss]
    step = np.full(theta.shape, lr)
    converged = theta.size == 0
    for _ in range(max_iter):
        if converged:
            break
        g = np.sign(grad)
        cand = np.clip(theta - step * g, -_LOG_BOUND, _LOG_BOUND)
        try:
            c_loss, c_grad = fun(cand)
        except np.linalg.LinAlgError:
            c_loss, c_grad = np.inf, grad
        if np.isfinite(c_loss) and c_loss <= loss:
            flip = np.sign(c_grad) * g < 0
            step = np.where(flip, step * 0.5, step * 1.2)
            theta, loss, grad = cand, c_loss, c_grad
            history.append(loss)
        else:
            step = step * 0.5
        if np.max(step) < tol:
            converged = True
    return theta, loss, history, converged


# ----------------------------------------------------------------------------
# kernel values and log-parameter gradients
# ----------------------------------------------------------------------------


def param_names(spec: kn.KernelSpec, fit_params: Optional[Sequence[str]] = None) -> list[str]:
    fit_params = ("gamma", "eta", "a") if fit_params is None else tuple(fit_params)
    names = []
    if "gamma" in fit_params:
        names.append("gamma")
    if "eta" in fit_params:
        names += [f"eta{j}" for j in range(spec.d)]
    if "a" in fit_params and spec.family == "dsi_adaptive_sum":
        names += [f"a{i}" for i in range(4)]
    return names


def pack(spec: kn.KernelSpec, names: Sequence[str]) -> np.ndarray:
    out = []
    for nm in names:
        if nm == "gamma":
            v = spec.gamma
        elif nm.startswith("eta"):
            v = spec.eta[int(nm[3:])]
        else:
            v = spec.a[int(nm[1:])]
        out.append(math.log(max(v, 1e-12)))
    return np.array(out)


def unpack(spec: kn.KernelSpec, names: Sequence[str], theta: np.ndarray) -> kn.KernelSpec:
    gamma, eta = spec.gamma, list(spec.eta)
    a = list(spec.a) if spec.a is not None else None
    for nm, v in zip(names, np.exp(theta)):
        if nm == "gamma":
            gamma = float(v)
        elif nm.startswith("eta"):
            eta[int(nm[3:])] = float(v)
        else:
            a[int(nm[1:])] = float(v)
    kw = dict(gamma=gamma, eta=tuple(eta))
    if a is not None:
        kw["a"] = tuple(a)
    return spec.with_params(**kw)


def _xor_bits(spec, x, xp):
    return kn.to_bits(x, spec.t) ^ kn.to_bits(xp, spec.t)


def raw_components(spec: kn.KernelSpec, x, xp):
    """Hyperparameter-free univariate pieces of an SI/DSI product kernel.

    These depend only on the points, so a fit can compute them once and pass
    them to :func:`kernel_with_grads` on every loss evaluation.
    """
    x, xp = np.asarray(x), np.asarray(xp)
    if spec.is_dsi:
        z = _xor_bits(spec, x, xp)
        if spec.family == "dsi_adaptive_sum":
            return [kn.adaptive_components(z[..., j], spec.t) for j in range(spec.d)]
        return [spec.component_from_bits(j, z[..., j]) for j in range(spec.d)]
    return [spec.component(j, x[..., j], xp[..., j]) for j in range(spec.d)]


def kernel_with_grads(spec: kn.KernelSpec, x, xp, names: Sequence[str], raw=None):
    """Kernel values and derivatives with respect to the log-parameters ``names``.

    ``raw`` optionally holds :func:`raw_components` for the same points.
    """
    x, xp = np.asarray(x), np.asarray(xp)
    product = spec.weights is None and (spec.is_si or spec.is_dsi)
    if spec.family == "squared_exponential":
        K = kn.multivariate_eval(spec, x, xp)
        grads = []
        for nm in names:
            if nm == "gamma":
                grads.append(K)
            else:
                j = int(nm[3:])
                grads.append(K * (x[..., j] - xp[..., j]) ** 2 / spec.eta[j] ** 2)
        return K, grads
    if not product:
        K = kn.multivariate_eval(spec, x, xp)
        grads = []
        base = pack(spec, names)
        h = 1e-6
        for i in range(len(names)):
            e = np.zeros_like(base)
            e[i] = h
            kp = kn.multivariate_eval(unpack(spec, names, base + e), x, xp)
            km = kn.multivariate_eval(unpack(spec, names, base - e), x, xp)
            grads.append((kp - km) / (2 * h))
        return K, grads
    d = spec.d
    raw = raw_components(spec, x, xp) if raw is None else raw
    parts = None
    if spec.family == "dsi_adaptive_sum":
        parts = raw
        comps = [np.tensordot(np.asarray(spec.a), p, axes=1) for p in parts]
    else:
        comps = raw
    deriv = [b + bp > 0 for b, bp in zip(spec.beta, spec.betap)]
    ec = [spec.eta[j] * np.asarray(comps[j], dtype=float) for j in range(d)]
    facs = [e if deriv[j] else e + 1.0 for j, e in enumerate(ec)]
    # products of all factors but one, via prefix/suffix products
    pre, acc = [], None
    for f in facs:
        pre.append(acc)
        acc = f if acc is None else acc * f
    K = spec.gamma * acc
    if not names:
        return K, []
    suf, acc = [None] * d, None
    for j in range(d - 1, -1, -1):
        suf[j] = acc
        acc = facs[j] if acc is None else acc * facs[j]

    def others(j):
        p, q = pre[j], suf[j]
        if p is None and q is None:
            return np.full(np.shape(facs[j]), spec.gamma)
        out = p * q if p is not None and q is not None else (p if q is None else q).copy()
        out *= spec.gamma
        return out

    grads = []
    cache = {}
    for nm in names:
        if nm == "gamma":
            grads.append(K)
        elif nm.startswith("eta"):
            j = int(nm[3:])
            o = cache.setdefault(j, others(j))
            grads.append(o * ec[j])
        else:
            i = int(nm[1:])
            g = 0.0
            for j in range(d):
                o = cache.setdefault(j, others(j))
                g = g + o * (spec.eta[j] * spec.a[i]) * parts[j][i]
            grads.append(g)
    return K, grads


_CHUNK = 8192


def _chunks(n: int):
    return [slice(s, min(s + _CHUNK, n)) for s in range(0, n, _CHUNK)]


def _check_xy(X, y):
    X = np.asarray(X)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError(f"X must be (n, d) and y (n,), got {X.shape} and {y.shape}")
    return X, y


# ----------------------------------------------------------------------------
# single-task GPs
# ----------------------------------------------------------------------------


class _GPBase(_ParamsMixin):
    def __init__(
        self,
        kernel: kn.KernelSpec,
        xi: float = XI_FLOOR,
        loss: str = "nmll",
        optimize: bool = True,
        max_iter: int = 20,
        lr: float = 0.1,
        fit_params: Optional[Sequence[str]] = None,
        tau: Optional[float] = None,
        seq=None,
    ):
        self.kernel = kernel
        self.xi = xi
        self.loss = loss
        self.optimize = optimize
        self.max_iter = max_iter
        self.lr = lr
        self.fit_params = fit_params
        self.tau = tau
        self.seq = seq

    # subclasses provide _prepare(spec) -> state, _loss_grad(state, names) and
    # the posterior/cubature routines.

    def _check_fitted(self):
        if not hasattr(self, "kernel_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted")

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        if self.loss not in ("nmll", "gcv"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if not self.xi > 0:
            raise ValueError("nugget xi must be positive")
        self.X_, self.y_ = X, y
        self._raw_cache = None
        self._rt2_cache = None
        self._Xp_cache = None
        self._validate_points(X)
        names = param_names(self.kernel, self.fit_params)
        self.param_names_ = names
        spec0 = self.kernel

        def fun(theta):
            spec = unpack(spec0, names, theta)
            return self._loss_grad(spec, names)

        theta0 = pack(spec0, names)
        if self.optimize and self.max_iter > 0 and names:
            theta, loss, hist, conv = rprop_minimize(fun, theta0, self.max_iter, self.lr)
            self.kernel_ = unpack(spec0, names, theta)
        else:
            self.kernel_ = spec0
            loss, hist, conv = None, [], not self.optimize or not names
        self.n_iter_ = max(len(hist) - 1, 0)
        self.loss_history_ = hist
        self.converged_ = conv
        self._refresh()
        self.loss_ = self.loss_value(self.loss)
        return self

    def _validate_points(self, X):
        pass

    def loss_value(self, loss: Optional[str] = None) -> float:
        self._check_fitted()
        return self.nmll() if (loss or self.loss) == "nmll" else self.gcv()

    def projected_variance(self, n_hat: float) -> float:
        """Cubature variance forecast at ``n_hat`` points (exact at powers of two)."""
        self._check_fitted()
        p = int(math.floor(math.log2(n_hat)))
        if 2**p == n_hat:
            return self.cubature_variance(2**p)
        return loglog_interpolate(n_hat, self.cubature_variance(2**p), self.cubature_variance(2 ** (p + 1)), p)


class FastGP(_GPBase):
    """Single-task GP on a lattice (SI kernel) or base-2 net (DSI kernel).

    ``X`` must hold the first ``2^m`` points of the sequence in generation
    order.  ``seq`` (the sequence config) enables pairing checks and variance
    forecasts beyond the training size.
    """

    def _validate_points(self, X):
        fg._check_pairing(self.kernel, self.seq)
        fg.transform_kind(self.kernel)

    def _spectrum(self, spec, X=None):
        X = self.X_ if X is None else X
        G = fg.build_spectrum(X, spec, self.xi)
        return G

    def _loss_grad(self, spec, names):
        X, y = self.X_, self.y_
        n = y.size
        kind = fg.transform_kind(spec)
        # FFT path: evaluate columns at bit-reversed rows so no per-step gather is needed
        if self._Xp_cache is None:
            self._Xp_cache = X[fx.bit_reversal_permutation(n)] if kind == "fftbr" else X
        Xp = self._Xp_cache
        raw = None
        if spec.weights is None and (spec.is_si or spec.is_dsi):
            if self._raw_cache is None:
                self._raw_cache = raw_components(spec, Xp, X[:1])
            raw = self._raw_cache
        if raw is None:
            col, dcols = kernel_with_grads(spec, Xp, X[:1], names, raw=raw)
            col = np.array(col, dtype=float)
        else:
            # rows in cache-sized chunks; gradient columns are only needed as dot products
            col = np.empty(n)
            for sl in _chunks(n):
                col[sl] = kernel_with_grads(spec, None, None, [], raw=[r[..., sl] for r in raw])[0]
        col[0] += self.xi
        lam = fg.real_spectrum(kind, col, permuted=True)
        if np.any(lam <= 0):
            raise np.linalg.LinAlgError("Gram matrix is not SPD")
        tau = np.mean(y) if self.tau is None else self.tau
        if self._rt2_cache is None:
            self._rt2_cache = np.abs(fg.forward(kind, y - tau)) ** 2
        rt2 = self._rt2_cache
        if self.loss == "nmll":
            loss = float(np.sum(rt2 / lam) + np.sum(np.log(lam)))
            w = -rt2 / lam**2 + 1.0 / lam
        else:
            num, T = np.sum(rt2 / lam**2), np.sum(1.0 / lam)
            loss = float(num / T**2)
            w = -2 * rt2 / lam**3 / T**2 + 2 * num / T**3 / lam**2
        # dloss = sum_k w_k (A c')_k = c' . (A w) for the symmetric real operator A, so one
        # transform of w replaces one transform per gradient column
        Aw = fg.real_spectrum(kind, w, permuted=True)
        if raw is None:
            grad = np.array([float(np.dot(dc, Aw)) for dc in dcols])
        else:
            grad = np.zeros(len(names))
            for sl in _chunks(n):
                dcs = kernel_with_grads(spec, None, None, names, raw=[r[..., sl] for r in raw])[1]
                grad += [float(np.dot(dc, Aw[sl])) for dc in dcs]
        return loss, grad

    def _refresh(self):
        self.gram_ = self._spectrum(self.kernel_)
        self.tau_ = self.optimal_tau(self.loss) if self.tau is None else float(self.tau)
        self.alpha_ = self.gram_.solve(self.y_ - self.tau_)
        self._var_cache = {}

    # -- losses ----------------------------------------------------------
    def optimal_tau(self, loss: str = "nmll") -> float:
        """Closed-form optimal constant prior mean (both losses give the sample mean here)."""
        self._check_fitted()
        G, y = self.gram_, self.y_
        n = y.size
        one = np.ones(n)
        if loss == "nmll":
            return float(G.solve(one) @ y / (G.solve(one) @ one))
        return float(G.solve2(one) @ y / (G.solve2(one) @ one))

    def nmll(self) -> float:
        self._check_fitted()
        r = self.y_ - self.tau_
        return float(r @ self.gram_.solve(r) + self.gram_.logdet())

    def gcv(self) -> float:
        self._check_fitted()
        r = self.y_ - self.tau_
        return float(r @ self.gram_.solve2(r) / self.gram_.trace_inv() ** 2)

    # -- posterior ---------------------------------------------------------
    def predict(self, Xq, return_var: bool = False):
        self._check_fitted()
        Xq = np.asarray(Xq)
        Kq = kn.gram(self.kernel_, Xq, self.X_)
        mean = self.tau_ + Kq @ self.alpha_
        if not return_var:
            return mean
        W = self.gram_.solve(Kq)
        kqq = kn.multivariate_eval(self.kernel_, Xq, Xq)
        return mean, kqq - np.sum(Kq * W, axis=1)

    # -- cubature ----------------------------------------------------------
    def _points(self, n: int) -> np.ndarray:
        if n <= self.X_.shape[0]:
            return self.X_[:n]
        if self.seq is None:
            raise ValueError(f"need the sequence config to forecast beyond n={self.X_.shape[0]}")
        return ldseq.generate(self.seq, n)

    def cubature_variance(self, n: Optional[int] = None) -> float:
        """Posterior variance of the integral with the first ``n`` points (depends on points only)."""
        self._check_fitted()
        n = self.X_.shape[0] if n is None else int(n)
        if n not in self._var_cache:
            c = kn.kernel_mean(self.kernel_)
            G = self._spectrum(self.kernel_, self._points(n))
            self._var_cache[n] = c - c * c * n / G.lam0
        return self._var_cache[n]

    def bayes_cubature(self) -> CubatureResult:
        self._check_fitted()
        c = kn.kernel_mean(self.kernel_)
        n = self.y_.size
        lam0 = self.gram_.lam0
        est = self.tau_ + c * np.sum(self.y_ - self.tau_) / lam0
        return CubatureResult(float(est), float(self.cubature_variance(n)), n, np.full(n, c / lam0))


class DenseGP(_GPBase):
    """Dense-algebra GP with the same interface as :class:`FastGP`.

    ``chunk`` bounds the number of Gram rows built at once.
    """

    chunk = 1024

    def _gram(self, spec, X):
        n = X.shape[0]
        K = np.empty((n, n))
        for s in range(0, n, self.chunk):
            K[s : s + self.chunk] = kn.gram(spec, X[s : s + self.chunk], X)
        K[np.diag_indices(n)] += self.xi
        return K

    def _factor(self, spec):
        K = self._gram(spec, self.X_)
        cf = sla.cho_factor(K, lower=True, overwrite_a=True, check_finite=False)
        return cf

    def _chol_inverse(self, cf):
        """``K^{-1}`` from a lower Cholesky factor, overwriting it (LAPACK potri)."""
        inv, info = sla.lapack.dpotri(cf[0], lower=1, overwrite_c=1)
        if info:
            raise np.linalg.LinAlgError("Cholesky inverse failed")
        n = inv.shape[0]
        # potri fills only the lower triangle; mirror it block by block in place
        for s in range(0, n, self.chunk):
            e = min(s + self.chunk, n)
            blk = inv[s:e, s:e]
            blk[...] = np.tril(blk) + np.tril(blk, -1).T
            inv[s:e, e:] = inv[e:, s:e].T
        return inv

    def _loss_grad(self, spec, names):
        X, y = self.X_, self.y_
        n = y.size
        cf = self._factor(spec)
        logdet = 2 * np.sum(np.log(np.diag(cf[0])))
        Kinv = self._chol_inverse(cf)
        one = np.ones(n)
        Ki1 = Kinv @ one
        if self.tau is not None:
            tau = self.tau
        elif self.loss == "nmll":
            tau = Ki1 @ y / (Ki1 @ one)
        else:
            K2i1 = Kinv @ Ki1
            tau = K2i1 @ y / (K2i1 @ one)
        r = y - tau
        a = Kinv @ r
        g = np.zeros(len(names))
        if self.loss == "nmll":
            loss = float(r @ a + logdet)
            for s in range(0, n, self.chunk):
                sl = slice(s, s + self.chunk)
                _, dks = kernel_with_grads(spec, X[sl, None, :], X[None, :, :], names)
                for i, dK in enumerate(dks):
                    g[i] += np.sum(Kinv[sl] * dK) - a[sl] @ dK @ a
        else:
            b = Kinv @ a
            T = np.trace(Kinv)
            num = a @ a
            loss = float(num / T**2)
            for s in range(0, n, self.chunk):
                sl = slice(s, s + self.chunk)
                _, dks = kernel_with_grads(spec, X[sl, None, :], X[None, :, :], names)
                K2 = Kinv[sl] @ Kinv
                for i, dK in enumerate(dks):
                    dnum = -2 * (b[sl] @ dK @ a)
                    dT = -np.sum(K2 * dK)
                    g[i] += dnum / T**2 - 2 * num / T**3 * dT
        return loss, g

    def _refresh(self):
        self.cf_ = self._factor(self.kernel_)
        self.tau_ = self.optimal_tau(self.loss) if self.tau is None else float(self.tau)
        self.alpha_ = sla.cho_solve(self.cf_, self.y_ - self.tau_)
        self._var_cache = {}

    def _solve(self, b):
        return sla.cho_solve(self.cf_, b)

    def optimal_tau(self, loss: str = "nmll") -> float:
        self._check_fitted()
        one = np.ones(self.y_.size)
        v = self._solve(one)
        if loss == "gcv":
            v = self._solve(v)
        return float(v @ self.y_ / (v @ one))

    def nmll(self) -> float:
        self._check_fitted()
        r = self.y_ - self.tau_
        return float(r @ self._solve(r) + 2 * np.sum(np.log(np.diag(self.cf_[0]))))

    def gcv(self) -> float:
        self._check_fitted()
        r = self.y_ - self.tau_
        a = self._solve(r)
        Kinv = self._solve(np.eye(r.size))
        return float(a @ a / np.trace(Kinv) ** 2)

    def predict(self, Xq, return_var: bool = False):
        self._check_fitted()
        Xq = np.asarray(Xq)
        Kq = kn.gram(self.kernel_, Xq, self.X_)
        mean = self.tau_ + Kq @ self.alpha_
        if not return_var:
            return mean
        W = self._solve(Kq.T)
        kqq = kn.multivariate_eval(self.kernel_, Xq, Xq)
        return mean, kqq - np.sum(Kq.T * W, axis=0)

    def _integrals(self, X):
        spec = self.kernel_
        if spec.family == "squared_exponential":
            return kn.se_double_integral(spec.d, spec.gamma, spec.eta), kn.se_integral(X, spec.gamma, spec.eta)
        c = kn.kernel_mean(spec)
        return c, np.full(X.shape[0], c)

    def cubature_variance(self, n: Optional[int] = None) -> float:
        self._check_fitted()
        n = self.X_.shape[0] if n is None else int(n)
        if n not in self._var_cache:
            if n <= self.X_.shape[0]:
                X = self.X_[:n]
            elif self.seq is not None:
                X = ldseq.generate(self.seq, n)
            else:
                raise ValueError("need the sequence config to forecast beyond the training size")
            dbl, k = self._integrals(X)
            K = self._gram(self.kernel_, X)
            self._var_cache[n] = float(dbl - k @ np.linalg.solve(K, k))
        return self._var_cache[n]

    def bayes_cubature(self) -> CubatureResult:
        self._check_fitted()
        dbl, k = self._integrals(self.X_)
        w = self._solve(k)
        est = self.tau_ + w @ (self.y_ - self.tau_)
        return CubatureResult(float(est), float(dbl - k @ w), self.y_.size, w)


# ----------------------------------------------------------------------------
# multitask GPs
# ----------------------------------------------------------------------------


class _MTBase(_ParamsMixin):
    """Common setup for multitask GPs with ``K((a, x), (b, x')) = R_ab Q(x, x')``.

    ``R = G G^T + diag(t)``.  Task ``a`` observes ``f_a`` at the first
    ``n_a`` points of one shared sequence.
    """

    def __init__(
        self,
        kernel: kn.KernelSpec,
        rank: int = 1,
        xi=XI_FLOOR,
        loss: str = "nmll",
        optimize: bool = False,
        max_iter: int = 20,
        lr: float = 0.1,
        G: Optional[np.ndarray] = None,
        t: Optional[np.ndarray] = None,
        tau: Optional[np.ndarray] = None,
    ):
        self.kernel = kernel
        self.rank = rank
        self.xi = xi
        self.loss = loss
        self.optimize = optimize
        self.max_iter = max_iter
        self.lr = lr
        self.G = G
        self.t = t
        self.tau = tau

    def _check_fitted(self):
        if not hasattr(self, "R_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted")

    @staticmethod
    def task_covariance(G, t) -> np.ndarray:
        G = np.atleast_2d(np.asarray(G, dtype=float))
        return G @ G.T + np.diag(np.asarray(t, dtype=float))

    def fit(self, X, ys: Sequence[np.ndarray]):
        ys = [np.asarray(y, dtype=np.float64) for y in ys]
        L = len(ys)
        sizes = [y.size for y in ys]
        order = np.argsort([-s for s in sizes], kind="stable")
        self.order_ = order
        self.sizes_ = tuple(sizes[i] for i in order)
        self.ys_ = [ys[i] for i in order]
        X = np.asarray(X)
        if X.shape[0] < self.sizes_[0]:
            raise ValueError("X must hold at least max(n_a) points")
        self.X_ = X[: self.sizes_[0]]
        xi = np.broadcast_to(np.asarray(self.xi, dtype=float), (L,))
        if np.any(xi <= 0):
            raise ValueError("nuggets must be positive")
        self.xi_ = xi[order]
        G0 = np.ones((L, self.rank)) * 0.5 if self.G is None else np.asarray(self.G, dtype=float)
        t0 = np.full(L, 0.5) if self.t is None else np.asarray(self.t, dtype=float)
        self.G_, self.t_ = G0[order], t0[order]
        self.kernel_ = self.kernel
        self._setup()
        if self.optimize and self.max_iter > 0:
            self._optimize()
        self._refresh()
        return self

    def _setup(self):
        pass

    def _theta(self):
        names = param_names(self.kernel_)
        return np.concatenate([pack(self.kernel_, names), self.G_.ravel(), np.log(self.t_)]), names

    def _set_theta(self, theta, names):
        k = len(names)
        L = len(self.sizes_)
        self.kernel_ = unpack(self.kernel, names, theta[:k])
        self.G_ = theta[k : k + L * self.rank].reshape(L, self.rank)
        self.t_ = np.exp(theta[k + L * self.rank :])

    def _optimize(self):
        theta0, names = self._theta()

        def fun(th):
            self._set_theta(th, names)
            self._refresh()
            loss = self.loss_value()
            g = np.zeros_like(th)
            h = 1e-6
            for i in range(th.size):
                e = np.zeros_like(th)
                e[i] = h
                self._set_theta(th + e, names)
                self._refresh()
                lp = self.loss_value()
                self._set_theta(th - e, names)
                self._refresh()
                lm = self.loss_value()
                g[i] = (lp - lm) / (2 * h)
            return loss, g

        theta, _, hist, conv = rprop_minimize(fun, theta0, self.max_iter, self.lr)
        self._set_theta(theta, names)
        self.loss_history_ = hist
        self.converged_ = conv

    def loss_value(self, loss: Optional[str] = None) -> float:
        return self.nmll() if (loss or self.loss) == "nmll" else self.gcv()

    def _unsort(self, v):
        out = np.empty_like(v)
        out[self.order_] = v
        return out

    def mse(self, omega, chi) -> float:
        """Posterior mean squared error of ``omega^T nu`` against ``E[chi^T nu | y]``."""
        _, rho, Sigma = self._cubature_parts()
        omega, chi = np.asarray(omega, float), np.asarray(chi, float)
        return float(omega @ Sigma @ omega + ((omega - chi) @ rho) ** 2)

    def bayes_cubature(self, chi: Optional[np.ndarray] = None):
        """Posterior means ``rho`` and covariance ``Sigma`` of the task integrals (input task order).

        With ``chi`` given, also returns the MSE-optimal combination weights and
        their MSE.
        """
        self._check_fitted()
        _, rho, Sigma = self._cubature_parts()
        if chi is None:
            return rho, Sigma
        chi = np.asarray(chi, dtype=float)
        M = Sigma + np.outer(rho, rho)
        s = np.linalg.solve(M, rho)
        omega = (rho @ chi) * s
        mse = (rho @ chi) ** 2 * (1.0 - rho @ s)
        return rho, Sigma, omega, float(mse)


class FastMultitaskGP(_MTBase):
    """Multitask GP using block spectra and :func:`fastgram.block_inverse_det`."""

    def _setup(self):
        fg.transform_kind(self.kernel)

    def _refresh(self):
        self.R_ = self.task_covariance(self.G_, self.t_)
        self.lam_ = fg.build_block_lambda(self.X_, self.kernel_, self.sizes_, self.R_, self.xi_)
        self.gamma_inv_, self.logdet_ = fg.block_inverse_det(self.lam_)
        self.upsilon_ = self.gamma_inv_.square()
        kind = self.lam_.kind
        self.yt_ = [fg.forward(kind, y) for y in self.ys_]
        self.tau_ = self._solve_tau(self.loss) if self.tau is None else np.asarray(self.tau, float)[self.order_]

    def _corner(self, M: fg.ClassBlockMatrix) -> np.ndarray:
        L = len(self.sizes_)
        n = np.sqrt(np.array(self.sizes_, dtype=float))
        P = np.empty((L, L))
        for a in range(L):
            for b in range(L):
                P[a, b] = np.real(M.entry(a, 0, b, 0)) * n[a] * n[b]
        return P

    def Pi(self) -> np.ndarray:
        return self._corner(self.gamma_inv_)

    def P(self) -> np.ndarray:
        return self._corner(self.upsilon_)

    def _apply(self, M: fg.ClassBlockMatrix, vt):
        """Apply ``V M V^H`` to transformed vectors ``vt`` (returns transformed result)."""
        return M.matvec(vt)

    def _ones_dot(self, zt):
        n = np.sqrt(np.array(self.sizes_, dtype=float))
        return np.array([np.real(z[0]) * na for z, na in zip(zt, n)])

    def _solve_tau(self, loss):
        M = self.gamma_inv_ if loss == "nmll" else self.upsilon_
        lhs = self.Pi() if loss == "nmll" else self.P()
        rhs = self._ones_dot(self._apply(M, self.yt_))
        return np.linalg.solve(lhs, rhs)

    def optimal_tau(self, loss: str = "nmll") -> np.ndarray:
        self._check_fitted()
        return self._unsort(self._solve_tau(loss))

    def _residual_t(self):
        n = np.sqrt(np.array(self.sizes_, dtype=float))
        rt = [yt.copy() for yt in self.yt_]
        for a in range(len(rt)):
            rt[a][0] -= self.tau_[a] * n[a]
        return rt

    def nmll(self) -> float:
        self._check_fitted()
        rt = self._residual_t()
        z = self._apply(self.gamma_inv_, rt)
        return float(np.real(sum(np.vdot(r, zz) for r, zz in zip(rt, z))) + self.logdet_)

    def gcv(self) -> float:
        self._check_fitted()
        rt = self._residual_t()
        z = self._apply(self.gamma_inv_, rt)
        num = float(np.real(sum(np.vdot(zz, zz) for zz in z)))
        tr = float(np.real(np.trace(self.gamma_inv_.blocks, axis1=1, axis2=2).sum()))
        return num / tr**2

    def _Ar(self):
        kind = self.lam_.kind
        z = self._apply(self.gamma_inv_, self._residual_t())
        out = []
        for zz in z:
            v = fg.inverse(kind, zz)
            out.append(np.real(v))
        return out

    def predict(self, task: int, Xq) -> np.ndarray:
        """Posterior mean of task ``task`` (input order) at ``Xq``."""
        self._check_fitted()
        a = int(np.where(self.order_ == task)[0][0])
        Ar = self._Ar()
        Xq = np.asarray(Xq)
        out = np.full(Xq.shape[0], self.tau_[a])
        for b, n_b in enumerate(self.sizes_):
            out += self.R_[a, b] * kn.gram(self.kernel_, Xq, self.X_[:n_b]) @ Ar[b]
        return out

    def _cubature_parts(self):
        c = kn.kernel_mean(self.kernel_)
        TAr = np.array([np.sum(v) for v in self._Ar()])
        rho = self.tau_ + c * self.R_ @ TAr
        Sigma = c * self.R_ - c * c * self.R_ @ self.Pi() @ self.R_
        o = self.order_
        inv = np.empty_like(o)
        inv[o] = np.arange(o.size)
        return c, rho[inv], Sigma[np.ix_(inv, inv)]


class DenseMultitaskGP(_MTBase):
    """Dense multitask GP oracle."""

    def _refresh(self):
        self.R_ = self.task_covariance(self.G_, self.t_)
        L = len(self.sizes_)
        blocks = []
        for a in range(L):
            row = []
            for b in range(L):
                B = self.R_[a, b] * kn.gram(self.kernel_, self.X_[: self.sizes_[a]], self.X_[: self.sizes_[b]])
                if a == b:
                    B = B + self.xi_[a] * np.eye(self.sizes_[a])
                row.append(B)
            blocks.append(row)
        self.K_ = np.block(blocks)
        self.A_ = np.linalg.inv(self.K_)
        N = self.K_.shape[0]
        T = np.zeros((N, L))
        off = np.concatenate([[0], np.cumsum(self.sizes_)])
        for a in range(L):
            T[off[a] : off[a + 1], a] = 1.0
        self.T_ = T
        self.yv_ = np.concatenate(self.ys_)
        self.tau_ = self._solve_tau(self.loss) if self.tau is None else np.asarray(self.tau, float)[self.order_]

    def _solve_tau(self, loss):
        A = self.A_ if loss == "nmll" else self.A_ @ self.A_
        T = self.T_
        return np.linalg.solve(T.T @ A @ T, T.T @ A @ self.yv_)

    def optimal_tau(self, loss: str = "nmll") -> np.ndarray:
        self._check_fitted()
        return self._unsort(self._solve_tau(loss))

    def Pi(self):
        return self.T_.T @ self.A_ @ self.T_

    def P(self):
        return self.T_.T @ self.A_ @ self.A_ @ self.T_

    def nmll(self) -> float:
        r = self.yv_ - self.T_ @ self.tau_
        return float(r @ self.A_ @ r + np.linalg.slogdet(self.K_)[1])

    def gcv(self) -> float:
        r = self.yv_ - self.T_ @ self.tau_
        Ar = self.A_ @ r
        return float(Ar @ Ar / np.trace(self.A_) ** 2)

    def predict(self, task: int, Xq) -> np.ndarray:
        self._check_fitted()
        a = int(np.where(self.order_ == task)[0][0])
        Xq = np.asarray(Xq)
        kq = np.hstack([self.R_[a, b] * kn.gram(self.kernel_, Xq, self.X_[:nb]) for b, nb in enumerate(self.sizes_)])
        return self.tau_[a] + kq @ self.A_ @ (self.yv_ - self.T_ @ self.tau_)

    def _cubature_parts(self):
        c = kn.kernel_mean(self.kernel_)
        E = c * self.T_ @ self.R_  # cov(y, integrals)
        Ehat = c * self.R_
        r = self.yv_ - self.T_ @ self.tau_
        rho = self.tau_ + E.T @ self.A_ @ r
        Sigma = Ehat - E.T @ self.A_ @ E
        o = self.order_
        inv = np.empty_like(o)
        inv[o] = np.arange(o.size)
        return c, rho[inv], Sigma[np.ix_(inv, inv)]


# ----------------------------------------------------------------------------
# text serialization
# ----------------------------------------------------------------------------

_FORMAT = "qmcfast-fastgp/1"


def _spec_to_dict(spec: kn.KernelSpec) -> dict:
    out = {k: getattr(spec, k) for k in ("family", "d", "alpha", "gamma", "eta", "a", "beta", "betap", "t")}
    out["weights"] = None if spec.weights is None else [[list(u), w] for u, w in spec.weights.items()]
    return out


def _spec_from_dict(d: dict) -> kn.KernelSpec:
    d = dict(d)
    if d.get("weights") is not None:
        d["weights"] = {tuple(u): w for u, w in d["weights"]}
    for k in ("alpha", "eta", "a", "beta", "betap"):
        if isinstance(d.get(k), list):
            d[k] = tuple(d[k])
    return kn.KernelSpec(**d)


def save_model(model: "FastGP", path) -> None:
    """Write a fitted :class:`FastGP` as self-describing JSON text.

    The file holds the kernel spec, the fitted hyperparameters, the training
    data and the Gram spectrum; floats are written with round-trip precision.
    """
    model._check_fitted()
    lam = model.gram_.lam
    doc = {
        "format": _FORMAT,
        "kernel": _spec_to_dict(model.kernel_),
        "xi": model.xi,
        "loss": model.loss,
        "tau": model.tau,
        "tau_": model.tau_,
        "spectrum_kind": model.gram_.kind,
        "spectrum": np.real(lam).tolist(),
        "spectrum_imag": np.imag(lam).tolist() if np.iscomplexobj(lam) else None,
        "X": model.X_.tolist(),
        "y": model.y_.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_model(path) -> "FastGP":
    """Read a model written by :func:`save_model`; the stored spectrum is checked."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != _FORMAT:
        raise ValueError(f"{path}: not a {_FORMAT} file")
    spec = _spec_from_dict(doc["kernel"])
    m = FastGP(spec, xi=doc["xi"], loss=doc["loss"], optimize=False, tau=doc["tau"])
    m.fit(np.array(doc["X"], dtype=float), np.array(doc["y"], dtype=float))
    lam = np.array(doc["spectrum"])
    if doc["spectrum_imag"] is not None:
        lam = lam + 1j * np.array(doc["spectrum_imag"])
    if not np.allclose(m.gram_.lam, lam, rtol=1e-10, atol=1e-14 * np.abs(lam).max()):
        raise ValueError(f"{path}: stored spectrum does not match the kernel and points")
    return m
