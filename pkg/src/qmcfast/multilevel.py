"""Budgeted multilevel estimators with a fixed number of levels.

Three doubling schemes share one loop: after each evaluation round the level
with the best utility among those whose doubling still fits the budget gets
its sample size doubled.

* :func:`mlmc_run`  -- IID points, utility ``sigma_l^2 / (n_l C_l)``.
* :func:`mlqmc_run` -- ``R`` independent randomizations per level.
* :func:`bqmc_run`  -- one randomized sequence per level, a fast GP per level
  and level selection by projected posterior variance
  (:func:`bqmc_level_select`).

Spent cost is tracked with exact rational arithmetic so budget checks never
suffer rounding.  Ties between levels go to the lowest level index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from . import gp, kernels, ldseq
from .problems import MultilevelProblem

__all__ = ["MLRunResult", "mlmc_run", "mlqmc_run", "bqmc_level_select", "bqmc_run"]


@dataclass
class MLRunResult:
    """Outcome of a multilevel run."""

    algorithm: str
    estimate: float
    stderr: float
    n: np.ndarray
    cost: float
    level_means: np.ndarray
    level_variances: np.ndarray
    trace: list = field(default_factory=list, repr=False)


def _initial_sizes(problem: MultilevelProblem, n_init, pow2: bool) -> np.ndarray:
    n = np.broadcast_to(np.asarray(16 if n_init is None else n_init, dtype=np.int64), (problem.L,)).copy()
    if np.any(n < 2):
        raise ValueError("initial sample sizes must be at least 2")
    if pow2 and np.any(n & (n - 1)):
        raise ValueError("initial sample sizes must be powers of two")
    return n


def _costs(problem: MultilevelProblem) -> list:
    return [Fraction(c) for c in problem.costs]


def _check_budget(costs, n, budget, factor=1):
    need = factor * sum(c * int(k) for c, k in zip(costs, n))
    if need > Fraction(budget):
        raise ValueError(f"initial allocation costs {float(need):g}, more than the budget {budget:g}")


def _open(x):
    # IID draws may hit 0 exactly; nudge into the open cube
    return np.where(x == 0.0, 2.0**-53, x)


def _feasible(costs, n, spent, budget, factor=1):
    return [l for l in range(len(costs)) if spent + factor * costs[l] * int(n[l]) <= Fraction(budget)]


def _argmax_lowest(values: Sequence[float], levels: Sequence[int]) -> int:
    best, best_v = levels[0], values[0]
    for l, v in zip(levels[1:], values[1:]):
        if v > best_v:
            best, best_v = l, v
    return best


def _aggregate(variances, aggregate: str) -> float:
    v = np.maximum(np.asarray(variances, dtype=np.float64), 0.0)
    if aggregate == "independent":
        return float(math.sqrt(v.sum()))
    if aggregate == "cauchy_schwarz":
        return float(np.sqrt(v).sum())
    raise ValueError(f"unknown aggregate {aggregate!r}")


# ----------------------------------------------------------------------------
# IID MLMC
# ----------------------------------------------------------------------------


def mlmc_run(problem: MultilevelProblem, budget: float, n_init=None, seed=None) -> MLRunResult:
    L, d = problem.L, problem.d
    costs = _costs(problem)
    n_next = _initial_sizes(problem, n_init, pow2=False)
    _check_budget(costs, n_next, budget)
    rngs = np.random.default_rng(seed).spawn(L)
    n = np.zeros(L, dtype=np.int64)
    s1 = np.zeros(L)
    s2 = np.zeros(L)
    mu = np.zeros(L)
    var = np.zeros(L)
    spent = Fraction(0)
    todo = list(range(L))
    trace = []
    while True:
        for l in todo:
            k = int(n_next[l] - n[l])
            y = problem.Y(l + 1, _open(rngs[l].random((k, d))))
            s1[l] += y.sum()
            s2[l] += (y * y).sum()
            spent += costs[l] * k
            n[l] = n_next[l]
            mu[l] = s1[l] / n[l]
            var[l] = max(s2[l] - n[l] * mu[l] ** 2, 0.0) / (n[l] - 1)
        feas = _feasible(costs, n, spent, budget)
        if not feas:
            break
        util = [var[l] / (n[l] * float(costs[l])) for l in feas]
        pick = _argmax_lowest(util, feas)
        trace.append({"level": pick + 1, "n": n.tolist(), "cost": float(spent), "utilities": dict(zip(feas, util))})
        todo = [pick]
        n_next[pick] = 2 * n[pick]
    stderr = math.sqrt(float(np.sum(var / n)))
    return MLRunResult("mc", float(mu.sum()), stderr, n, float(spent), mu, var / n, trace)


# ----------------------------------------------------------------------------
# replicated MLQMC
# ----------------------------------------------------------------------------


def _base_sequence(seq: str, d: int):
    if seq == "dnet":
        return ldseq.DigitalNetConfig.default(d)
    if seq == "lattice":
        return ldseq.LatticeConfig.default(d)
    raise ValueError(f"unknown sequence {seq!r}")


def mlqmc_run(
    problem: MultilevelProblem,
    budget: float,
    R: int = 8,
    n_init=None,
    seed=None,
    seq: str = "dnet",
    randomization: str = "lms_plus_shift",
) -> MLRunResult:
    if R < 2:
        raise ValueError("replicated MLQMC needs R >= 2")
    L, d = problem.L, problem.d
    costs = _costs(problem)
    n_next = _initial_sizes(problem, n_init, pow2=True)
    _check_budget(costs, n_next, budget, R)
    base = _base_sequence(seq, d)
    level_seeds = np.random.SeedSequence(seed).spawn(L)
    kind = randomization if seq == "dnet" else None
    cfgs = [ldseq.replicate(base, R, level_seeds[l], kind) for l in range(L)]
    n = np.zeros(L, dtype=np.int64)
    sums = np.zeros((L, R))
    mu = np.zeros(L)
    var = np.zeros(L)
    spent = Fraction(0)
    todo = list(range(L))
    trace = []
    while True:
        for l in todo:
            k = int(n_next[l] - n[l])
            for r in range(R):
                sums[l, r] += problem.Y(l + 1, ldseq.generate(cfgs[l][r], k, int(n[l]))).sum()
            spent += R * costs[l] * k
            n[l] = n_next[l]
            means = sums[l] / n[l]
            mu[l] = means.mean()
            var[l] = means.var(ddof=1)
        feas = _feasible(costs, n, spent, budget, R)
        if not feas:
            break
        util = [var[l] / (R * n[l] * float(costs[l])) for l in feas]
        pick = _argmax_lowest(util, feas)
        trace.append({"level": pick + 1, "n": n.tolist(), "cost": float(spent), "utilities": dict(zip(feas, util))})
        todo = [pick]
        n_next[pick] = 2 * n[pick]
    stderr = math.sqrt(float(np.sum(var)) / R)
    return MLRunResult("rqmc", float(mu.sum()), stderr, R * n, float(spent), mu, var / R, trace)


# ----------------------------------------------------------------------------
# fast Bayesian MLQMC
# ----------------------------------------------------------------------------


def bqmc_level_select(
    feasible: Sequence[int],
    costs: Sequence[float],
    sizes: Sequence[int],
    variance: Callable[[int, float], float],
) -> int:
    """Pick the level whose doubling buys the largest projected variance drop.

    ``variance(level, n_hat)`` returns the (projected) posterior cubature
    variance of ``level`` with ``n_hat`` points.  Levels are visited in
    non-increasing doubling cost ``n_l C_l``; each challenger ``l'`` is
    credited with the variance drop from spending the incumbent's doubling
    cost on ``l'``, i.e. growing it to ``n_l C_l / C_l' + n_l'`` points.
    """
    feasible = list(feasible)
    if not feasible:
        raise ValueError("no feasible level")
    order = sorted(feasible, key=lambda l: (-float(sizes[l]) * float(costs[l]), l))
    best = order[0]
    for cand in order[1:]:
        nb, nc = sizes[best], sizes[cand]
        n_hat = nb * costs[best] / costs[cand] + nc
        drop_best = variance(best, nb) - variance(best, 2 * nb)
        drop_cand = variance(cand, nc) - variance(cand, n_hat)
        if drop_cand > drop_best or (drop_cand == drop_best and cand < best):
            best = cand
    return best


def _default_kernel(seq: str, d: int) -> kernels.KernelSpec:
    if seq == "dnet":
        return kernels.KernelSpec("dsi_adaptive_sum", d, eta=1.0)
    return kernels.KernelSpec("si_bernoulli", d, alpha=1, eta=1.0)


def bqmc_run(
    problem: MultilevelProblem,
    budget: float,
    n_init=None,
    seed=None,
    seq: str = "dnet",
    kernel: Optional[kernels.KernelSpec] = None,
    max_iter: int = 20,
    aggregate: str = "independent",
    xi: float = gp.XI_FLOOR,
) -> MLRunResult:
    """Fast Bayesian MLQMC with one randomized sequence and one GP per level.

    Hyperparameters are refit (at most ``max_iter`` steps, warm started) on
    the level just extended.  ``aggregate`` combines level variances into the
    standard error: ``"independent"`` (sum) or ``"cauchy_schwarz"``.
    """
    L, d = problem.L, problem.d
    costs = _costs(problem)
    n_next = _initial_sizes(problem, n_init, pow2=True)
    _check_budget(costs, n_next, budget)
    base = _base_sequence(seq, d)
    rngs = np.random.default_rng(seed).spawn(L)
    cfgs = [base.randomize(r) for r in rngs]
    specs = [kernel or _default_kernel(seq, d) for _ in range(L)]
    if specs[0].d != d:
        raise ValueError(f"kernel dimension {specs[0].d} != problem dimension {d}")
    models: list = [None] * L
    ys = [np.zeros(0) for _ in range(L)]
    n = np.zeros(L, dtype=np.int64)
    mu = np.zeros(L)
    V = np.zeros(L)
    spent = Fraction(0)
    todo = list(range(L))
    trace = []
    while True:
        for l in todo:
            k = int(n_next[l] - n[l])
            ys[l] = np.concatenate([ys[l], problem.Y(l + 1, ldseq.generate(cfgs[l], k, int(n[l])))])
            spent += costs[l] * k
            n[l] = n_next[l]
            X = ldseq.generate(cfgs[l], int(n[l]))
            models[l] = gp.FastGP(specs[l], xi=xi, max_iter=max_iter, seq=cfgs[l]).fit(X, ys[l])
            specs[l] = models[l].kernel_
            res = models[l].bayes_cubature()
            mu[l], V[l] = res.estimate, res.variance
        feas = _feasible(costs, n, spent, budget)
        if not feas:
            break
        pick = bqmc_level_select(
            feas, [float(c) for c in costs], n.tolist(), lambda l, nh: models[l].projected_variance(nh)
        )
        trace.append({"level": pick + 1, "n": n.tolist(), "cost": float(spent), "variances": V.tolist()})
        todo = [pick]
        n_next[pick] = 2 * n[pick]
    return MLRunResult("bqmc", float(mu.sum()), _aggregate(V, aggregate), n, float(spent), mu, V.copy(), trace)
