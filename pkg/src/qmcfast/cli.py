"""Command-line front end.

Subcommands write plot-ready CSV (17 significant digits) and, when ``--out``
is given, a JSON manifest next to the output that ``rerun`` can replay.
Exit codes: 0 success, 1 usage error, 2 sample budget exhausted.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import cubature as cb
from . import fastgram as fg
from . import fastxform as fx
from . import gp
from . import kernels as kn
from . import ldseq
from . import multilevel as ml
from . import problems as pb

EXIT_OK, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2
FMT = "%.17g"

_NET_RAND = {"none": "none", "ds": "digital_shift", "lms-ds": "lms_plus_shift", "nus": "nus", "permute": "permute"}
_HALTON_RAND = {"none": "none", "ds": "digital_shift", "lms-ds": "lms_plus_permutation", "nus": "nus"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for budget exhaustion
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ----------------------------------------------------------------------------
# output helpers
# ----------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FMT % v
    return str(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _emit(text: str, out) -> list:
    if out is None:
        sys.stdout.write(text)
        return []
    Path(out).write_text(text)
    return [str(out)]


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = __version__
    return {"qmcfast": pkg, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def _write_manifest(args, argv, outputs: list) -> None:
    if not outputs:
        return
    doc = {
        "subcommand": args.cmd,
        "argv": list(argv),
        "flags": {k: v for k, v in vars(args).items() if k != "func"},
        "seed": getattr(args, "seed", None),
        "versions": _versions(),
        "outputs": outputs,
    }
    Path(str(outputs[0]) + ".manifest.json").write_text(json.dumps(doc, indent=1, default=str) + "\n")


def _parse_int_list(text: str) -> list:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if "^" in tok:
            b, e = tok.split("^")
            out.append(int(b) ** int(e))
        elif tok:
            out.append(int(tok))
    if not out:
        raise UsageError("empty list")
    return out


def _problem(name: str, d=None):
    kw = {} if d is None else {"d": d}
    try:
        return pb.get_problem(name, **kw)
    except KeyError as e:
        raise UsageError(str(e.args[0]) if e.args else str(e)) from None
    except TypeError:
        raise UsageError(f"problem {name!r} has a fixed dimension") from None


def _open(x):
    return np.where(x == 0.0, 2.0**-53, x)


# ----------------------------------------------------------------------------
# gen
# ----------------------------------------------------------------------------


def _sequence_config(args):
    seq, d, rand = args.seq, args.d, args.rand
    if seq == "lattice":
        if rand not in ("none", "shift"):
            raise UsageError(f"lattice randomization must be none or shift, not {rand!r}")
        g = ldseq.load_lattice_vector(args.vector_file, d)
        if g.size < d:
            raise UsageError(f"generating vector has {g.size} entries, {d} requested")
        order = args.order or "radical_inverse"
        cfg = ldseq.LatticeConfig(g=tuple(g), order=order)
        return cfg.randomize(args.seed) if rand == "shift" else cfg
    if seq == "dnet":
        if rand not in _NET_RAND:
            raise UsageError(f"net randomization must be one of {sorted(_NET_RAND)}, not {rand!r}")
        C, t = ldseq.load_net_matrices(args.matrix_file, args.alpha * d)
        cfg = ldseq.DigitalNetConfig(matrices=C, t_in=t, alpha=args.alpha, order=args.order or "radical_inverse")
        return cfg if rand == "none" else cfg.randomize(args.seed, _NET_RAND[rand])
    if seq == "halton":
        if rand not in _HALTON_RAND:
            raise UsageError(f"Halton randomization must be one of {sorted(_HALTON_RAND)}, not {rand!r}")
        seed = args.seed if args.seed is not None else 0
        return ldseq.HaltonConfig(d, _HALTON_RAND[rand], seed=None if rand == "none" else seed)
    return None


def cmd_gen(args, argv) -> int:
    if args.n < 0 or args.d < 1:
        raise UsageError("need n >= 0 and d >= 1")
    try:
        cfg = _sequence_config(args)
    except (ValueError, OSError) as e:
        raise UsageError(str(e)) from None
    if cfg is None:
        X = ldseq.iid_uniform(args.seed, args.n, args.d)
    else:
        try:
            X = ldseq.generate(cfg, args.n) if args.n else np.zeros((0, args.d))
        except ValueError as e:
            raise UsageError(str(e)) from None
    text = _csv_text([f"x{j}" for j in range(args.d)], X.tolist())
    _write_manifest(args, argv, _emit(text, args.out))
    return EXIT_OK


# ----------------------------------------------------------------------------
# transform / kernel debugging
# ----------------------------------------------------------------------------


def _read_vector(args) -> np.ndarray:
    if args.values is not None:
        return np.array([float(v) for v in args.values.split(",")])
    src = open(args.input) if args.input != "-" else sys.stdin
    vals = []
    with src:
        for lineno, ln in enumerate(src, 1):
            ln = ln.strip()
            if not ln:
                continue
            try:
                vals.append(float(ln.split(",")[0]))
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise UsageError(f"{args.input}:{lineno}: not a number: {ln!r}") from None
    return np.array(vals)


def cmd_transform(args, argv) -> int:
    y = _read_vector(args)
    f = {"fwht": fx.fwht, "fftbr": fx.fftbr, "ifftbr": fx.ifftbr}[args.kind]
    try:
        z = np.asarray(f(y), dtype=np.complex128)
    except ValueError as e:
        raise UsageError(str(e)) from None
    text = _csv_text(["k", "re", "im"], [(k, v.real, v.imag) for k, v in enumerate(z)])
    _write_manifest(args, argv, _emit(text, args.out))
    return EXIT_OK


def _kernel_spec(args, d) -> kn.KernelSpec:
    kw = dict(gamma=args.gamma, eta=args.eta)
    if args.family in ("si_bernoulli", "dsi_omega", "dsi_kdddot", "matern", "rational_quadratic"):
        a = args.kernel_alpha
        kw["alpha"] = int(a) if float(a).is_integer() else a
    try:
        return kn.KernelSpec(args.family, d, **kw)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _matched_config(seq: str, d: int, seed):
    if seq == "lattice":
        return ldseq.LatticeConfig.default(d).randomize(seed)
    return ldseq.DigitalNetConfig.default(d).randomize(seed)


def cmd_kernel(args, argv) -> int:
    spec = _kernel_spec(args, args.d)
    seq = "lattice" if spec.is_si else "dnet"
    cfg = _matched_config(seq, args.d, args.seed)
    X = ldseq.generate(cfg, args.n)
    try:
        G = fg.build_spectrum(X, spec, args.xi, seq=cfg)
    except ValueError as e:
        raise UsageError(str(e)) from None
    col = fg.first_column(X, spec)
    rows = [(k, col[k], np.real(G.lam[k]), np.imag(G.lam[k])) for k in range(args.n)]
    _write_manifest(args, argv, _emit(_csv_text(["k", "first_column", "lambda_re", "lambda_im"], rows), args.out))
    if args.check:
        K = kn.gram(spec, X) + args.xi * np.eye(args.n)
        y = np.random.default_rng(args.seed).standard_normal(args.n)
        report = {
            "sequence": seq,
            "max_abs_matvec_diff": float(np.max(np.abs(G.matvec(y) - K @ y))),
            "logdet_fast": G.logdet(),
            "logdet_dense": float(np.linalg.slogdet(K)[1]),
        }
        sys.stderr.write(json.dumps(report) + "\n")
    return EXIT_OK


# ----------------------------------------------------------------------------
# integrate / fit
# ----------------------------------------------------------------------------


def cmd_integrate(args, argv) -> int:
    if args.abs_tol < 0 or args.rel_tol < 0:
        raise UsageError("tolerances must be nonnegative")
    if args.abs_tol == 0 and args.rel_tol == 0:
        raise UsageError("abs-tol and rel-tol are both 0: the tolerance cannot be met")
    if not 0 < args.alpha < 1:
        raise UsageError("alpha must lie in (0, 1)")
    prob = _problem(args.problem, args.d)
    if not isinstance(prob, pb.TestProblem):
        raise UsageError(f"{args.problem} is a multilevel problem; use the ml subcommand")
    h = cb.abs_or_rel(args.abs_tol, args.rel_tol)
    t0 = time.perf_counter()
    if args.algo == "bayes":
        m_max = int(math.log2(args.max_samples))
        est, (lo, hi), n, ok = cb.adaptive_bayes(lambda x: prob(_open(x)), prob.d, h, args.alpha, seed=args.seed, m_max=m_max)
        exhausted = not ok
    else:
        method = "clt" if args.algo == "clt" else "student_t"
        res = cb.adaptive_array_qoi(
            lambda x: prob(_open(x)), prob.d, (), alpha_s=args.alpha, h=h, method=method, R=args.R,
            seed=args.seed, max_samples=args.max_samples,
        )
        est, lo, hi, n = float(res.s_hat), float(res.s_lo), float(res.s_hi), int(res.n_total)
        exhausted = res.budget_exhausted
    report = {
        "problem": prob.name,
        "algo": args.algo,
        "s_hat": float(est),
        "s_lo": float(lo),
        "s_hi": float(hi),
        "n": int(n),
        "reference": prob.reference,
        "error": abs(float(est) - prob.reference),
        "budget_exhausted": bool(exhausted),
        "seconds": time.perf_counter() - t0,
    }
    text = json.dumps(report, indent=1) + "\n"
    _write_manifest(args, argv, _emit(text, args.out))
    return EXIT_BUDGET if exhausted else EXIT_OK


def cmd_fit(args, argv) -> int:
    prob = _problem(args.problem, args.d)
    if not isinstance(prob, pb.TestProblem):
        raise UsageError("fit needs a single-level problem")
    spec = _kernel_spec(args, prob.d)
    if not (spec.is_si or spec.is_dsi):
        raise UsageError("fit uses the fast path and needs an SI or DSI kernel family")
    if args.n < 2 or args.n & (args.n - 1):
        raise UsageError("n must be a power of two >= 2")
    cfg = _matched_config("lattice" if spec.is_si else "dnet", prob.d, args.seed)
    X = ldseq.generate(cfg, args.n)
    y = prob(_open(X))
    model = gp.FastGP(spec, loss=args.loss, max_iter=args.max_iter, seq=cfg).fit(X, y)
    res = model.bayes_cubature()
    report = {
        "problem": prob.name,
        "n": args.n,
        "kernel": {"family": spec.family, "gamma": model.kernel_.gamma, "eta": list(model.kernel_.eta)},
        "tau": model.tau_,
        "loss": model.loss,
        "loss_value": model.loss_,
        "n_iter": model.n_iter_,
        "mu_hat": res.estimate,
        "V_hat": res.variance,
        "reference": prob.reference,
    }
    if model.kernel_.a is not None:
        report["kernel"]["a"] = list(model.kernel_.a)
    outputs = _emit(json.dumps(report, indent=1) + "\n", args.out)
    if args.save:
        gp.save_model(model, args.save)
        outputs.append(str(args.save))
    _write_manifest(args, argv, outputs)
    return EXIT_OK


# ----------------------------------------------------------------------------
# convergence / multilevel
# ----------------------------------------------------------------------------


def _single_level_run(prob, algo, budget, seed, R):
    if algo == "mc":
        y = prob(_open(ldseq.iid_uniform(seed, budget, prob.d)))
        return float(y.mean()), float(y.std(ddof=1) / math.sqrt(budget))
    if algo == "rqmc":
        n = budget // R
        if n < 1 or n & (n - 1):
            raise UsageError(f"rqmc needs budget / R = {budget}/{R} to be a power of two")
        cfgs = ldseq.replicate(ldseq.DigitalNetConfig.default(prob.d), R, seed)
        means = np.array([prob(_open(ldseq.generate(c, n))).mean() for c in cfgs])
        return float(means.mean()), float(means.std(ddof=1) / math.sqrt(R))
    if budget & (budget - 1):
        raise UsageError("bqmc needs power-of-two budgets")
    cfg = ldseq.DigitalNetConfig.default(prob.d).randomize(seed)
    X = ldseq.generate(cfg, budget)
    model = gp.FastGP(kn.KernelSpec("dsi_adaptive_sum", prob.d), seq=cfg).fit(X, prob(_open(X)))
    res = model.bayes_cubature()
    return res.estimate, math.sqrt(max(res.variance, 0.0))


def _ml_run(prob, algo, budget, seed, R):
    if algo == "mc":
        return ml.mlmc_run(prob, budget, seed=seed)
    if algo == "rqmc":
        return ml.mlqmc_run(prob, budget, R=R, seed=seed)
    return ml.bqmc_run(prob, budget, seed=seed)


def _slope(budgets, values) -> float:
    b, v = np.log(np.asarray(budgets, float)), np.asarray(values, float)
    ok = v > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(b[ok], np.log(v[ok]), 1)[0])


def cmd_convergence(args, argv) -> int:
    budgets = _parse_int_list(args.budgets)
    if args.seeds < 1:
        raise UsageError("need at least one seed")
    prob = _problem(args.problem, args.d)
    multilevel = isinstance(prob, pb.MultilevelProblem)
    if prob.reference is None:
        raise UsageError(f"{prob.name} has no reference value")
    rows = []
    for budget in budgets:
        for s in range(args.seeds):
            seed = args.seed + s
            # independent randomization per (seed, budget) pair
            key = [seed, budget]
            try:
                if multilevel:
                    r = _ml_run(prob, args.algo, budget, key, args.R)
                    est, se = r.estimate, r.stderr
                else:
                    est, se = _single_level_run(prob, args.algo, budget, key, args.R)
            except ValueError as e:
                raise UsageError(str(e)) from None
            rows.append((budget, seed, abs(est - prob.reference), se))
    arr = np.array(rows, dtype=float)
    med_err = [np.median(arr[arr[:, 0] == b, 2]) for b in budgets]
    med_se = [np.median(arr[arr[:, 0] == b, 3]) for b in budgets]
    rows.append(("median_slope", "", _slope(budgets, med_err), _slope(budgets, med_se)))
    text = _csv_text(["budget", "seed", "error", "stderr"], rows)
    _write_manifest(args, argv, _emit(text, args.out))
    return EXIT_OK


def cmd_ml(args, argv) -> int:
    kw = {} if args.levels is None else {"L": args.levels}
    try:
        prob = pb.get_problem(args.problem, **kw)
    except KeyError as e:
        raise UsageError(str(e.args[0])) from None
    except ValueError as e:
        raise UsageError(str(e)) from None
    if not isinstance(prob, pb.MultilevelProblem):
        raise UsageError(f"{args.problem} is not a multilevel problem")
    try:
        r = _ml_run(prob, args.algo, args.budget, args.seed, args.R)
    except ValueError as e:
        raise UsageError(str(e)) from None
    header = ["level", "n", "mean", "variance"]
    rows = [(l + 1, r.n[l], r.level_means[l], r.level_variances[l]) for l in range(prob.L)]
    rows.append(("total", int(np.sum(r.n)), r.estimate, r.stderr**2))
    outputs = _emit(_csv_text(header, rows), args.out)
    summary = {
        "algo": r.algorithm,
        "estimate": r.estimate,
        "stderr": r.stderr,
        "cost": r.cost,
        "reference": prob.reference,
    }
    sys.stderr.write(json.dumps(summary) + "\n")
    _write_manifest(args, argv, outputs)
    return EXIT_OK


def cmd_rerun(args, argv) -> int:
    doc = json.loads(Path(args.manifest).read_text())
    old = list(doc["argv"])
    if args.out is not None:
        if "--out" in old:
            old[old.index("--out") + 1] = args.out
        else:
            old += ["--out", args.out]
    return main(old)


# ----------------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------------


def _add_kernel_flags(p, default_family):
    p.add_argument("--family", default=default_family, choices=kn.FAMILIES)
    p.add_argument("--kernel-alpha", type=float, default=None, help="smoothness alpha of the kernel")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--eta", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qmcfast", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate points")
    g.add_argument("--seq", choices=["lattice", "dnet", "halton", "iid"], default="dnet")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, default=1)
    g.add_argument("--rand", choices=["none", "shift", "ds", "lms-ds", "nus", "permute"], default="none")
    g.add_argument("--alpha", type=int, default=1, help="interlacing order for nets")
    g.add_argument("--order", choices=["radical_inverse", "linear", "gray_code"], default=None)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--vector-file", default=None)
    g.add_argument("--matrix-file", default=None)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("transform", help="apply FWHT, FFTBR or IFFTBR to a vector")
    t.add_argument("--kind", choices=["fwht", "fftbr", "ifftbr"], required=True)
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="CSV file (first column) or - for stdin")
    src.add_argument("--values", help="comma-separated values")
    t.add_argument("--out", default=None)
    t.set_defaults(func=cmd_transform)

    k = sub.add_parser("kernel", help="first Gram column and spectrum on a matched sequence")
    _add_kernel_flags(k, "dsi_adaptive_sum")
    k.add_argument("--d", type=int, default=1)
    k.add_argument("--n", type=int, default=16)
    k.add_argument("--xi", type=float, default=gp.XI_FLOOR)
    k.add_argument("--seed", type=int, default=None)
    k.add_argument("--check", action="store_true", help="compare against the dense Gram matrix")
    k.add_argument("--out", default=None)
    k.set_defaults(func=cmd_kernel)

    i = sub.add_parser("integrate", help="adaptive integration of a registered problem")
    i.add_argument("--problem", required=True)
    i.add_argument("--d", type=int, default=None)
    i.add_argument("--algo", choices=["clt", "student-t", "bayes"], default="student-t")
    i.add_argument("--abs-tol", type=float, default=1e-2)
    i.add_argument("--rel-tol", type=float, default=0.0)
    i.add_argument("--alpha", type=float, default=0.01, help="uncertainty level")
    i.add_argument("--R", type=int, default=8)
    i.add_argument("--seed", type=int, default=None)
    i.add_argument("--max-samples", type=int, default=2**22)
    i.add_argument("--out", default=None)
    i.set_defaults(func=cmd_integrate)

    f = sub.add_parser("fit", help="fit a fast GP to a problem on a matched sequence")
    f.add_argument("--problem", required=True)
    f.add_argument("--d", type=int, default=None)
    _add_kernel_flags(f, "dsi_adaptive_sum")
    f.add_argument("--n", type=int, default=2**10)
    f.add_argument("--loss", choices=["nmll", "gcv"], default="nmll")
    f.add_argument("--max-iter", type=int, default=20)
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--save", default=None, help="write the fitted model as JSON text")
    f.add_argument("--out", default=None)
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("convergence", help="true error and stderr over budgets and seeds")
    c.add_argument("--algo", choices=["mc", "rqmc", "bqmc"], required=True)
    c.add_argument("--problem", required=True)
    c.add_argument("--d", type=int, default=None)
    c.add_argument("--budgets", required=True, help="comma list, e.g. 2^8,2^9 or 256,512")
    c.add_argument("--seeds", type=int, default=1)
    c.add_argument("--seed", type=int, default=0, help="first seed")
    c.add_argument("--R", type=int, default=8)
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_convergence)

    m = sub.add_parser("ml", help="one multilevel run")
    m.add_argument("--algo", choices=["mc", "rqmc", "bqmc"], required=True)
    m.add_argument("--problem", default="elliptic_1d", choices=["elliptic_1d", "multilevel_option"])
    m.add_argument("--budget", type=float, required=True)
    m.add_argument("--levels", type=int, default=None)
    m.add_argument("--seed", type=int, default=None)
    m.add_argument("--R", type=int, default=8)
    m.add_argument("--out", default=None)
    m.set_defaults(func=cmd_ml)

    r = sub.add_parser("rerun", help="replay a run from its manifest")
    r.add_argument("--manifest", required=True)
    r.add_argument("--out", default=None, help="write to this path instead of the recorded one")
    r.set_defaults(func=cmd_rerun)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "kernel_alpha", 0) is None:
            args.kernel_alpha = 2.0 if args.family.startswith("si") or args.family == "dsi_omega" else 1.5
        return args.func(args, argv)
    except UsageError as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
