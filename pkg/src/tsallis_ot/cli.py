"""Command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure,
3 non-convergence (outputs are still written).
"""

import argparse
from datetime import datetime, timezone
import math
import os
import sys
import warnings

import numpy as np

from . import __version__
from .approx import double_shadow, quantize
from .errors import NotConvergedWarning, NumericalError
from .exact_ot import solve_exact, wasserstein_p
from .fileio import (
    InputError,
    atomic_write,
    coupling_csv,
    dumps_json,
    file_digest,
    load_measure,
    save_json,
    save_measure,
    table_csv,
)
from .measures import build_cost, uniform_grid
from .qcalc import phi_q
from .rates import RateParams, band_violations, parse_grid, rate_sweep, slope_fit
from .solver import SolveConfig, solve

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_NOT_CONVERGED = 0, 1, 2, 3
THREADS_ENV = "TSALLIS_OT_THREADS"
SWEEP_COLUMNS = ["epsilon", "gap", "upper_env", "kl_env", "lower_env", "solver_gap", "converged"]
COSTS = {"l1": ("l1_sum", 1.0), "l2sq": ("lp_power", 2.0)}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _manifest(args, inputs):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    return {
        "subcommand": args.command,
        "config": config,
        "inputs": {name: file_digest(path) for name, path in inputs.items() if path},
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }


def _threads(args):
    if getattr(args, "workers", None):
        return args.workers
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be at least 1")
    return n


def _instance(args):
    if (args.mu is None) != (args.nu is None):
        raise UsageError("give both --mu and --nu, or neither for the uniform grid instance")
    if args.mu is None:
        mu = nu = uniform_grid(args.n)
    else:
        mu, nu = load_measure(args.mu), load_measure(args.nu)
    family, p = COSTS[args.cost]
    return mu, nu, build_cost(mu, nu, family, p)


def _summary_path(out):
    root, _ = os.path.splitext(out)
    return root + ".json"


def cmd_solve(args):
    mu, nu = load_measure(args.mu), load_measure(args.nu)
    family, p = COSTS[args.cost]
    c = build_cost(mu, nu, family, p)
    result = {"manifest": _manifest(args, {"mu": args.mu, "nu": args.nu})}
    code = EXIT_OK
    if args.epsilon == 0:
        sol = solve_exact(c, mu, nu)
        P = sol.coupling.weight_matrix
        result.update(method=f"exact/{sol.method}", value=sol.value, converged=True)
    else:
        cfg = SolveConfig(args.epsilon, args.q, args.max_iter, args.tol_gap)
        method = args.method
        if method == "auto":
            method = "sinkhorn" if cfg.q.is_kl else "dual"
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NotConvergedWarning)
            rep = solve(c, mu, nu, cfg, method)
        P = rep.coupling.weight_matrix
        result.update(
            method=rep.method,
            value=rep.primal_value,
            primal_value=rep.primal_value,
            dual_value=rep.dual_value,
            relative_gap=rep.rel_gap,
            iterations=rep.iterations,
            converged=rep.converged,
            marginal_defect=rep.marginal_defect,
            flags=list(rep.flags),
            h1=rep.potentials.h1.tolist(),
            h2=rep.potentials.h2.tolist(),
        )
        if not rep.converged:
            code = EXIT_NOT_CONVERGED
    result["coupling"] = P.tolist()
    _emit(args.out, dumps_json(result))
    if args.plan_out:
        atomic_write(args.plan_out, coupling_csv(P))
    return code


def _sweep_records(args, q, instance):
    params = RateParams(q, args.beta, args.L, args.C, args.d)
    cfg = SolveConfig(1.0, q, args.max_iter, args.tol_gap)
    return rate_sweep(instance, params, parse_grid(args.grid), cfg, workers=_threads(args))


def cmd_sweep(args):
    mu, nu, c = _instance(args)
    records = _sweep_records(args, args.q, (mu, nu, c))
    atomic_write(args.out, table_csv(SWEEP_COLUMNS, [r.as_dict() for r in records]))
    eps_min = max(1e-3, 10.0 / mu.size) if args.mu is None else 0.0
    admitted = [r for r in records if r.epsilon >= eps_min]
    try:
        slope, r2 = slope_fit(admitted)
    except ValueError:
        slope = r2 = float("nan")
    summary = {
        "manifest": _manifest(args, {"mu": args.mu, "nu": args.nu}),
        "grid": [r.epsilon for r in records],
        "eps_min": eps_min,
        "slope": slope,
        "r2": r2,
        "band_violations": band_violations(records, eps_min=eps_min) if not RateParams(args.q).q.is_kl else None,
        "flagged": [r.epsilon for r in records if r.flagged],
    }
    save_json(args.summary or _summary_path(args.out), summary)
    return EXIT_NOT_CONVERGED if any(r.flagged for r in records) else EXIT_OK


def cmd_compare(args):
    if len(args.q) < 2:
        raise UsageError("compare needs --q at least twice")
    mu, nu, c = _instance(args)
    runs = [(q, _sweep_records(args, q, (mu, nu, c))) for q in args.q]
    cols = ["epsilon"] + [f"gap_q{q:g}" for q, _ in runs] + [f"converged_q{q:g}" for q, _ in runs]
    rows = []
    for k, eps in enumerate(r.epsilon for r in runs[0][1]):
        row = {"epsilon": eps}
        for q, recs in runs:
            row[f"gap_q{q:g}"] = recs[k].gap
            row[f"converged_q{q:g}"] = not recs[k].flagged
        rows.append(row)
    atomic_write(args.out, table_csv(cols, rows))
    save_json(_summary_path(args.out), {"manifest": _manifest(args, {"mu": args.mu, "nu": args.nu})})
    flagged = any(r.flagged for _, recs in runs for r in recs)
    return EXIT_NOT_CONVERGED if flagged else EXIT_OK


def cmd_quantize(args):
    mu = load_measure(args.input)
    res = quantize(mu, args.n, args.p, seed=args.seed)
    extra = {
        "achieved_wp": res.achieved_wp,
        "n": res.n,
        "p": res.p,
        "manifest": _manifest(args, {"in": args.input}),
    }
    save_measure(args.out, res.quantized, extra)
    return EXIT_OK


def cmd_shadow_check(args):
    mu, nu = load_measure(args.mu), load_measure(args.nu)
    family, p = COSTS[args.cost]
    pi_star = solve_exact(build_cost(mu, nu, family, p), mu, nu).coupling
    qz = quantize(nu, args.n, args.p, seed=args.seed)
    inter, final = double_shadow(pi_star, qz.quantized, p=args.p, q=args.q)
    # W_p identity residual for the first transfer
    identity_residual = abs(inter.wp_change**args.p - qz.achieved_wp**args.p)
    report = {
        "manifest": _manifest(args, {"mu": args.mu, "nu": args.nu}),
        "quantization_wp": qz.achieved_wp,
        "wp_identity_residual": identity_residual,
        "intermediate": {
            "wp_change": inter.wp_change,
            "divergence_before": inter.divergence_before,
            "divergence_after": inter.divergence_after,
            "divergence_bound": float(phi_q(args.q, qz.quantized.size)),
        },
        "final": {
            "wp_to_optimal": final.wp_change,
            "wp_bound": 2 * wasserstein_p(nu, qz.quantized, args.p),
            "divergence_before": final.divergence_before,
            "divergence_after": final.divergence_after,
        },
    }
    _emit(args.out, dumps_json(report))
    return EXIT_OK


def _emit(out, text):
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _nonneg_float(s):
    v = float(s)
    if not v >= 0 or math.isinf(v):
        raise argparse.ArgumentTypeError("must be a finite nonnegative number")
    return v


def build_parser():
    ap = _Parser(prog="tsallis-ot", description="Tsallis-regularised optimal transport experiments.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def solver_flags(p):
        p.add_argument("--tol-gap", type=float, default=1e-6)
        p.add_argument("--max-iter", type=_positive_int, default=10_000)

    def cost_flag(p):
        p.add_argument("--cost", choices=sorted(COSTS), default="l1")

    s = sub.add_parser("solve", help="solve one regularised (or exact, with --epsilon 0) problem")
    s.add_argument("--mu", required=True)
    s.add_argument("--nu", required=True)
    s.add_argument("--q", type=float, default=2.0)
    s.add_argument("--epsilon", type=_nonneg_float, required=True)
    s.add_argument("--method", choices=["auto", "dual", "primal", "sinkhorn"], default="auto")
    s.add_argument("--out")
    s.add_argument("--plan-out", help="also write the coupling as CSV")
    cost_flag(s)
    solver_flags(s)
    s.set_defaults(func=cmd_solve)

    def sweep_flags(p):
        p.add_argument("--mu")
        p.add_argument("--nu")
        p.add_argument("--n", type=_positive_int, default=256, help="grid size when no measures are given")
        p.add_argument("--beta", type=float, default=1.0)
        p.add_argument("--d", type=_positive_int, default=1)
        p.add_argument("--L", type=float, default=1.0)
        p.add_argument("--C", type=float, default=0.25)
        p.add_argument("--grid", default="0.1:0.5:7")
        p.add_argument("--workers", type=_positive_int, help=f"threads (default from {THREADS_ENV})")
        p.add_argument("--out", required=True)
        cost_flag(p)
        solver_flags(p)

    s = sub.add_parser("sweep", help="epsilon sweep with rate envelopes")
    s.add_argument("--q", type=float, default=2.0)
    s.add_argument("--summary", help="summary JSON path (default: next to --out)")
    sweep_flags(s)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("compare", help="paired gap columns for several q")
    s.add_argument("--q", type=float, action="append", required=True)
    sweep_flags(s)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("quantize", help="n-point quantization of a measure")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--p", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("shadow-check", help="double-shadow diagnostics for an optimal plan")
    s.add_argument("--mu", required=True)
    s.add_argument("--nu", required=True)
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--p", type=float, default=1.0)
    s.add_argument("--q", type=float, default=2.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    cost_flag(s)
    s.set_defaults(func=cmd_shadow_check)
    return ap


def run(argv=None):
    """Parse ``argv``, dispatch, and return the exit code."""
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help and --version
        return exc.code if isinstance(exc.code, int) else EXIT_OK


def main():
    sys.exit(run())
