"""Command line interface: ``run``, ``suite``, ``truth`` and ``check``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys

import numpy as np
import scipy.integrate
import scipy.special

from . import genz, harness, quad_baselines
from .errors import ConfigError, SteinNetError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2

# command-line flag -> (config section or None for [run], key)
_OVERRIDES = {
    "method": (None, "method"), "problem": (None, "problem"), "dim": (None, "dim"), "n": (None, "n"),
    "sampling": (None, "sampling"),
    "hidden_width": ("bsn", "hidden_width"), "hidden_layers": ("bsn", "hidden_layers"),
    "activation": ("bsn", "activation"), "lam": ("bsn", "lam"), "optimizer": ("bsn", "optimizer"),
    "max_iterations": ("bsn", "max_iterations"), "diffusion": ("bsn", "diffusion"),
    "score_scaling": ("bsn", "score_scaling"), "noise": ("bsn", "noise"), "bq_kernel": ("bq", "kernel"),
    "mala_step": ("mala", "step_size"), "mala_burn_in": ("mala", "burn_in"),
}


def _add_overrides(p):
    p.add_argument("--method", choices=harness.METHODS)
    p.add_argument("--problem", help="genz-<family>, e.g. genz-continuous")
    p.add_argument("--dim", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--sampling", choices=harness.SAMPLINGS)
    p.add_argument("--hidden-width", type=int)
    p.add_argument("--hidden-layers", type=int)
    p.add_argument("--activation")
    p.add_argument("--lam", type=float, help="weight decay")
    p.add_argument("--optimizer", choices=("lbfgs", "adam"))
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--diffusion")
    p.add_argument("--score-scaling", choices=("none", "std", "max"))
    p.add_argument("--noise", choices=("unit", "residual"), help="BSN observation-noise variance")
    p.add_argument("--bq-kernel", choices=("rbf", "matern12"))
    p.add_argument("--mala-step", type=float)
    p.add_argument("--mala-burn-in", type=int)


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="steinnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="one method, one problem, one seed")
    run.add_argument("--config", help="INI config file; flags override it")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", help="results file (.csv or .jsonl)")
    _add_overrides(run)

    suite = sub.add_parser("suite", help="every (method, problem) in a config over a seed list")
    suite.add_argument("--config", required=True)
    suite.add_argument("--seeds", help="e.g. 0..4 or 0,1,2 (overrides the config)")
    suite.add_argument("--out", help="results file (.csv or .jsonl)")
    suite.add_argument("--workers", type=int, default=1, help="processes for repetitions")
    _add_overrides(suite)

    truth = sub.add_parser("truth", help="print Genz ground truths")
    truth.add_argument("--problem", help="one family; default all")
    truth.add_argument("--dim", type=int, nargs="+", default=[1, 2])

    sub.add_parser("check", help="closed forms against quadrature")
    return parser


def _collect_overrides(args):
    run_items, blocks = {}, {}
    for attr, (section, key) in _OVERRIDES.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        if section is None:
            run_items[key] = str(value)
        else:
            blocks.setdefault(section, {})[key] = str(value)
    return run_items, blocks


def _configs_for(args):
    run_items, blocks = _collect_overrides(args)
    if args.config:
        cfgs = harness.load_config(args.config)
    else:
        cfgs = [harness.RunConfig()]
    out = []
    for cfg in cfgs:
        cfg = harness.apply_overrides(cfg, run_items, blocks)
        if getattr(args, "seeds", None):
            cfg = harness.apply_overrides(cfg, {"seeds": args.seeds})
        out.append(cfg.validate())
    return out


def _print_record(r):
    std = "" if r.posterior_std is None else f" std={r.posterior_std:.3e} gamma={r.calibration:.3g}"
    status = f" FAILED: {r.error}" if r.failed else ""
    print(f"{r.method:4s} {r.problem} d={r.dim} n={r.n} seed={r.seed}: estimate={r.estimate:.10g} "
          f"truth={r.truth:.10g} rel_error={r.rel_error:.3e}{std} "
          f"time={r.sample_time_s + r.fit_time_s:.2f}s{status}")


def cmd_run(args) -> int:
    (cfg,) = _configs_for(args)[:1]
    rec = harness.run_once(cfg, args.seed)
    _print_record(rec)
    if args.out:
        harness.emit_results([rec], harness.format_for(args.out), args.out)
    return EXIT_NUMERICAL if rec.failed else EXIT_OK


def cmd_suite(args) -> int:
    records = []
    for cfg in _configs_for(args):
        res = harness.run_suite(cfg, workers=args.workers)
        for r in res.records:
            _print_record(r)
        print(f"  -> {cfg.method} {res.records[0].problem}: mean rel error {res.mean_rel_error:.3e} "
              f"+- {res.std_rel_error:.3e} over {len(res.records)} seed(s)")
        records.extend(res.records)
    if args.out:
        harness.emit_results(records, harness.format_for(args.out), args.out)
    return EXIT_NUMERICAL if any(r.failed for r in records) else EXIT_OK


def cmd_truth(args) -> int:
    families = [genz.parse_family(args.problem)] if args.problem else list(genz.GenzFamily)
    for fam in families:
        for d in args.dim:
            spec = genz.GenzSpec(fam, d)
            print(f"{spec.name:24s} d={d:<3d} {genz.ground_truth(spec):.16g}")
    return EXIT_OK


def _gauss_legendre_cube(f, dim, order=200, splits=None):
    """Tensor Gauss-Legendre on [0, 1]^dim with optional per-axis split points."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    cells = [0.0] + ([] if splits is None else sorted(splits)) + [1.0]
    pts, wts = [], []
    for lo, hi in zip(cells[:-1], cells[1:]):
        pts.append(lo + (hi - lo) * (nodes + 1) / 2)
        wts.append((hi - lo) * weights / 2)
    p1, w1 = np.concatenate(pts), np.concatenate(wts)
    grids = np.meshgrid(*([p1] * dim), indexing="ij")
    wgrid = np.ones_like(grids[0])
    for w in np.meshgrid(*([w1] * dim), indexing="ij"):
        wgrid = wgrid * w
    return float(np.sum(f(np.stack([g.ravel() for g in grids], axis=1)) * wgrid.ravel()))


def cmd_check(args) -> int:
    ok = True

    def report(name, err, tol):
        nonlocal ok
        passed = err <= tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: error {err:.2e} (tol {tol:.0e})")

    for fam in genz.GenzFamily:
        for d in (1, 2):
            spec = genz.GenzSpec(fam, d)
            splits = [spec.u[0]] if fam in (genz.GenzFamily.DISCONTINUOUS, genz.GenzFamily.CONTINUOUS) else None
            ref = _gauss_legendre_cube(lambda t, spec=spec: genz.genz_eval(spec, t), d, 200 if d == 1 else 100, splits)
            report(f"{spec.name} d={d} ground truth", abs(genz.ground_truth(spec) - ref) / max(abs(ref), 1e-300),
                   1e-8)
    phi = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
    k = quad_baselines.RbfKernel(1.0, 0.8)
    for x in (-2.0, 0.0, 1.5):
        ref = scipy.integrate.quad(lambda t: math.exp(-(t - x) ** 2 / 0.64) * phi(t), -np.inf, np.inf)[0]
        report(f"RBF embedding x={x}", abs(quad_baselines.rbf_embedding_gaussian(k, 1.0, np.array([x])) - ref), 1e-8)
        ref = scipy.integrate.quad(lambda t: math.exp(-abs(t - x) / 0.8) * phi(t), -40, 40, points=[x], limit=200)[0]
        report(f"Matern-1/2 embedding x={x}", abs(quad_baselines.matern_half_embedding(0.8, x) - ref), 1e-8)
        z = scipy.special.ndtr(1.0) - scipy.special.ndtr(-1.5)
        ref = scipy.integrate.quad(lambda t: math.exp(-(t - x) ** 2 / 1.28) * phi(t) / z, -1.5, 1.0)[0]
        report(f"truncated embedding x={x}",
               abs(quad_baselines.truncated_gaussian_embedding(0.8, 0.0, 1.0, -1.5, 1.0, x) - ref), 1e-8)
    return EXIT_OK if ok else EXIT_NUMERICAL


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": cmd_run, "suite": cmd_suite, "truth": cmd_truth, "check": cmd_check}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SteinNetError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
