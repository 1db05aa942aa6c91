"""Command line entry point.

Every subcommand writes ``<out>/<subcommand>.meta.json`` echoing the resolved
arguments. Failures print ``ERROR <code> <message>`` on stderr and exit with
0 (ok), 1 (invariant failure), 2 (configuration error) or 3 (resource cap).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from .. import __version__
from ..bounds import (
    minimax_rate,
    monotone_entropy,
    monotone_rate,
    segment_entropy,
    volumetric_entropy,
)
from ..errors import ConfigError, DimensionMismatch, InvariantViolation, MinimaxError
from ..estimator import EstimatorConfig, prepare
from ..expfam import FAMILIES, cumulant_constants, make_family
from ..geometry import local_entropy, load_cloud, save_cloud
from ..tree import build_tree, dump_tree
from .config import SET_KINDS, ExperimentSpec, load_config
from .experiment import build_set, entropy_oracle, run_experiment

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_RESOURCE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_set_args(p, need_family=False):
    p.add_argument("--set", choices=SET_KINDS, default="monotone")
    p.add_argument("--n", type=int, default=16, help="ambient dimension")
    p.add_argument("--q", type=int, default=1, help="lattice dimension (monotone)")
    p.add_argument("--M", type=float, default=1.0)
    p.add_argument("--start", type=float, default=-1.0, help="segment start (times the ones vector)")
    p.add_argument("--end", type=float, default=1.0, help="segment end (times the ones vector)")
    p.add_argument("--point", type=float, default=0.0, help="singleton value (times the ones vector)")
    if need_family:
        p.add_argument("--family", choices=sorted(FAMILIES), default="bernoulli")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies use SUPPRESS so they never overwrite a value given before the subcommand
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p = _Parser(add_help=False)
    p.add_argument("--seed", type=int, default=default(None), help="base seed (default 0)")
    p.add_argument("--threads", type=int, default=default(1), help="worker processes")
    p.add_argument("--budget", type=int, default=default(None), help="candidate cloud size")
    p.add_argument("--out", default=default("out"), help="output directory")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = _Parser(prog="expfam-minimax", parents=[_global_flags(suppress=False)],
                     description="Minimax estimation for exponential-family regression.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("constants", parents=[common], help="curvature constants of a family")
    p.add_argument("--family", choices=sorted(FAMILIES), default="bernoulli")
    p.add_argument("--M", type=float, default=1.0)
    p.add_argument("--grid", type=int, default=1024)

    p = sub.add_parser("entropy", parents=[common], help="local entropy lower bounds on an eps grid")
    _add_set_args(p)
    p.add_argument("--eps", type=_float_list, required=True)
    p.add_argument("--c", type=float, default=8.0)
    p.add_argument("--probes", type=int, default=16)

    p = sub.add_parser("tree", parents=[common], help="build, verify and serialize the pruned tree")
    _add_set_args(p)
    p.add_argument("--c", type=float, default=16.0)
    p.add_argument("--Jmax", type=int, default=6)
    p.add_argument("--node-cap", type=int, default=1_000_000)

    p = sub.add_parser("estimate", parents=[common], help="run the estimator on one observation vector")
    _add_set_args(p, need_family=True)
    p.add_argument("--y", required=True, help="CSV file with one row of observations")
    p.set_defaults(n=None)
    p.add_argument("--C", type=float, default=3.0)
    p.add_argument("--c", type=float, default=None)
    p.add_argument("--kappaM", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--jstar-rule", choices=("2c", "c"), default="2c")
    p.add_argument("--entropy", choices=("analytic", "estimated"), default="analytic")

    p = sub.add_parser("rate", parents=[common], help="eps*, minimax rate and predicted scale")
    _add_set_args(p, need_family=True)
    p.add_argument("--c", type=float, default=8.0)
    p.add_argument("--kappaM", type=float, default=None)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo risk curve from a config file")
    p.add_argument("config")

    p = sub.add_parser("verify", parents=[common], help="run the invariant suites")
    p.add_argument("--quick", action="store_true", help="smaller sample sizes")
    return parser


def _spec_from_args(args) -> ExperimentSpec:
    return ExperimentSpec(
        set=args.set, ns=[args.n], q=args.q, M=args.M, segment_start=args.start,
        segment_end=args.end, point=args.point, budget=args.budget or 2000,
        cloud_seed=args.seed, family=getattr(args, "family", "bernoulli"),
        entropy=getattr(args, "entropy", "analytic"),
    )


def _write_meta(args, extra=None) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    meta = {"command": args.command, "package_version": __version__, "args": resolved}
    meta.update(extra or {})
    (out / f"{args.command}.meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")


def cmd_constants(args) -> int:
    k = cumulant_constants(make_family(args.family, args.M), args.grid)
    print(" ".join(f"{name}={value:.6g}" for name, value in k.as_dict().items()))
    _write_meta(args, {"constants": k.as_dict()})
    return EXIT_OK


def cmd_entropy(args) -> int:
    spec = _spec_from_args(args)
    cset = build_set(spec, args.n)
    lines = ["eps,c,log_N,count,is_lower_bound"]
    for eps in args.eps:
        est = local_entropy(cset, eps, args.c, args.probes, args.budget, args.seed)
        lines.append(f"{eps!r},{args.c!r},{est.log_N!r},{est.count},true")
    text = "\n".join(lines) + "\n"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "entropy.csv").write_text(text)
    sys.stdout.write(text)
    _write_meta(args)
    return EXIT_OK


def _tree_oracle(spec: ExperimentSpec, cset):
    if spec.set == "segment":
        return segment_entropy(cset.diameter)
    return volumetric_entropy(cset.n)


def cmd_tree(args) -> int:
    spec = _spec_from_args(args)
    cset = build_set(spec, args.n)
    tree = build_tree(cset, None, args.c, args.Jmax, args.budget, args.seed,
                      entropy_oracle=_tree_oracle(spec, cset), node_cap=args.node_cap,
                      strict=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_tree(tree, out / "tree.txt")
    report = tree.report
    print(f"levels={','.join(map(str, report.level_sizes))} {report.summary()}")
    _write_meta(args, {"checks": report.checks, "level_sizes": report.level_sizes})
    if not report.ok:
        failed = [k for k, v in report.checks.items() if not v]
        raise InvariantViolation(f"tree checks failed: {','.join(failed)}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    family = make_family(args.family, args.M)
    try:
        y = load_cloud(args.y)[0]
    except OSError as exc:
        raise ConfigError(f"cannot read {args.y}: {exc.strerror or exc}") from None
    if args.n is None:
        args.n = len(y)
    elif args.n != len(y):
        raise DimensionMismatch(f"--n {args.n} but {args.y} has {len(y)} observations")
    spec = _spec_from_args(args)
    cset = build_set(spec, len(y))
    cfg = EstimatorConfig(C=args.C, c=args.c, kappaM=args.kappaM, steps=args.steps,
                          seed=args.seed, jstar_rule=args.jstar_rule, budget=args.budget)
    plan = prepare(cset, family, cfg, entropy_oracle(spec, cset))
    trace = plan.run(y)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_cloud(out / "theta_hat.csv", trace.estimate[None, :])
    (out / "trace.txt").write_text(trace.to_text())
    sys.stdout.write(",".join(repr(float(v)) for v in trace.estimate) + "\n")
    _write_meta(args, {"J_star": plan.J_star, "steps": plan.steps, "kappaM": plan.kappaM,
                       "entropy_source": plan.entropy_source})
    return EXIT_OK


def cmd_rate(args) -> int:
    constants = cumulant_constants(make_family(args.family, args.M))
    spec = _spec_from_args(args)
    lines = []
    if args.set == "monotone":
        f = monotone_entropy(args.q, args.n, args.M)
        d = 2.0 * args.M * math.sqrt(args.n)
        report = minimax_rate(None, constants, f, args.kappaM, args.c, d=d,
                              upper_bound_only=args.q == 2)
        pred = monotone_rate(args.q, args.n)
        lines.append(f"predicted_scale={pred.value!r}")
        lines.append(f"predicted_exponent={pred.exponent!r}")
        lines.append(f"predicted_upper_bound_only={str(pred.upper_bound_only).lower()}")
    else:
        cset = build_set(spec, args.n)
        oracle = entropy_oracle(spec, cset)
        report = minimax_rate(cset, constants, lambda e: oracle(e, args.c), args.kappaM, args.c)
    text = report.to_text() + "".join(line + "\n" for line in lines)
    sys.stdout.write(text)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "rate.txt").write_text(text)
    (out / "rate.csv").write_text(report.csv_header() + "\n" + report.to_csv_row() + "\n")
    _write_meta(args)
    return EXIT_OK


def cmd_simulate(args) -> int:
    overrides = {"seed": args.seed, "budget": args.budget}
    spec = load_config(args.config, overrides)
    workers = args.threads if args.threads > 1 else spec.workers
    curve = run_experiment(spec, args.out, workers=workers,
                           log=lambda m: print(m, file=sys.stderr))
    sys.stdout.write(curve.to_csv())
    if curve.fit is not None:
        f = curve.fit
        print(f"fitted_slope={f.slope!r} ci95=[{f.ci_low!r},{f.ci_high!r}] "
              f"predicted_slope={curve.predicted_slope!r}")
    else:
        print(f"fitted_slope=none flags={','.join(curve.flags)}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .suites import run_suites

    results = run_suites(quick=args.quick, seed=args.seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}")
    _write_meta(args, {"suites": {name: ok for name, ok, _ in results}})
    if not all(ok for _, ok, _ in results):
        raise InvariantViolation("one or more invariant suites failed")
    return EXIT_OK


COMMANDS = {
    "constants": cmd_constants,
    "entropy": cmd_entropy,
    "tree": cmd_tree,
    "estimate": cmd_estimate,
    "rate": cmd_rate,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command != "simulate" and args.seed is None:
            args.seed = 0
        return COMMANDS[args.command](args)
    except MinimaxError as exc:
        print(f"ERROR {exc.code} {exc}", file=sys.stderr)
        return exc.exit_status
    except (ValueError, argparse.ArgumentTypeError) as exc:
        print(f"ERROR {ConfigError.code} {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MemoryError:
        print("ERROR E_RESOURCE out of memory", file=sys.stderr)
        return EXIT_RESOURCE
    except OSError as exc:
        print(f"ERROR E_IO {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
