"""Command-line entry point.

Subcommands: gen-data (synthetic dataset cache), train (experiment from a
config file), sweep (parameter sweep from a config file), bound
(closed-form bound evaluators as JSON), fit-slope (log-log tail slope of
a CSV column), plot (figure regeneration from record CSVs).  Flags given
on the command line override config-file keys.
"""

from __future__ import annotations

import argparse
import json
import sys

import yaml

from . import bounds
from .config import force_literal_exponent, load_experiment_config, load_sweep_config
from .data import DATA_DIR_ENV, SyntheticSpec, gen_synthetic_linreg, save_linreg_dataset
from .harness import fit_loglog_slope, read_csv_columns, run_experiment, run_sweep
from .plots import emit_plot_data


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--jobs", type=int, default=1, help="max concurrent arms")
    p.add_argument(
        "--data-dir",
        default=None,
        help=f"directory holding MNIST IDX files (also read from ${DATA_DIR_ENV})",
    )
    p.add_argument("--out", default=None, help="override the output directory")
    p.add_argument(
        "--bfp-literal-exponent",
        action="store_true",
        help="use the literal shared-exponent sign (comparison mode)",
    )


def _overrides(args) -> dict:
    return {"seed": args.seed, "out_dir": args.out}


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(
        dim=args.dim,
        n_samples=args.n_samples,
        sigma_x=args.sigma_x,
        sigma_u=args.sigma_u,
        seed=args.seed if args.seed is not None else 0,
    )
    data = gen_synthetic_linreg(spec)
    save_linreg_dataset(data, args.out)
    print(f"wrote {args.out}: n={data.n} d={data.dim}")
    return 0


def cmd_train(args) -> int:
    cfg = load_experiment_config(args.config, _overrides(args))
    if args.bfp_literal_exponent:
        cfg = force_literal_exponent(cfg)
    summary = run_experiment(cfg, data_dir=args.data_dir, jobs=args.jobs)
    for name, info in summary["arms"].items():
        final = {k: v for k, v in info["final"].items() if v is not None}
        print(f"{name}: {final}")
    print(f"summary: {cfg.out_dir}/{cfg.exp_id}_summary.json")
    return 0


def cmd_sweep(args) -> int:
    spec = load_sweep_config(args.config, _overrides(args))
    if args.bfp_literal_exponent:
        spec.base = force_literal_exponent(spec.base)
    summary = run_sweep(spec, data_dir=args.data_dir, jobs=args.jobs)
    print(f"sweep CSV: {summary['csv']}")
    return 0


def cmd_bound(args) -> int:
    if args.kind == "quadratic":
        report = bounds.thm_quadratic_bound(
            args.w0_dist_sq,
            args.alpha,
            args.mu,
            args.total_iters,
            args.cycle,
            args.sigma,
            args.delta,
            args.dim,
            a_norm=args.a_norm,
        ).to_dict()
    elif args.kind == "strongly-convex":
        consts = bounds.ProblemConstants(
            mu=args.mu,
            l_smooth=args.l_smooth,
            m_hessian=args.m_hessian,
            g_bound=args.g_bound,
            sigma=args.sigma,
            dim=args.dim,
            delta=args.delta,
            chi=args.chi,
        )
        report = bounds.thm_strongly_convex_bound(
            consts, args.cycle, args.total_iters, args.alpha
        ).to_dict()
    elif args.kind == "step-size":
        report = {"value": bounds.lemma_step_size(args.delta, args.dim, args.g_bound)}
    elif args.kind == "min-iters":
        report = {
            "value": bounds.lemma_min_iters(
                args.g_bound, args.mu, args.delta, args.dim, args.w0_dist_sq
            )
        }
    elif args.kind == "noise-ball":
        report = {
            "value": bounds.lemma_noise_ball(
                args.g_bound, args.delta, args.dim, args.mu, args.chi
            )
        }
    else:  # floor-scale
        report = {"value": bounds.sgdlp_floor_scale(args.sigma, args.delta)}
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_fit_slope(args) -> int:
    cols = read_csv_columns(args.csv)
    if args.x not in cols or args.y not in cols:
        missing = args.x if args.x not in cols else args.y
        raise SystemExit(f"{args.csv}: missing column {missing!r}")
    import numpy as np

    keep = ~np.isnan(cols[args.y])
    slope = fit_loglog_slope(cols[args.x][keep], cols[args.y][keep], args.window)
    print(json.dumps({"slope": slope, "column": args.y, "window": args.window}))
    return 0


def cmd_plot(args) -> int:
    if args.spec:
        with open(args.spec) as f:
            spec = yaml.safe_load(f)
    else:
        spec = {"kind": args.kind, "name": args.name, "x": args.x, "y": args.y}
    out = emit_plot_data(args.csvs, spec, args.out or ".")
    print(json.dumps(out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lowprec",
        description="Low-precision training simulator with weight averaging",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate and cache a synthetic dataset")
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--n-samples", type=int, default=4096)
    p.add_argument("--sigma-x", type=float, default=1.0)
    p.add_argument("--sigma-u", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output dataset file")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run an experiment config")
    p.add_argument("--config", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run a parameter sweep config")
    p.add_argument("--config", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bound", help="evaluate a convergence bound as JSON")
    p.add_argument(
        "--kind",
        required=True,
        choices=[
            "quadratic",
            "strongly-convex",
            "step-size",
            "min-iters",
            "noise-ball",
            "floor-scale",
        ],
    )
    p.add_argument("--w0-dist-sq", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--l-smooth", type=float, default=1.0)
    p.add_argument("--m-hessian", type=float, default=0.0)
    p.add_argument("--g-bound", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=2.0**-6)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--cycle", type=int, default=1)
    p.add_argument("--total-iters", type=int, default=10000)
    p.add_argument("--chi", type=float, default=bounds.CHI)
    p.add_argument("--a-norm", type=float, default=None)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("fit-slope", help="log-log tail slope of a CSV column")
    p.add_argument("--csv", required=True)
    p.add_argument("--x", default="t")
    p.add_argument("--y", default="dist_sq")
    p.add_argument("--window", type=float, default=0.5)
    p.set_defaults(func=cmd_fit_slope)

    p = sub.add_parser("plot", help="emit plot data and an SVG figure")
    p.add_argument("csvs", nargs="+", help="input record CSVs")
    p.add_argument("--spec", default=None, help="YAML plot spec")
    p.add_argument("--kind", default="convergence")
    p.add_argument("--name", default="figure")
    p.add_argument("--x", default="t")
    p.add_argument("--y", default="dist_sq")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
