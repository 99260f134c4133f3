"""Command-line entry point: ``sacr2 <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .. import gradcheck
from ..expert import generate_demos, save_demos
from . import config as cfgio
from .plot import plot as plot_svg
from .presets import preset, preset_names
from .suite import load_summary, run_suite


def _gen_demos(args) -> int:
    cfg = cfgio.load(args.config) if args.config else cfgio.ExperimentConfig()
    demos = generate_demos(args.n, cfg.env, args.seed, cfg.expert)
    save_demos(demos, args.out)
    print(f"wrote {len(demos)} demonstrations (N={demos.mean_length}, {demos.num_transitions} transitions) to {args.out}")
    return 0


def _run(args) -> int:
    if bool(args.preset) == bool(args.config):
        print("run: give exactly one of --preset or --config", file=sys.stderr)
        return 2
    cfg = preset(args.preset) if args.preset else cfgio.load(args.config)
    overrides = {}
    if args.seeds is not None:
        overrides["n_seeds"] = args.seeds
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.max_env_steps is not None:
        overrides["max_env_steps"] = args.max_env_steps
    if args.out is not None:
        overrides["output_dir"] = args.out
    cfg = cfg.with_overrides(**overrides)
    result = run_suite(cfg, parallelism=args.parallel)
    s = result.summary
    if s is not None:
        print(f"{cfg.name}: episodes-to-90 per seed {s.episodes_to_90}, final rolling {np.round(s.final_rolling, 3).tolist()}")
    print(f"suite directory: {result.directory}")
    if not result.complete:
        print(f"suite incomplete; failed seeds: {sorted(result.failed)}", file=sys.stderr)
        return 1
    return 0


def _plot(args) -> int:
    curves = [load_summary(d) for d in args.inputs]
    labels = args.labels or [c.name for c in curves]
    plot_svg(curves, labels, args.out, use_steps=args.steps,
             x_label="environment steps" if args.steps else "episodes")
    print(f"wrote {args.out}")
    return 0


def _gradcheck(args) -> int:
    results = gradcheck.run_all(args.seed)
    worst = max(results.values())
    for name, err in results.items():
        print(f"{err:10.3e}  {name}")
    print(f"max relative error {worst:.3e} (tolerance {gradcheck.TOLERANCE:.0e})")
    return 0 if worst <= gradcheck.TOLERANCE else 1


def _validate(args) -> int:
    cfg = cfgio.load(args.config)
    print(f"{args.config}: ok ({cfg.name}, {cfg.n_seeds} seeds, {cfg.max_env_steps} env steps)")
    return 0


def _presets(args) -> int:
    for name in preset_names():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sacr2", description="SAC with demonstrations and reward relabeling on a planar reacher")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-demos", help="generate expert demonstrations")
    g.add_argument("--n", type=int, default=200)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--config", help="experiment config providing env/expert settings")
    g.set_defaults(func=_gen_demos)

    r = sub.add_parser("run", help="run a multi-seed suite")
    r.add_argument("--preset", choices=preset_names())
    r.add_argument("--config")
    r.add_argument("--seeds", type=int, help="number of seeds")
    r.add_argument("--seed", type=int, help="base seed")
    r.add_argument("--max-env-steps", type=int)
    r.add_argument("--out", help=f"output directory (relative paths honour ${cfgio.OUTPUT_ENV_VAR})")
    r.add_argument("--parallel", type=int, default=1)
    r.set_defaults(func=_run)

    pl = sub.add_parser("plot", help="plot suites as an SVG")
    pl.add_argument("--inputs", nargs="+", required=True, help="suite directories")
    pl.add_argument("--labels", nargs="+")
    pl.add_argument("--steps", action="store_true", help="x axis in environment steps")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=_plot)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=_gradcheck)

    v = sub.add_parser("validate-config", help="parse and validate a config file")
    v.add_argument("--config", required=True)
    v.set_defaults(func=_validate)

    ls = sub.add_parser("presets", help="list preset names")
    ls.set_defaults(func=_presets)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (cfgio.ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
