"""Command-line entry point.

Exit codes: 0 success, 2 configuration or usage error, 3 runtime or numeric error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, dump_config, load_config
from .errors import ConfigError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("fishformation")


class UsageError(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="YAML experiment config (defaults built in)")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--threads", type=int, default=1, help="parallel rollout workers")
    p.add_argument("--out", type=Path, help="run directory (default: config output_dir)")
    p.add_argument("--epochs", type=int, help="training epochs override")
    p.add_argument("--rollouts", type=int, help="rollouts per stage override")
    p.add_argument("-q", "--quiet", action="store_true", help="only report errors")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="fishformation", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("print-config", parents=[common], help="print the effective configuration")
    sub.add_parser("bc", parents=[common], help="collect demonstrations and train policy 0")
    d = sub.add_parser("dagger", parents=[common], help="DAgger iterations from a run directory")
    d.add_argument("--iterations", type=int, help="number of iterations (default: config)")
    e = sub.add_parser("eval", parents=[common], help="evaluate policies")
    e.add_argument("policies", nargs="*",
                   help="expert, none, checkpoint names or .ckpt paths (default: all)")
    sub.add_parser("fixed-follower", parents=[common], help="fixed-follower pressure grid")
    sub.add_parser("run", parents=[common], help="bc, dagger and eval in one go")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = cfg.with_overrides(seed=args.seed, epochs=args.epochs, rollouts=args.rollouts,
                             output_dir=args.out)
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    return cfg


def _open_or_create(cfg: ExperimentConfig, args):
    from .pipeline import MANIFEST, Run

    root = Path(cfg.output_dir)
    if (root / MANIFEST).exists():
        run = Run.open(root)
        # command-line overrides still apply to a resumed run
        run.cfg = run.cfg.with_overrides(seed=args.seed, epochs=args.epochs,
                                         rollouts=args.rollouts, output_dir=root)
        return run
    return Run.create(root, cfg)


def cmd_print_config(cfg, args) -> None:
    sys.stdout.write(dump_config(cfg))


def cmd_bc(cfg, args) -> None:
    from .pipeline import MANIFEST, Run, stage_bc

    root = Path(cfg.output_dir)
    if (root / MANIFEST).exists():
        raise UsageError(f"{root} already contains a run; choose a fresh --out")
    run = Run.create(root, cfg)
    stage_bc(run, args.threads)
    print(f"bc: {len(run.manifest['dataset'])} demonstrations, checkpoint "
          f"{run.manifest['checkpoints'][-1]['file']} in {root}")


def cmd_dagger(cfg, args) -> None:
    from .pipeline import MANIFEST, Run, stage_dagger

    root = Path(cfg.output_dir)
    if not (root / MANIFEST).exists():
        raise UsageError(f"{root} has no manifest; run the bc command first")
    run = _open_or_create(cfg, args)
    if args.iterations is not None and args.iterations < 0:
        raise UsageError("--iterations must be non-negative")
    stage_dagger(run, args.iterations, args.threads)
    print(f"dagger: dataset holds {len(run.manifest['dataset'])} rollouts, latest checkpoint "
          f"{run.manifest['checkpoints'][-1]['file']}")


def cmd_eval(cfg, args) -> None:
    from .pipeline import stage_eval

    run = _open_or_create(cfg, args)
    results = stage_eval(run, args.policies or None, None, args.threads)
    _print_eval(results)


def _print_eval(results) -> None:
    import numpy as np

    print(f"{'policy':<12} {'n':>3} {'reward median':>14} {'mae median':>11}")
    for p, ms in results.items():
        print(f"{p:<12} {len(ms):>3} {np.median([m.cumulative_reward for m in ms]):>14.1f} "
              f"{np.median([m.mae_vs_expert for m in ms]):>11.4f}")


def cmd_run(cfg, args) -> None:
    cmd_bc(cfg, args)
    args.iterations = None
    cmd_dagger(cfg, args)
    cmd_eval(cfg, args)


def cmd_fixed_follower(cfg, args) -> None:
    import dataclasses

    from .evaluation import (fixed_follower_cell, fixed_follower_trends, write_cell_csv,
                             write_grid_csv)
    from .plotting import plot_fixed_follower

    ff = cfg.fixed_follower
    flow = cfg.flow if ff.with_noise else dataclasses.replace(cfg.flow, noise_std=0.0)
    flow = dataclasses.replace(flow, seed=cfg.seed)
    kw = dict(duration=ff.duration, spec=cfg.body, cpg=cfg.cpg, flow=flow,
              layout=cfg.sensors, onset_fraction=ff.onset_fraction)
    out = Path(cfg.output_dir) / "fixed_follower"
    (out / "cells").mkdir(parents=True, exist_ok=True)
    cells = [fixed_follower_cell(lat, lon, **kw) for lat in ff.laterals for lon in ff.longitudinals]
    for c in cells:
        write_cell_csv(out / "cells" / f"lat{c.lateral:g}_lon{c.longitudinal:g}.csv", c)
    write_grid_csv(out / "grid.csv", cells)
    plot_fixed_follower(out / "fixed_follower.svg", cells)

    stag = fixed_follower_cell(ff.staggered_lateral, min(ff.longitudinals), **kw)
    lines = [f"{text}: {'yes' if ok else 'NO'}" for text, ok in fixed_follower_trends(cells, stag)]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"wrote {len(cells)} cells to {out}")


COMMANDS = {"print-config": cmd_print_config, "bc": cmd_bc, "dagger": cmd_dagger,
            "eval": cmd_eval, "fixed-follower": cmd_fixed_follower, "run": cmd_run}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = _config(args)
        COMMANDS[args.command](cfg, args)
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # any runtime failure maps to one exit code
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
