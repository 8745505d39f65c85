"""Command-line entry point: ``gbdmpc run ...`` and ``gbdmpc plots ...``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import traceback
from pathlib import Path

from .config import EXPERIMENTS, MASTERS, MODES, OUT_ENV, ConfigError, RunConfig, dumps, load


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gbdmpc", description="Benders hybrid MPC experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment and write CSV/JSON artifacts")
    r.add_argument("experiment_pos", nargs="?", choices=EXPERIMENTS, metavar="EXPERIMENT")
    r.add_argument("--experiment", choices=EXPERIMENTS)
    r.add_argument("--n", type=int, dest="N")
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--master", choices=MASTERS)
    r.add_argument("--seed", type=int)
    r.add_argument("--episodes", type=int)
    r.add_argument("--duration", type=float, help="episode length in seconds")
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
    r.add_argument("--diagnostics", action="store_true", default=None)
    r.add_argument("--config", help="JSON config file; flags override its values")
    r.add_argument("--count", type=int, help="random-miqp instance count")
    r.add_argument("--check-oracle", action="store_true", default=None, dest="check_oracle")
    r.add_argument("--print-config", action="store_true", help="print the resolved config and exit")

    p = sub.add_parser("plots", help="render SVG plots from per-step CSV traces")
    p.add_argument("traces", nargs="*")
    p.add_argument("--out", help="output directory (default: next to the first trace)")
    return ap


def config_from_args(args) -> RunConfig:
    cfg = load(args.config) if args.config else RunConfig()
    over = {}
    exp = args.experiment or args.experiment_pos
    if exp:
        over["experiment"] = exp
    for name in ("N", "mode", "master", "seed", "episodes", "duration", "out", "diagnostics",
                 "count", "check_oracle"):
        v = getattr(args, name)
        if v is not None:
            over[name] = v
    cfg = dataclasses.replace(cfg, **over)
    return cfg.resolved()


def cmd_run(args) -> int:
    try:
        cfg = config_from_args(args)
    except (ConfigError, OSError, TypeError) as e:
        print(f"gbdmpc: invalid configuration: {e}", file=sys.stderr)
        return 2
    if args.print_config:
        sys.stdout.write(dumps(cfg))
        return 0
    from .experiments import run

    try:
        summary, _ = run(cfg)
    except ConfigError as e:
        print(f"gbdmpc: invalid configuration: {e}", file=sys.stderr)
        return 2
    except Exception:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        log = out / "error.log"
        log.write_text(traceback.format_exc())
        print(f"gbdmpc: run failed; see {log}", file=sys.stderr)
        return 1
    print(json.dumps(summary, indent=2, sort_keys=True))
    if cfg.check_oracle and summary.get("oracle_ok") is False:
        return 1
    return 0


def cmd_plots(args) -> int:
    from .plots import PlotError, emit_plots

    out = args.out or (str(Path(args.traces[0]).parent) if args.traces else os.environ.get(OUT_ENV, "runs"))
    try:
        files = emit_plots(args.traces, out)
    except (PlotError, OSError) as e:
        print(f"gbdmpc: {e}", file=sys.stderr)
        return 2
    for f in files:
        print(f)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    return cmd_plots(args)


if __name__ == "__main__":
    sys.exit(main())
