"""Command-line front end: ``psbsim run|sweep|replay|presets``.

Exit codes: 0 success, 1 invalid input, 2 runtime failure, 3 some
statistic did not converge (outputs are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .engine import ContractViolation, WorkloadError
from .experiments import (
    PRESETS,
    ExperimentConfig,
    SweepPlan,
    default_outdir,
    preset,
    replay,
    run,
    sweep,
    write_sweep_outputs,
)
from .registry import POLICIES

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_NOT_CONVERGED = 0, 1, 2, 3

# flag name -> config key
PARAMS = {
    "shape": "shape",
    "sigma": "sigma",
    "timeshape": "timeshape",
    "load": "load",
    "njobs": "njobs",
    "seed": "seed",
    "beta": "weight_beta",
    "classes": "weight_classes",
    "size_family": "size_family",
    "alpha": "alpha",
    "x_m": "x_m",
    "min_runs": "min_runs",
    "max_runs": "max_runs",
    "target_rel_hw": "target_rel_hw",
    "stop_on": "stop_on",
}
INT_PARAMS = {"njobs", "seed", "classes", "min_runs", "max_runs"}
SWEEP_AXES = ("shape", "sigma", "timeshape", "load", "njobs", "beta", "alpha")

log = logging.getLogger("psbsim")


def _csv(kind):
    def parse(text: str) -> list:
        return [kind(x) for x in text.split(",") if x.strip()]
    return parse


def _names(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _add_common(p: argparse.ArgumentParser, sweep_axes: bool = False) -> None:
    p.add_argument("--config", type=Path, help="JSON config file (flags override it)")
    p.add_argument("--outdir", type=Path, help="output directory (default: $PSBSIM_OUTPUT_DIR or ./results)")
    p.add_argument("--workers", type=int, default=None, help="parallel processes (default: all cores)")
    p.add_argument("--scheduler", "--schedulers", dest="scheduler", type=_names,
                   help=f"comma-separated policies: {', '.join(POLICIES)}")
    p.add_argument("--reference", "--references", dest="reference", type=_names,
                   help="comma-separated reference policies for MST ratios")
    p.add_argument("--stop-ratio", dest="stop_ratio", type=_names,
                   help="comma-separated a/b MST ratios the stopping rule must converge")
    for flag in PARAMS:
        if sweep_axes and flag in SWEEP_AXES:
            kind = int if flag in INT_PARAMS else float
            p.add_argument(f"--{flag}", type=_csv(kind), help="value or comma-separated list")
        elif flag == "size_family":
            p.add_argument("--size-family", dest="size_family", choices=("weibull", "pareto"))
        elif flag == "stop_on":
            p.add_argument("--stop-on", dest="stop_on", choices=("ratio", "mst"),
                           help="statistic the stopping rule watches")
        else:
            kind = int if flag in INT_PARAMS else float
            p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=kind)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psbsim", description="Size-based scheduling experiments.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one parameter cell, repeated until the CIs converge")
    _add_common(p)
    p.add_argument("--records", action="store_true", help="pool per-job records and emit ECDF/conditional CSVs")
    p.add_argument("--per-class", action="store_true", help="report MST per weight class")

    p = sub.add_parser("sweep", help="cross product of comma-separated parameter lists")
    _add_common(p, sweep_axes=True)

    p = sub.add_parser("replay", help="replay a trace under growing estimation error")
    p.add_argument("trace", type=Path)
    p.add_argument("--target-load", type=float, default=0.9)
    p.add_argument("--sigma", type=_csv(float), default=[0.125, 0.25, 0.5, 1.0, 2.0, 4.0])
    p.add_argument("--scheduler", "--schedulers", dest="scheduler", type=_names,
                   default=["srpt", "srpte", "fspe", "psbs", "ps", "las", "fifo"])
    p.add_argument("--reference", default="srpt")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-runs", type=int, default=30)
    p.add_argument("--max-runs", type=int, default=300)
    p.add_argument("--target-rel-hw", type=float, default=0.05)
    p.add_argument("--outdir", type=Path)

    p = sub.add_parser("presets", help="list or run a named experiment layout")
    p.add_argument("name", nargs="?", choices=PRESETS)
    p.add_argument("--njobs", type=int, help="override njobs (e.g. reduced desk runs)")
    p.add_argument("--min-runs", type=int)
    p.add_argument("--max-runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--outdir", type=Path)
    p.add_argument("--workers", type=int, default=None)
    return parser


def load_config_file(path: Path | None) -> dict:
    if path is None:
        return {}
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    data = dict(data.get("config", data))
    if "beta" in data:
        data["weight_beta"] = data.pop("beta")
    if "scheduler" in data:
        s = data.pop("scheduler")
        data["schedulers"] = [s] if isinstance(s, str) else s
    return data


def _overrides(args: argparse.Namespace, skip: tuple[str, ...] = ()) -> dict:
    out = {}
    for flag, key in PARAMS.items():
        value = getattr(args, flag, None)
        if value is not None and flag not in skip:
            out[key] = value
    if getattr(args, "scheduler", None):
        out["schedulers"] = args.scheduler
    if getattr(args, "reference", None) is not None:
        out["references"] = args.reference
    if getattr(args, "stop_ratio", None):
        out["stop_ratios"] = args.stop_ratio
    return out


def _outdir(args: argparse.Namespace) -> Path:
    return args.outdir if args.outdir is not None else default_outdir()


def _workers(args: argparse.Namespace) -> int:
    return args.workers if args.workers else (os.cpu_count() or 1)


def cmd_run(args: argparse.Namespace) -> int:
    data = {**load_config_file(args.config), **_overrides(args)}
    if args.records:
        data["keep_records"] = True
    if args.per_class:
        data["per_class"] = True
    config = ExperimentConfig.from_dict(data)
    res = run(config, outdir=_outdir(args), workers=_workers(args))
    for row in res.summary_rows():
        print(f"{row['scheduler']:>10}  mst={row['mst']:.6g}  "
              f"vs_ps={_fmt(row['mst_ratio_ps'])}  vs_srpt={_fmt(row['mst_ratio_srpt'])}  "
              f"hw={row['ci_half_width']:.3g}  runs={row['n_runs']}  converged={row['converged']}")
    for path in res.outputs:
        print(f"wrote {path}")
    return EXIT_OK if res.all_converged else EXIT_NOT_CONVERGED


def _fmt(x: float | None) -> str:
    return "-" if x is None else f"{x:.4f}"


def cmd_sweep(args: argparse.Namespace) -> int:
    file_cfg = load_config_file(args.config)
    axes = {}
    for flag in SWEEP_AXES:
        values = getattr(args, flag, None)
        if values:
            key = PARAMS[flag]
            if len(values) == 1:
                file_cfg[key] = values[0]
            else:
                axes[key] = values
    base = ExperimentConfig.from_dict({**file_cfg, **_overrides(args, skip=SWEEP_AXES)})
    plan = SweepPlan.grid(base, axes)
    return _run_plans([plan], _outdir(args), _workers(args))


def _run_plans(plans: list[SweepPlan], outdir: Path, workers: int) -> int:
    status = EXIT_OK
    for i, plan in enumerate(plans):
        target = outdir if len(plans) == 1 else outdir / f"part{i}"

        def progress(index: int, res) -> None:
            state = "failed: " + res.error if res.error else f"{res.n_runs} runs"
            print(f"cell {index + 1}/{len(plan.cells)}: {state}", file=sys.stderr)

        results = sweep(plan, workers=workers, progress=progress)
        path = write_sweep_outputs(plan, results, target)
        print(f"wrote {path}")
        if any(not r.ok for r in results):
            status = max(status, EXIT_RUNTIME)
        elif not all(r.all_converged for r in results) and status == EXIT_OK:
            status = EXIT_NOT_CONVERGED
    return status


def cmd_replay(args: argparse.Namespace) -> int:
    res = replay(
        args.trace,
        target_load=args.target_load,
        schedulers=args.scheduler,
        sigmas=args.sigma,
        reference=args.reference,
        seed=args.seed,
        min_runs=args.min_runs,
        max_runs=args.max_runs,
        target_rel_hw=args.target_rel_hw,
        outdir=_outdir(args),
    )
    for path in res.outputs:
        print(f"wrote {path}")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_presets(args: argparse.Namespace) -> int:
    if args.name is None:
        for name in PRESETS:
            plans = preset(name)
            print(f"{name}: {sum(len(p.cells) for p in plans)} cells")
        return EXIT_OK
    overrides = {k: v for k, v in {
        "njobs": args.njobs, "min_runs": args.min_runs,
        "max_runs": args.max_runs, "seed": args.seed,
    }.items() if v is not None}
    if "min_runs" in overrides and "max_runs" not in overrides:
        overrides["max_runs"] = max(overrides["min_runs"], 300)
    plans = preset(args.name, **overrides)
    return _run_plans(plans, _outdir(args) / args.name, _workers(args))


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "replay": cmd_replay, "presets": cmd_presets}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (WorkloadError, ValueError, TypeError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ContractViolation, OSError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
