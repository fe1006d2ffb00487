"""Repeated, seeded experiments: single cells, sweeps, trace replay, presets.

Every scheduler in a repetition sees the very same job list, so ratios
between policies are paired. Repetition ``r`` of a cell uses workload seed
``cell_seed + r``; sweep cell ``c`` gets ``cell_seed = base_seed + c * max_runs``.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import os
import platform
import time
from collections import defaultdict
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .engine import CompletionRecord, Job, run_simulation
from .metrics import (
    SUMMARY_FIELDS,
    SummaryStat,
    aggregate_runs,
    conditional_slowdown,
    mst,
    slowdown_ecdf,
    write_conditional_csv,
    write_ecdf_csv,
    write_records_csv,
    write_rows_csv,
)
from .registry import factory
from .workload import WorkloadSpec, generate, load_trace, streams, with_estimates

log = logging.getLogger(__name__)

OUTPUT_ENV = "PSBSIM_OUTPUT_DIR"
WORKLOAD_KEYS = tuple(f.name for f in fields(WorkloadSpec))


@dataclass
class ExperimentConfig:
    shape: float = 0.25
    sigma: float = 0.5
    timeshape: float = 1.0
    load: float = 0.9
    njobs: int = 10_000
    seed: int = 0
    weight_beta: float = 0.0
    weight_classes: int = 5
    size_family: str = "weibull"
    alpha: float = 2.0
    x_m: float = 1e-12
    schedulers: tuple[str, ...] = ("srpt", "psbs")
    references: tuple[str, ...] = ("ps", "srpt")
    min_runs: int = 30
    max_runs: int = 300
    target_rel_hw: float = 0.05
    stop_on: str = "ratio"
    stop_ratios: tuple[str, ...] = ()
    per_class: bool = False
    keep_records: bool = False

    def __post_init__(self) -> None:
        self.schedulers = tuple(self.schedulers)
        self.references = tuple(self.references)
        self.stop_ratios = tuple(self.stop_ratios)
        for pair in self.stop_ratios:
            parts = pair.split("/")
            if len(parts) != 2 or not set(parts) <= set(self.all_schedulers):
                raise ValueError(f"stop ratio {pair!r} must be 'a/b' over the run's schedulers")
        for name in self.schedulers + self.references:
            factory(name)
        if self.stop_on not in ("ratio", "mst"):
            raise ValueError(f"stop_on must be 'ratio' or 'mst', got {self.stop_on!r}")
        if not 1 <= self.min_runs <= self.max_runs:
            raise ValueError("need 1 <= min_runs <= max_runs")
        if not self.target_rel_hw > 0:
            raise ValueError("target_rel_hw must be positive")
        self.workload()

    def workload(self, seed: int | None = None) -> WorkloadSpec:
        params = {k: getattr(self, k) for k in WORKLOAD_KEYS}
        if seed is not None:
            params["seed"] = seed
        return WorkloadSpec(**params)

    @property
    def all_schedulers(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(self.schedulers + self.references))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schedulers"] = list(self.schedulers)
        d["references"] = list(self.references)
        d["stop_ratios"] = list(self.stop_ratios)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        data = data.get("config", data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    def replace(self, **changes) -> ExperimentConfig:
        return ExperimentConfig.from_dict({**self.to_dict(), **changes})


@dataclass
class RunResult:
    config: dict
    stats: dict[str, SummaryStat] = field(default_factory=dict)
    ratios: dict[str, dict[str, SummaryStat]] = field(default_factory=dict)
    class_stats: dict[str, dict[int, SummaryStat]] = field(default_factory=dict)
    class_ratios: dict[str, dict[int, SummaryStat]] = field(default_factory=dict)
    converged: dict[str, bool | None] = field(default_factory=dict)
    series_converged: dict[str, bool] = field(default_factory=dict)
    n_runs: int = 0
    seeds: list[int] = field(default_factory=list)
    records: dict[str, list[CompletionRecord]] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    duration: float = 0.0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def all_converged(self) -> bool:
        return self.ok and all(self.series_converged.values())

    def summary_rows(self) -> list[dict]:
        cfg = self.config
        rows = []
        for name in cfg.get("schedulers", []):
            stat = self.stats.get(name)
            ratios = self.ratios.get(name, {})
            rows.append(
                {
                    "shape": cfg.get("shape"),
                    "sigma": cfg.get("sigma"),
                    "scheduler": name,
                    "mst": None if stat is None else stat.mean,
                    "mst_ratio_ps": _mean_or_none(ratios.get("ps")),
                    "mst_ratio_srpt": _mean_or_none(ratios.get("srpt")),
                    "ci_half_width": None if stat is None else stat.ci_half_width,
                    "n_runs": self.n_runs,
                    "timeshape": cfg.get("timeshape"),
                    "load": cfg.get("load"),
                    "njobs": cfg.get("njobs"),
                    "weight_beta": cfg.get("weight_beta"),
                    "size_family": cfg.get("size_family"),
                    "converged": self.converged.get(name),
                    "error": self.error,
                }
            )
        return rows

    def to_json(self) -> dict:
        def stat(s: SummaryStat) -> dict:
            return {"mean": s.mean, "n": s.n, "ci_half_width": s.ci_half_width}

        return {
            "config": self.config,
            "stats": {k: stat(v) for k, v in self.stats.items()},
            "ratios": {k: {r: stat(s) for r, s in v.items()} for k, v in self.ratios.items()},
            "class_stats": {
                k: {str(c): stat(s) for c, s in v.items()} for k, v in self.class_stats.items()
            },
            "converged": self.converged,
            "series_converged": self.series_converged,
            "n_runs": self.n_runs,
            "seeds": self.seeds,
            "outputs": self.outputs,
            "duration": self.duration,
            "error": self.error,
            "provenance": provenance(),
        }


SUMMARY_COLUMNS = SUMMARY_FIELDS + (
    "timeshape", "load", "njobs", "weight_beta", "size_family", "converged", "error",
)


def _mean_or_none(s: SummaryStat | None) -> float | None:
    return None if s is None else s.mean


def provenance() -> dict:
    return {
        "package": "psbsim",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


def simulate(jobs: Sequence[Job], schedulers: Iterable[str]) -> dict[str, list[CompletionRecord]]:
    """Run every named scheduler on the same job list."""
    return {name: run_simulation(jobs, factory(name)()) for name in schedulers}


@dataclass
class _Repetition:
    seed: int
    mst: dict[str, float]
    class_mst: dict[str, dict[int, float]]
    records: dict[str, list[CompletionRecord]] | None


def _one_repetition(config: ExperimentConfig, seed: int) -> _Repetition:
    w = generate(config.workload(seed))
    out = simulate(w.jobs, config.all_schedulers)
    class_mst: dict[str, dict[int, float]] = {}
    if config.per_class:
        labels = np.asarray(w.classes)
        for name, recs in out.items():
            soj = np.array([r.sojourn for r in recs])
            class_mst[name] = {
                c: float(soj[labels == c].mean()) if np.any(labels == c) else math.nan
                for c in range(1, config.weight_classes + 1)
            }
    return _Repetition(
        seed,
        {name: mst(recs) for name, recs in out.items()},
        class_mst,
        out if config.keep_records else None,
    )


class _Accumulator:
    """Per-run values for a cell and the stopping decision over them."""

    def __init__(self, config: ExperimentConfig) -> None:
        self.config = config
        self.reps: list[_Repetition] = []
        refs = config.references
        self.stop_ref = "srpt" if "srpt" in refs else (refs[0] if refs else None)

    def add(self, rep: _Repetition) -> None:
        self.reps.append(rep)

    def _pairs(self) -> list[tuple[str, str | None]]:
        cfg = self.config
        if cfg.stop_ratios:
            return [tuple(p.split("/")) for p in cfg.stop_ratios]
        ref = self.stop_ref if cfg.stop_on == "ratio" else None
        return [(name, ref) for name in cfg.all_schedulers]

    def _series(self) -> dict[str, list[float]]:
        """Stopping statistics: ``num[/den][@class]`` -> per-run values."""
        out: dict[str, list[float]] = {}
        for num, den in self._pairs():
            key = num if den is None else f"{num}/{den}"
            out[key] = [r.mst[num] / (r.mst[den] if den else 1.0) for r in self.reps]
            if self.config.per_class:
                for c in range(1, self.config.weight_classes + 1):
                    out[f"{key}@class{c}"] = [
                        r.class_mst[num][c] / (r.class_mst[den][c] if den else 1.0)
                        for r in self.reps
                    ]
        return {k: [x for x in v if not math.isnan(x)] for k, v in out.items()}

    def converged(self) -> dict[str, bool]:
        cfg = self.config
        flags = {}
        for key, values in self._series().items():
            ok = False
            if values:
                _, ok = aggregate_runs(values, cfg.target_rel_hw, cfg.min_runs, cfg.max_runs)
            flags[key] = ok
        return flags

    def done(self) -> bool:
        n = len(self.reps)
        if n < self.config.min_runs:
            return False
        return n >= self.config.max_runs or all(self.converged().values())

    def result(self, duration: float) -> RunResult:
        cfg = self.config
        res = RunResult(config=cfg.to_dict(), n_runs=len(self.reps), duration=duration)
        res.seeds = [r.seed for r in self.reps]
        for name in cfg.all_schedulers:
            res.stats[name] = SummaryStat.of([r.mst[name] for r in self.reps])
            res.ratios[name] = {
                ref: SummaryStat.of([r.mst[name] / r.mst[ref] for r in self.reps])
                for ref in cfg.references
            }
            if cfg.per_class:
                res.class_stats[name] = self._class_stats(name, None)
                if self.stop_ref is not None:
                    res.class_ratios[name] = self._class_stats(name, self.stop_ref)
        flags = self.converged()
        res.series_converged = flags
        for name in cfg.all_schedulers:
            mine = [v for k, v in flags.items() if k.split("@")[0].split("/")[0] == name]
            res.converged[name] = all(mine) if mine else None
        if cfg.keep_records:
            pooled: dict[str, list[CompletionRecord]] = defaultdict(list)
            for r in self.reps:
                for name, recs in r.records.items():
                    pooled[name].extend(recs)
            res.records = dict(pooled)
        return res

    def _class_stats(self, name: str, ref: str | None) -> dict[int, SummaryStat]:
        out = {}
        for c in range(1, self.config.weight_classes + 1):
            values = [
                r.class_mst[name][c] / (r.class_mst[ref][c] if ref else 1.0) for r in self.reps
            ]
            values = [v for v in values if not math.isnan(v)]
            if values:
                out[c] = SummaryStat.of(values)
        return out


def _batched_repetitions(
    config: ExperimentConfig, seed0: int, workers: int
) -> Iterable[_Repetition]:
    if workers <= 1:
        for r in range(config.max_runs):
            yield _one_repetition(config, seed0 + r)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        r = 0
        while r < config.max_runs:
            batch = range(r, min(config.max_runs, r + workers))
            yield from pool.map(_one_repetition, [config] * len(batch), [seed0 + i for i in batch])
            r = batch.stop


def run(
    config: ExperimentConfig,
    *,
    outdir: str | Path | None = None,
    workers: int = 1,
    cell_seed: int | None = None,
) -> RunResult:
    """Repeat a cell until its statistics converge or ``max_runs`` is hit."""
    start = time.perf_counter()
    seed0 = config.seed if cell_seed is None else cell_seed
    acc = _Accumulator(config)
    # results are consumed in run order, so the stopping point does not depend on workers
    for rep in _batched_repetitions(config, seed0, workers):
        acc.add(rep)
        if acc.done():
            break
    res = acc.result(time.perf_counter() - start)
    if outdir is not None:
        write_run_outputs(res, outdir)
    return res


def write_run_outputs(res: RunResult, outdir: str | Path, prefix: str = "run") -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    summary = out / f"{prefix}_summary.csv"
    write_rows_csv(summary, SUMMARY_COLUMNS, res.summary_rows())
    res.outputs.append(str(summary))
    if res.class_stats:
        path = out / f"{prefix}_classes.csv"
        rows = [
            {
                "scheduler": name,
                "class": c,
                "mst": s.mean,
                "ci_half_width": s.ci_half_width,
                "n_runs": s.n,
                "ratio_to_reference": (
                    res.class_ratios[name][c].mean if name in res.class_ratios else None
                ),
            }
            for name, per in res.class_stats.items()
            for c, s in per.items()
        ]
        write_rows_csv(
            path, ("scheduler", "class", "mst", "ci_half_width", "n_runs", "ratio_to_reference"), rows
        )
        res.outputs.append(str(path))
    if res.records:
        ecdf = out / f"{prefix}_ecdf.csv"
        write_ecdf_csv(ecdf, {n: slowdown_ecdf(r) for n, r in res.records.items()})
        res.outputs.append(str(ecdf))
        if all(len(r) >= 100 for r in res.records.values()):
            cond = out / f"{prefix}_conditional.csv"
            write_conditional_csv(cond, {n: conditional_slowdown(r) for n, r in res.records.items()})
            res.outputs.append(str(cond))
    sidecar = out / f"{prefix}.json"
    res.outputs.append(str(sidecar))
    sidecar.write_text(json.dumps(res.to_json(), indent=2, default=float))


@dataclass
class SweepPlan:
    cells: list[ExperimentConfig]
    base_seed: int = 0

    @classmethod
    def grid(
        cls,
        base: ExperimentConfig,
        axes: dict[str, Sequence] | None = None,
        base_seed: int | None = None,
    ) -> SweepPlan:
        """Cross product of ``axes`` over ``base``; the last axis varies fastest."""
        axes = axes or {}
        bad = set(axes) - set(WORKLOAD_KEYS)
        if bad:
            raise ValueError(f"cannot sweep over {', '.join(sorted(bad))}")
        keys = list(axes)
        cells = [
            base.replace(**dict(zip(keys, combo)))
            for combo in itertools.product(*(axes[k] for k in keys))
        ]
        return cls(cells, base.seed if base_seed is None else base_seed)

    def cell_seed(self, index: int) -> int:
        return self.base_seed + index * self.cells[index].max_runs


def _run_cell(plan: SweepPlan, index: int) -> RunResult:
    cfg = plan.cells[index]
    try:
        return run(cfg, cell_seed=plan.cell_seed(index))
    except Exception as exc:  # a failing cell must not abort the sweep
        log.exception("cell %d failed", index)
        return RunResult(config=cfg.to_dict(), error=f"{type(exc).__name__}: {exc}")


def sweep(
    plan: SweepPlan,
    *,
    outdir: str | Path | None = None,
    workers: int = 1,
    progress: Callable[[int, RunResult], None] | None = None,
) -> list[RunResult]:
    n = len(plan.cells)
    if workers > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, [plan] * n, range(n)))
        if progress:
            for i, r in enumerate(results):
                progress(i, r)
    else:
        results = []
        for i in range(n):
            results.append(_run_cell(plan, i))
            if progress:
                progress(i, results[-1])
    if outdir is not None:
        write_sweep_outputs(plan, results, outdir)
    return results


def write_sweep_outputs(plan: SweepPlan, results: list[RunResult], outdir: str | Path) -> Path:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep_summary.csv"
    write_rows_csv(path, SUMMARY_COLUMNS, [row for r in results for row in r.summary_rows()])
    classes = [
        {"cell": i, "shape": r.config["shape"], "weight_beta": r.config["weight_beta"],
         "scheduler": name, "class": c, "mst": s.mean, "ci_half_width": s.ci_half_width,
         "n_runs": s.n}
        for i, r in enumerate(results)
        for name, per in r.class_stats.items()
        for c, s in per.items()
    ]
    if classes:
        write_rows_csv(out / "sweep_classes.csv", list(classes[0]), classes)
    for i, r in enumerate(results):
        if r.records:
            write_ecdf_csv(out / f"cell{i}_ecdf.csv", {n: slowdown_ecdf(v) for n, v in r.records.items()})
            if all(len(v) >= 100 for v in r.records.values()):
                write_conditional_csv(
                    out / f"cell{i}_conditional.csv",
                    {n: conditional_slowdown(v) for n, v in r.records.items()},
                )
    sidecar = {
        "base_seed": plan.base_seed,
        "cells": [
            {"index": i, "cell_seed": plan.cell_seed(i), **r.to_json()} for i, r in enumerate(results)
        ],
        "provenance": provenance(),
    }
    (out / "sweep.json").write_text(json.dumps(sidecar, indent=2, default=float))
    return path


@dataclass
class ReplayResult:
    trace: str
    target_load: float
    rows: list[dict]
    converged: bool
    outputs: list[str] = field(default_factory=list)


def replay(
    trace: str | Path,
    *,
    target_load: float = 0.9,
    schedulers: Sequence[str] = ("srpt", "srpte", "fspe", "psbs", "ps", "las", "fifo"),
    sigmas: Sequence[float] = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0),
    reference: str = "srpt",
    seed: int = 0,
    min_runs: int = 30,
    max_runs: int = 300,
    target_rel_hw: float = 0.05,
    outdir: str | Path | None = None,
) -> ReplayResult:
    """Replay a trace under increasing estimation error.

    Arrivals and sizes come from the trace (rescaled to ``target_load``);
    every repetition draws fresh estimates.
    """
    base = load_trace(trace, target_load)
    names = list(dict.fromkeys([*schedulers, reference]))
    for name in names:
        factory(name)
    rows = []
    all_ok = True
    for si, sigma in enumerate(sigmas):
        per_run: dict[str, list[float]] = defaultdict(list)
        n = 0
        for r in range(max_runs):
            rng = streams(seed + si * max_runs + r)["errors"]
            jobs = with_estimates(base, sigma, rng)
            out = simulate(jobs, names)
            for name in names:
                per_run[name].append(mst(out[name]))
            n = r + 1
            if n >= min_runs:
                ok = all(
                    aggregate_runs(
                        [a / b for a, b in zip(per_run[name], per_run[reference])],
                        target_rel_hw, min_runs, max_runs,
                    )[1]
                    for name in names
                )
                if ok:
                    break
        cell_ok = True
        for name in names:
            ratio = [a / b for a, b in zip(per_run[name], per_run[reference])]
            stat, ok = aggregate_runs(ratio, target_rel_hw, min(min_runs, n), max_runs)
            cell_ok &= ok
            m = SummaryStat.of(per_run[name])
            rows.append({
                "sigma": sigma, "scheduler": name, "mst": m.mean,
                f"mst_ratio_{reference}": stat.mean, "ci_half_width": stat.ci_half_width,
                "n_runs": n, "converged": ok,
            })
        all_ok &= cell_ok
    res = ReplayResult(str(trace), target_load, rows, all_ok)
    if outdir is not None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "replay_summary.csv"
        write_rows_csv(path, list(rows[0]), rows)
        side = out / "replay.json"
        side.write_text(json.dumps({
            "trace": str(trace), "target_load": target_load, "schedulers": names,
            "sigmas": list(sigmas), "seed": seed, "min_runs": min_runs, "max_runs": max_runs,
            "target_rel_hw": target_rel_hw, "rows": rows, "provenance": provenance(),
        }, indent=2, default=float))
        res.outputs = [str(path), str(side)]
    return res


def write_records(path: str | Path, jobs: Sequence[Job], records: Sequence[CompletionRecord]) -> None:
    write_records_csv(path, jobs, records)


# the heatmap axes are not enumerated upstream; log2-spaced points cover [0.125, 4].
LOG_GRID = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0)
HEAVY_SHAPES = (0.25, 0.177, 0.125)
SIGMA_LINE = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0)
LOADS = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.999)
PROPOSALS = ("srpte", "srpte+ps", "srpte+las", "fspe", "fspe+ps", "fspe+las")
COMPARISON = ("srpte", "fspe", "psbs", "ps", "las", "fifo")


def preset(name: str, **overrides) -> list[SweepPlan]:
    """Named experiment layouts; ``overrides`` patch every cell's base config."""
    def base(**kw) -> ExperimentConfig:
        return ExperimentConfig(**{**kw, **overrides})

    if name == "fig3-grid":
        return [SweepPlan.grid(base(schedulers=PROPOSALS, references=("ps", "srpt")),
                               {"shape": LOG_GRID, "sigma": LOG_GRID})]
    if name == "fig5-sigma-lines":
        return [SweepPlan.grid(base(schedulers=COMPARISON), {"shape": HEAVY_SHAPES, "sigma": SIGMA_LINE})]
    if name == "fig6-fairness":
        return [SweepPlan.grid(base(schedulers=("fifo", "ps", "las", "srpte", "fspe", "psbs"),
                                    keep_records=True))]
    if name == "fig9-weights":
        return [SweepPlan.grid(base(schedulers=("psbs", "dps"), references=("dps",), per_class=True),
                               {"shape": (0.25, 1.0, 4.0), "weight_beta": (0.0, 1.0, 2.0)})]
    if name == "pareto":
        return [SweepPlan.grid(base(schedulers=COMPARISON, size_family="pareto"),
                               {"alpha": (1.0, 2.0), "sigma": SIGMA_LINE})]
    if name == "load-timeshape":
        return [
            SweepPlan.grid(base(schedulers=COMPARISON), {"load": LOADS}),
            SweepPlan.grid(base(schedulers=COMPARISON), {"timeshape": LOG_GRID}),
        ]
    raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


PRESETS = ("fig3-grid", "fig5-sigma-lines", "fig6-fairness", "fig9-weights", "pareto", "load-timeshape")


def default_outdir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "results"))
