"""Evaluation quantities computed from completion records, plus CSV emitters."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import CompletionRecord, Job

Z95 = 1.96


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class SummaryStat:
    mean: float
    n: int
    ci_half_width: float

    @property
    def relative_half_width(self) -> float:
        if self.mean == 0:
            return 0.0 if self.ci_half_width == 0 else math.inf
        return self.ci_half_width / abs(self.mean)

    @classmethod
    def of(cls, values: Sequence[float]) -> SummaryStat:
        """Normal-approximation 95% interval of the mean of ``values``."""
        x = np.asarray(values, dtype=float)
        if x.size == 0:
            raise MetricsError("no values to summarize")
        if x.size == 1:
            return cls(float(x[0]), 1, math.inf)
        return cls(float(x.mean()), int(x.size), Z95 * float(x.std(ddof=1)) / math.sqrt(x.size))


def _require(records: Sequence[CompletionRecord]) -> None:
    if not records:
        raise MetricsError("empty record list")


def mst(records: Sequence[CompletionRecord]) -> float:
    _require(records)
    return math.fsum(r.sojourn for r in records) / len(records)


def mst_ratio(
    records: Sequence[CompletionRecord], reference: Sequence[CompletionRecord]
) -> float:
    if {r.job_id for r in records} != {r.job_id for r in reference}:
        raise MetricsError("records and reference cover different jobs")
    return mst(records) / mst(reference)


@dataclass(frozen=True)
class Ecdf:
    x: np.ndarray
    p: np.ndarray

    def __call__(self, value: float) -> float:
        """Fraction of samples <= ``value`` (right-continuous)."""
        return float(np.searchsorted(self.x, value, side="right")) / self.x.size

    def fraction_above(self, threshold: float) -> float:
        return 1.0 - self(threshold)


def slowdown_ecdf(records: Sequence[CompletionRecord]) -> Ecdf:
    _require(records)
    x = np.sort(np.array([r.slowdown for r in records]))
    return Ecdf(x, np.arange(1, x.size + 1) / x.size)


def fraction_slowdown_above(records: Sequence[CompletionRecord], threshold: float) -> float:
    return slowdown_ecdf(records).fraction_above(threshold)


@dataclass(frozen=True)
class SlowdownBin:
    mean_size: float
    mean_slowdown: float
    count: int


def conditional_slowdown(
    records: Sequence[CompletionRecord], bins: int = 100
) -> list[SlowdownBin]:
    """Mean slowdown in ``bins`` equal-count groups of jobs sorted by size.

    When the count does not divide evenly, the largest-size bins get one
    extra job each.
    """
    if len(records) < bins:
        raise MetricsError(f"need at least {bins} records, got {len(records)}")
    ordered = sorted(records, key=lambda r: (r.size, r.job_id))
    base, extra = divmod(len(ordered), bins)
    out = []
    start = 0
    for b in range(bins):
        stop = start + base + (1 if b >= bins - extra else 0)
        chunk = ordered[start:stop]
        out.append(
            SlowdownBin(
                math.fsum(r.size for r in chunk) / len(chunk),
                math.fsum(r.slowdown for r in chunk) / len(chunk),
                len(chunk),
            )
        )
        start = stop
    return out


def aggregate_runs(
    values: Sequence[float],
    target_rel_hw: float = 0.05,
    min_runs: int = 30,
    max_runs: int | None = None,
) -> tuple[SummaryStat, bool]:
    """Summarize per-run values and apply the stopping rule.

    Converged once at least ``min_runs`` values are in and the 95% half-width
    is within ``target_rel_hw`` of the mean. Callers keep adding runs until
    converged or ``max_runs`` is reached.
    """
    if max_runs is not None and max_runs < min_runs:
        raise MetricsError("max_runs must be >= min_runs")
    stat = SummaryStat.of(values)
    return stat, stat.n >= min_runs and stat.relative_half_width <= target_rel_hw


def per_class_mst(
    records: Sequence[CompletionRecord], labels: Mapping[int, int] | Sequence[int]
) -> dict[int, SummaryStat]:
    """MST (with a 95% interval over jobs) for every class label.

    ``labels`` maps job id to class, or is a sequence aligned with ``records``.
    """
    _require(records)
    groups: dict[int, list[float]] = defaultdict(list)
    if isinstance(labels, Mapping):
        for r in records:
            if r.job_id not in labels:
                raise MetricsError(f"job {r.job_id} has no class label")
            groups[int(labels[r.job_id])].append(r.sojourn)
    else:
        if len(labels) != len(records):
            raise MetricsError("labels and records differ in length")
        for r, c in zip(records, labels):
            groups[int(c)].append(r.sojourn)
    return {c: SummaryStat.of(v) for c, v in sorted(groups.items())}


RECORD_FIELDS = ("job_id", "arrival", "size", "estimate", "weight", "completion", "sojourn", "slowdown")
SUMMARY_FIELDS = (
    "shape", "sigma", "scheduler", "mst", "mst_ratio_ps", "mst_ratio_srpt", "ci_half_width", "n_runs",
)


def write_records_csv(
    path: str | Path, jobs: Iterable[Job], records: Iterable[CompletionRecord]
) -> None:
    by_id = {j.id: j for j in jobs}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_FIELDS)
        for r in records:
            j = by_id[r.job_id]
            w.writerow(
                [r.job_id, r.arrival, r.size, j.estimated_size, j.weight, r.completion, r.sojourn, r.slowdown]
            )


def write_ecdf_csv(path: str | Path, curves: Mapping[str, Ecdf], max_points: int = 2000) -> None:
    """Long-format ECDF points (thinned to ``max_points`` per scheduler)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("scheduler", "slowdown", "cdf"))
        for name, e in curves.items():
            idx = np.unique(np.linspace(0, e.x.size - 1, min(max_points, e.x.size)).astype(int))
            for i in idx:
                w.writerow((name, float(e.x[i]), float(e.p[i])))


def write_conditional_csv(path: str | Path, curves: Mapping[str, Sequence[SlowdownBin]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("scheduler", "bin", "mean_size", "mean_slowdown", "count"))
        for name, bins in curves.items():
            for i, b in enumerate(bins):
                w.writerow((name, i, b.mean_size, b.mean_slowdown, b.count))


def write_rows_csv(path: str | Path, fields: Sequence[str], rows: Iterable[Mapping]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)
