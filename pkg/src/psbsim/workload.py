"""Synthetic workloads and trace ingestion.

All randomness is inverse-CDF sampling from numpy's PCG64. A workload seed
is split into four independent streams (sizes, arrivals, errors, weights)
so that, for example, changing ``sigma`` leaves sizes and arrivals intact.
"""

from __future__ import annotations

import math
import re
import warnings
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .engine import Job, WorkloadError

MIN_SIZE = 1e-12
STREAMS = ("sizes", "arrivals", "errors", "weights")


@dataclass(frozen=True)
class WorkloadSpec:
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
    x_m: float = MIN_SIZE

    def __post_init__(self) -> None:
        if self.size_family not in ("weibull", "pareto"):
            raise WorkloadError(f"unknown size family {self.size_family!r}")
        if self.size_family == "weibull" and not self.shape > 0:
            raise WorkloadError(f"shape must be positive, got {self.shape}")
        if self.size_family == "pareto" and not self.alpha > 0:
            raise WorkloadError(f"alpha must be positive, got {self.alpha}")
        if not self.timeshape > 0:
            raise WorkloadError(f"timeshape must be positive, got {self.timeshape}")
        if not 0 < self.load < 1:
            raise WorkloadError(f"load must be in (0, 1), got {self.load}")
        if self.sigma < 0:
            raise WorkloadError(f"sigma must be non-negative, got {self.sigma}")
        if self.njobs < 1:
            raise WorkloadError(f"njobs must be at least 1, got {self.njobs}")
        if self.weight_beta < 0 or self.weight_classes < 1:
            raise WorkloadError("weight_beta must be >= 0 and weight_classes >= 1")

    def replace(self, **changes) -> WorkloadSpec:
        return WorkloadSpec(**{**asdict(self), **changes})


@dataclass
class Workload:
    spec: WorkloadSpec
    jobs: list[Job]
    classes: np.ndarray = field(repr=False)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([j.size for j in self.jobs])

    @property
    def estimates(self) -> np.ndarray:
        return np.array([j.estimated_size for j in self.jobs])


def streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.PCG64(ss)) for name, ss in zip(STREAMS, children)}


def uniform_open(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform draws strictly inside (0, 1)."""
    return (rng.integers(0, 2**53, size=n, dtype=np.int64) + 0.5) / 2.0**53


def weibull_scale(shape: float, mean: float = 1.0) -> float:
    return mean / math.gamma(1.0 + 1.0 / shape)


def _weibull(u: np.ndarray, shape: float, scale: float) -> np.ndarray:
    return scale * (-np.log(u)) ** (1.0 / shape)


def gen_sizes(spec: WorkloadSpec, rng: np.random.Generator) -> np.ndarray:
    """Job sizes with unit mean (Weibull), or shifted Lomax for ``pareto``."""
    u = uniform_open(rng, spec.njobs)
    if spec.size_family == "weibull":
        sizes = _weibull(u, spec.shape, weibull_scale(spec.shape))
    else:
        sizes = spec.x_m + (u ** (-1.0 / spec.alpha) - 1.0)
    return np.maximum(sizes, MIN_SIZE)


def gen_inter_arrivals(spec: WorkloadSpec, rng: np.random.Generator) -> np.ndarray:
    """Weibull gaps with mean ``1 / load`` (unit mean size, unit capacity)."""
    u = uniform_open(rng, spec.njobs)
    return _weibull(u, spec.timeshape, weibull_scale(spec.timeshape, 1.0 / spec.load))


def apply_error(sizes: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Multiply each size by an independent log-normal(0, sigma^2) factor."""
    sizes = np.asarray(sizes, dtype=float)
    if sigma == 0:
        return sizes.copy()
    z = ndtri(uniform_open(rng, sizes.size))
    return sizes * np.exp(sigma * z)


def assign_weights(
    njobs: int, beta: float, classes: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Uniform class labels in 1..classes and weights ``1 / class**beta``."""
    labels = rng.integers(1, classes + 1, size=njobs)
    return labels, 1.0 / labels.astype(float) ** beta


def build_jobs(
    arrivals: Sequence[float],
    sizes: Sequence[float],
    estimates: Sequence[float] | None = None,
    weights: Sequence[float] | None = None,
) -> list[Job]:
    n = len(sizes)
    est = sizes if estimates is None else estimates
    w = np.ones(n) if weights is None else weights
    return [
        Job(i, float(arrivals[i]), float(sizes[i]), float(est[i]), float(w[i])) for i in range(n)
    ]


def generate(spec: WorkloadSpec) -> Workload:
    rngs = streams(spec.seed)
    sizes = gen_sizes(spec, rngs["sizes"])
    gaps = gen_inter_arrivals(spec, rngs["arrivals"])
    arrivals = np.concatenate(([0.0], np.cumsum(gaps[:-1])))
    estimates = apply_error(sizes, spec.sigma, rngs["errors"])
    labels, weights = assign_weights(
        spec.njobs, spec.weight_beta, spec.weight_classes, rngs["weights"]
    )
    return Workload(spec, build_jobs(arrivals, sizes, estimates, weights), labels)


def with_estimates(jobs: Iterable[Job], sigma: float, rng: np.random.Generator) -> list[Job]:
    """Fresh estimates for an existing job list (same arrivals and sizes)."""
    jobs = list(jobs)
    est = apply_error(np.array([j.size for j in jobs]), sigma, rng)
    return [Job(j.id, j.arrival, j.size, float(e), j.weight) for j, e in zip(jobs, est)]


_SPLIT = re.compile(r"[,\s]+")


def read_trace(path: str | Path) -> list[tuple[float, float, float]]:
    """Parse ``arrival size [weight]`` rows; ``#`` starts a comment."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            fields = [f for f in _SPLIT.split(line) if f]
            if len(fields) not in (2, 3):
                raise WorkloadError(f"{path}:{lineno}: expected 2 or 3 fields, got {len(fields)}")
            try:
                values = [float(f) for f in fields]
            except ValueError:
                raise WorkloadError(f"{path}:{lineno}: non-numeric field in {line!r}") from None
            if not all(math.isfinite(v) for v in values):
                raise WorkloadError(f"{path}:{lineno}: non-finite value")
            arrival, size = values[0], values[1]
            weight = values[2] if len(values) == 3 else 1.0
            if size <= 0 or weight <= 0:
                raise WorkloadError(f"{path}:{lineno}: size and weight must be positive")
            rows.append((arrival, size, weight))
    if not rows:
        raise WorkloadError(f"{path}: empty trace")
    return rows


def load_trace(path: str | Path, target_load: float = 0.9) -> list[Job]:
    """Read a trace and rescale sizes so the offered load is ``target_load``.

    The server speed is chosen as total size / (arrival span * target_load).
    """
    if not target_load > 0:
        raise WorkloadError(f"target load must be positive, got {target_load}")
    rows = read_trace(path)
    if any(a[0] > b[0] for a, b in zip(rows, rows[1:])):
        warnings.warn(f"{path}: rows not sorted by arrival; sorting", stacklevel=2)
        rows.sort(key=lambda r: r[0])
    span = rows[-1][0] - rows[0][0]
    if span <= 0:
        raise WorkloadError(f"{path}: arrivals span zero time; cannot normalize load")
    speed = sum(r[1] for r in rows) / (span * target_load)
    return [Job(i, a, s / speed, s / speed, w) for i, (a, s, w) in enumerate(rows)]


def write_trace(path: str | Path, jobs: Iterable[Job]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# arrival size weight\n")
        for j in jobs:
            fh.write(f"{j.arrival!r} {j.size!r} {j.weight!r}\n")
