"""Event-driven simulation of one preemptive server with unit capacity.

The engine owns the true remaining work of every job. Schedulers only see
arrivals (with estimated sizes), completion notifications and the passage
of time, and answer with an allocation: a mapping from pending job id to
the fraction of the server it receives until the next event.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass

EPS = 1e-9

Allocation = Mapping[int, float]
Observer = Callable[[float, float, Allocation], None]


class WorkloadError(ValueError):
    """Malformed workload handed to the simulator."""


class ContractViolation(RuntimeError):
    """A scheduler (or caller) broke the engine/scheduler contract."""


def completion_tolerance(size: float) -> float:
    return EPS * max(1.0, size)


@dataclass(frozen=True, slots=True)
class Job:
    id: int
    arrival: float
    size: float
    estimated_size: float
    weight: float = 1.0


@dataclass(frozen=True, slots=True)
class CompletionRecord:
    job_id: int
    arrival: float
    size: float
    completion: float
    sojourn: float
    slowdown: float

    @classmethod
    def for_job(cls, job: Job, completion: float) -> CompletionRecord:
        sojourn = completion - job.arrival
        return cls(job.id, job.arrival, job.size, completion, sojourn, sojourn / job.size)


class Scheduler:
    """Base class for policies driven by :class:`Simulation`.

    Subclasses must return a *new* mapping from :meth:`current_allocation`
    whenever the allocation changes; the engine may keep a reference to the
    previous one.
    """

    name = "scheduler"

    def on_arrival(self, t: float, job: Job) -> None:
        raise NotImplementedError

    def on_real_completion(self, t: float, job_id: int) -> None:
        raise NotImplementedError

    def next_internal_event(self) -> float | None:
        return None

    def on_internal_event(self, t: float) -> None:
        pass

    def current_allocation(self) -> Allocation:
        raise NotImplementedError


def project_next_completion(
    remaining: Mapping[int, float], allocation: Allocation, now: float = 0.0
) -> tuple[float, int] | None:
    """Earliest (time, job id) at which a served job runs out of work.

    Jobs without a positive share never complete; ties go to the lowest id.
    """
    best: tuple[float, int] | None = None
    for jid, share in allocation.items():
        if share <= 0.0:
            continue
        cand = (now + remaining[jid] / share, jid)
        if best is None or cand < best:
            best = cand
    return best


def validate_jobs(jobs: Sequence[Job]) -> None:
    seen: set[int] = set()
    last = -math.inf
    for job in jobs:
        if job.id in seen:
            raise WorkloadError(f"duplicate job id {job.id}")
        seen.add(job.id)
        if job.id < 0:
            raise WorkloadError(f"job id must be non-negative, got {job.id}")
        if not math.isfinite(job.arrival):
            raise WorkloadError(f"job {job.id}: non-finite arrival")
        if job.arrival < last:
            raise WorkloadError(f"job {job.id}: jobs must be sorted by arrival")
        last = job.arrival
        for field in ("size", "estimated_size", "weight"):
            value = getattr(job, field)
            if not (math.isfinite(value) and value > 0.0):
                raise WorkloadError(f"job {job.id}: {field} must be positive, got {value}")


class Simulation:
    """Steppable simulation: jobs may be injected at the current time.

    Used directly by :func:`run_simulation` and by schedulers that emulate a
    reference policy in virtual time.
    """

    def __init__(
        self,
        scheduler: Scheduler,
        *,
        validate: bool = True,
        observer: Observer | None = None,
        max_stalled_steps: int = 1_000_000,
    ) -> None:
        self.scheduler = scheduler
        self.now = 0.0
        self.jobs: dict[int, Job] = {}
        self.remaining: dict[int, float] = {}
        self.completed: dict[int, float] = {}
        self.validate = validate
        self.observer = observer
        self.max_stalled_steps = max_stalled_steps
        self._alloc: Allocation = {}
        self._next_completion = math.inf

    @property
    def pending(self) -> int:
        return len(self.remaining)

    @property
    def allocation(self) -> Allocation:
        return self._alloc

    def add(self, job: Job) -> None:
        """Inject ``job`` as arriving now."""
        if job.id in self.jobs:
            raise WorkloadError(f"duplicate job id {job.id}")
        self.jobs[job.id] = job
        self.remaining[job.id] = job.size
        self.scheduler.on_arrival(self.now, job)
        self._refresh()

    def next_event_time(self) -> float:
        ti = self.scheduler.next_internal_event()
        if ti is None or self._next_completion <= ti:
            return self._next_completion
        return ti if ti > self.now else self.now

    def advance_to(self, t: float) -> list[tuple[int, float]]:
        """Process every event up to and including ``t``; return completions."""
        done: list[tuple[int, float]] = []
        stalled = 0
        while True:
            te = self.next_event_time()
            if te > t or te == math.inf:
                break
            before = self.now
            self._step(te, done)
            if self.now > before:
                stalled = 0
            else:
                stalled += 1
                if stalled > self.max_stalled_steps:
                    raise ContractViolation(
                        f"{self.scheduler.name}: no progress at t={self.now}"
                    )
        self._integrate(t)
        return done

    def drain(self) -> list[tuple[int, float]]:
        return self.advance_to(math.inf) if self.remaining else []

    def _integrate(self, t: float) -> None:
        if t == math.inf:
            return
        dt = t - self.now
        if dt <= 0.0:
            return
        if self.observer is not None:
            self.observer(self.now, t, self._alloc)
        rem = self.remaining
        for jid, share in self._alloc.items():
            rem[jid] -= share * dt
        self.now = t

    def _step(self, te: float, done: list[tuple[int, float]]) -> None:
        self._integrate(te)
        rem = self.remaining
        finished = sorted(
            jid
            for jid, share in self._alloc.items()
            if share > 0.0 and rem[jid] <= completion_tolerance(self.jobs[jid].size)
        )
        sched = self.scheduler
        for jid in finished:
            del rem[jid]
            self.completed[jid] = self.now
            done.append((jid, self.now))
            sched.on_real_completion(self.now, jid)
        guard = 0
        while True:
            ti = sched.next_internal_event()
            if ti is None or ti > self.now:
                break
            sched.on_internal_event(self.now)
            guard += 1
            if guard > self.max_stalled_steps:
                raise ContractViolation(f"{sched.name}: internal events do not progress")
        self._refresh()

    def _refresh(self) -> None:
        alloc = self.scheduler.current_allocation()
        if self.validate and alloc is not self._alloc:
            self._check(alloc)
        self._alloc = alloc
        nxt = project_next_completion(self.remaining, alloc, self.now)
        self._next_completion = math.inf if nxt is None else nxt[0]

    def _check(self, alloc: Allocation) -> None:
        total = 0.0
        for jid, share in alloc.items():
            if jid not in self.remaining:
                raise ContractViolation(
                    f"{self.scheduler.name}: share for non-pending job {jid} at t={self.now}"
                )
            if not (-EPS <= share <= 1.0 + EPS):
                raise ContractViolation(f"{self.scheduler.name}: share {share} out of [0, 1]")
            total += share
        if total > 1.0 + EPS:
            raise ContractViolation(f"{self.scheduler.name}: shares sum to {total} > 1")
        if self.remaining and total < 1.0 - EPS:
            raise ContractViolation(
                f"{self.scheduler.name}: not work-conserving at t={self.now} (sum {total})"
            )


def run_simulation(
    jobs: Iterable[Job],
    scheduler: Scheduler,
    *,
    validate: bool = True,
    observer: Observer | None = None,
) -> list[CompletionRecord]:
    """Serve ``jobs`` under ``scheduler``; one record per job, in input order.

    Events at equal times are handled as: real completions (ascending id),
    scheduler-internal events, then arrivals (input order).
    """
    jobs = list(jobs)
    validate_jobs(jobs)
    sim = Simulation(scheduler, validate=validate, observer=observer)
    n = len(jobs)
    i = 0
    while i < n:
        t_arr = jobs[i].arrival
        sim.advance_to(t_arr)
        while i < n and jobs[i].arrival == t_arr:
            sim.add(jobs[i])
            i += 1
    sim.drain()
    if len(sim.completed) != n:
        raise ContractViolation(f"{scheduler.name}: {n - len(sim.completed)} jobs never completed")
    return [CompletionRecord.for_job(job, sim.completed[job.id]) for job in jobs]
