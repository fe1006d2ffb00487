"""Size-oblivious policies (FIFO, PS, DPS, LAS) and the SRPT family.

The ``*_allocation`` functions are the pure allocation rules; the scheduler
classes keep the state needed to evaluate them incrementally.
"""

from __future__ import annotations

import heapq
from collections import deque
from collections.abc import Iterable, Mapping
from dataclasses import dataclass

from .engine import EPS, Allocation, Job, Scheduler


def _tol(x: float) -> float:
    return EPS * max(1.0, abs(x))


def fifo_allocation(pending: Iterable[tuple[int, float]]) -> Allocation:
    """Whole server to the earliest arrival; ``pending`` holds (id, arrival)."""
    best = min(pending, key=lambda p: (p[1], p[0]), default=None)
    return {} if best is None else {best[0]: 1.0}


def ps_allocation(pending: Iterable[int]) -> Allocation:
    ids = list(pending)
    if not ids:
        return {}
    share = 1.0 / len(ids)
    return {jid: share for jid in ids}


def dps_allocation(weights: Mapping[int, float]) -> Allocation:
    total = sum(weights.values())
    return {jid: w / total for jid, w in weights.items()}


def las_allocation(attained: Mapping[int, float]) -> tuple[Allocation, float | None]:
    """Equal shares among the least-attained jobs.

    Also returns how long until the served group catches up with the next
    distinct attained level (``None`` when every job is already served).
    """
    if not attained:
        return {}, None
    low = min(attained.values())
    cut = low + _tol(low)
    group = [jid for jid, a in attained.items() if a <= cut]
    above = [a for a in attained.values() if a > cut]
    share = 1.0 / len(group)
    alloc = {jid: share for jid in group}
    if not above:
        return alloc, None
    return alloc, (min(above) - low) * len(group)


@dataclass(slots=True)
class SrpteJobState:
    job_id: int
    estimated_remaining: float
    arrival: float
    weight: float = 1.0

    @property
    def late(self) -> bool:
        return self.estimated_remaining <= 0.0

    def key(self) -> tuple[float, float, int]:
        return (self.estimated_remaining, self.arrival, self.job_id)


def srpte_allocation(states: Iterable[SrpteJobState]) -> Allocation:
    best = min(states, key=SrpteJobState.key, default=None)
    return {} if best is None else {best.job_id: 1.0}


def _srpte_eligible(states: Iterable[SrpteJobState]) -> list[SrpteJobState]:
    states = list(states)
    late = [s for s in states if s.late]
    fresh = [s for s in states if not s.late]
    if not late:
        return [min(fresh, key=SrpteJobState.key)] if fresh else []
    if fresh:
        late.append(min(fresh, key=SrpteJobState.key))
    return late


def srpte_ps_allocation(states: Iterable[SrpteJobState]) -> Allocation:
    return ps_allocation(s.job_id for s in _srpte_eligible(states))


def srpte_las_allocation(
    states: Iterable[SrpteJobState], attained: Mapping[int, float]
) -> Allocation:
    eligible = _srpte_eligible(states)
    return las_allocation({s.job_id: attained[s.job_id] for s in eligible})[0]


class FIFO(Scheduler):
    name = "fifo"

    def __init__(self) -> None:
        self.queue: deque[int] = deque()
        self._alloc: Allocation = {}

    def on_arrival(self, t: float, job: Job) -> None:
        self.queue.append(job.id)
        if len(self.queue) == 1:
            self._alloc = {job.id: 1.0}

    def on_real_completion(self, t: float, job_id: int) -> None:
        if not self.queue or self.queue[0] != job_id:
            raise RuntimeError(f"fifo: completion of {job_id} which is not in service")
        self.queue.popleft()
        self._alloc = {self.queue[0]: 1.0} if self.queue else {}

    def current_allocation(self) -> Allocation:
        return self._alloc


class PS(Scheduler):
    name = "ps"

    def __init__(self) -> None:
        self.pending: dict[int, None] = {}
        self._alloc: Allocation = {}

    def on_arrival(self, t: float, job: Job) -> None:
        self.pending[job.id] = None
        self._alloc = ps_allocation(self.pending)

    def on_real_completion(self, t: float, job_id: int) -> None:
        del self.pending[job_id]
        self._alloc = ps_allocation(self.pending)

    def current_allocation(self) -> Allocation:
        return self._alloc


class DPS(Scheduler):
    name = "dps"

    def __init__(self) -> None:
        self.weights: dict[int, float] = {}
        self._alloc: Allocation = {}

    def on_arrival(self, t: float, job: Job) -> None:
        self.weights[job.id] = job.weight
        self._alloc = dps_allocation(self.weights)

    def on_real_completion(self, t: float, job_id: int) -> None:
        del self.weights[job_id]
        self._alloc = dps_allocation(self.weights) if self.weights else {}

    def current_allocation(self) -> Allocation:
        return self._alloc


class _Attained(Scheduler):
    """Mixin state: integrates the scheduler's own allocation over time."""

    def __init__(self) -> None:
        self.attained: dict[int, float] = {}
        self._t = 0.0
        self._alloc: Allocation = {}

    def _advance(self, t: float) -> None:
        dt = t - self._t
        if dt > 0.0:
            att = self.attained
            for jid, share in self._alloc.items():
                att[jid] += share * dt
            self._t = t

    def current_allocation(self) -> Allocation:
        return self._alloc


class LAS(_Attained):
    name = "las"

    def __init__(self) -> None:
        super().__init__()
        self._catch_up: float | None = None

    def _refresh(self) -> None:
        self._alloc, dt = las_allocation(self.attained)
        self._catch_up = None if dt is None else self._t + dt

    def on_arrival(self, t: float, job: Job) -> None:
        self._advance(t)
        self.attained[job.id] = 0.0
        self._refresh()

    def on_real_completion(self, t: float, job_id: int) -> None:
        self._advance(t)
        del self.attained[job_id]
        self._refresh()

    def next_internal_event(self) -> float | None:
        return self._catch_up

    def on_internal_event(self, t: float) -> None:
        self._advance(t)
        self._refresh()


class SRPTE(_Attained):
    """SRPT driven by estimated sizes, optionally with the late-job fix.

    ``late_policy`` is ``None`` for plain SRPTE, or ``"ps"``/``"las"`` to
    share the server among all late jobs plus the best non-late one.
    With ``exact=True`` the true size is used, which gives SRPT.
    """

    def __init__(self, late_policy: str | None = None, *, exact: bool = False) -> None:
        super().__init__()
        if late_policy not in (None, "ps", "las"):
            raise ValueError(f"unknown late policy {late_policy!r}")
        self.late_policy = late_policy
        self.exact = exact
        base = "srpt" if exact else "srpte"
        self.name = base if late_policy is None else f"{base}+{late_policy}"
        self.estimate: dict[int, float] = {}
        self.arrival: dict[int, float] = {}
        self.late: dict[int, None] = {}
        self.head: int | None = None
        self.waiting: list[tuple[float, float, int]] = []
        self._next: float | None = None

    def _key(self, jid: int) -> tuple[float, float, int]:
        return (self.estimate[jid] - self.attained[jid], self.arrival[jid], jid)

    def state(self, jid: int) -> SrpteJobState:
        return SrpteJobState(jid, self.estimate[jid] - self.attained[jid], self.arrival[jid])

    def _refresh(self) -> None:
        self._next = None
        head = self.head
        if not self.late:
            self._alloc = {} if head is None else {head: 1.0}
        else:
            eligible = list(self.late)
            if head is not None:
                eligible.append(head)
            if self.late_policy == "ps":
                self._alloc = ps_allocation(eligible)
            else:
                self._alloc, dt = las_allocation({j: self.attained[j] for j in eligible})
                if dt is not None:
                    self._next = self._t + dt
        if self.late_policy is not None and head is not None:
            share = self._alloc.get(head, 0.0)
            if share > 0.0:
                t_late = self._t + (self.estimate[head] - self.attained[head]) / share
                if self._next is None or t_late < self._next:
                    self._next = t_late

    def on_arrival(self, t: float, job: Job) -> None:
        self._advance(t)
        jid = job.id
        self.estimate[jid] = job.size if self.exact else job.estimated_size
        self.arrival[jid] = job.arrival
        self.attained[jid] = 0.0
        head = self.head
        if head is None:
            self.head = jid
        elif self._key(jid) < self._key(head):
            heapq.heappush(self.waiting, self._key(head))
            self.head = jid
        else:
            heapq.heappush(self.waiting, self._key(jid))
        self._refresh()

    def on_real_completion(self, t: float, job_id: int) -> None:
        self._advance(t)
        if job_id in self.late:
            del self.late[job_id]
        elif job_id == self.head:
            self.head = heapq.heappop(self.waiting)[2] if self.waiting else None
        else:
            raise RuntimeError(f"{self.name}: completion of {job_id} which is not served")
        del self.estimate[job_id], self.arrival[job_id], self.attained[job_id]
        self._refresh()

    def next_internal_event(self) -> float | None:
        return self._next

    def on_internal_event(self, t: float) -> None:
        self._advance(t)
        head = self.head
        if head is not None and self.estimate[head] - self.attained[head] <= _tol(
            self.estimate[head]
        ):
            self.late[head] = None
            self.head = heapq.heappop(self.waiting)[2] if self.waiting else None
        self._refresh()
