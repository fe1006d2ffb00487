"""Policies that serve jobs in the order they finish in an emulated system.

:class:`Pri` runs any reference policy in virtual time (over estimated
sizes) and gives the real server to the pending job that completes first
there. With PS as reference this is FSP/FSPE; with exact sizes it dominates
the reference. :class:`PSBS` is the weighted O(log n) variant that tracks
virtual completions through a single virtual-lag counter.
"""

from __future__ import annotations

import copy
import heapq
import math
from collections.abc import Callable
from dataclasses import dataclass, field

from .engine import Allocation, ContractViolation, Job, Scheduler, Simulation
from .schedulers import PS, _Attained, dps_allocation, las_allocation, ps_allocation

LATE_POLICIES = (None, "ps", "las", "dps")


def _drain_order(virtual: Simulation) -> dict[int, float]:
    """Rank jobs by completion in a copy of ``virtual`` run without arrivals."""
    shadow = copy.deepcopy(virtual)
    return {jid: float(pos) for pos, (jid, _) in enumerate(shadow.drain())}


def _ps_order(virtual: Simulation) -> dict[int, float]:
    # under PS every job loses work at the same rate
    return dict(virtual.remaining)


class Pri(_Attained):
    """Serve the pending job that completes earliest in a virtual reference.

    Jobs that already completed in the virtual system but not in the real one
    are *late*. With ``late_policy=None`` they are served one at a time in
    virtual completion order; ``"ps"``, ``"las"`` and ``"dps"`` share the
    server among all of them instead.
    """

    def __init__(
        self,
        reference: Callable[[], Scheduler],
        *,
        late_policy: str | None = None,
        exact: bool = False,
        order: Callable[[Simulation], dict[int, float]] = _drain_order,
        name: str | None = None,
    ) -> None:
        super().__init__()
        if late_policy not in LATE_POLICIES:
            raise ValueError(f"unknown late policy {late_policy!r}")
        ref = reference()
        self.virtual = Simulation(ref, validate=False)
        self.late_policy = late_policy
        self.exact = exact
        self.order = order
        self.name = name or f"pri:{ref.name}"
        self.weights: dict[int, float] = {}
        self.late: dict[int, float] = {}
        self.virtual_completions: list[tuple[int, float]] = []
        self._queue: list[tuple[float, int]] = []
        self._catch_up: float | None = None

    def _rerank(self) -> None:
        ranks = self.order(self.virtual)
        self._queue = [(r, jid) for jid, r in ranks.items() if jid in self.weights]
        heapq.heapify(self._queue)

    def _front(self) -> int | None:
        q = self._queue
        while q and (q[0][1] not in self.weights or q[0][1] in self.late):
            heapq.heappop(q)
        return q[0][1] if q else None

    def _refresh(self) -> None:
        self._catch_up = None
        late = self.late
        if not late:
            front = self._front()
            self._alloc = {} if front is None else {front: 1.0}
        elif self.late_policy is None:
            self._alloc = {next(iter(late)): 1.0}
        elif self.late_policy == "ps":
            self._alloc = ps_allocation(late)
        elif self.late_policy == "dps":
            self._alloc = dps_allocation({j: self.weights[j] for j in late})
        else:
            self._alloc, dt = las_allocation({j: self.attained[j] for j in late})
            if dt is not None:
                self._catch_up = self._t + dt

    def on_arrival(self, t: float, job: Job) -> None:
        self._advance(t)
        self._absorb(self.virtual.advance_to(t))
        est = job.size if self.exact else job.estimated_size
        self.virtual.add(Job(job.id, job.arrival, est, est, job.weight))
        self.weights[job.id] = job.weight
        self.attained[job.id] = 0.0
        self._rerank()
        self._refresh()

    def on_real_completion(self, t: float, job_id: int) -> None:
        self._advance(t)
        del self.weights[job_id], self.attained[job_id]
        self.late.pop(job_id, None)
        self._refresh()

    def next_internal_event(self) -> float | None:
        tv = self.virtual.next_event_time()
        if tv == math.inf:
            return self._catch_up
        if self._catch_up is not None and self._catch_up < tv:
            return self._catch_up
        return tv

    def on_internal_event(self, t: float) -> None:
        self._advance(t)
        self._absorb(self.virtual.advance_to(t))
        self._refresh()

    def _absorb(self, done: list[tuple[int, float]]) -> None:
        for jid, vt in done:
            self.virtual_completions.append((jid, vt))
            if jid in self.weights:
                self.late[jid] = vt


def fsp(*, exact: bool = True) -> Pri:
    return Pri(PS, exact=exact, order=_ps_order, name="fsp" if exact else "fspe")


def fspe(late_policy: str | None = None) -> Pri:
    name = "fspe" if late_policy is None else f"fspe+{late_policy}"
    return Pri(PS, late_policy=late_policy, order=_ps_order, name=name)


class _Heap:
    __slots__ = ("items",)

    def __init__(self) -> None:
        self.items: list = []

    def __len__(self) -> int:
        return len(self.items)

    def push(self, entry: tuple[float, int, float]) -> None:
        heapq.heappush(self.items, entry)

    def pop(self) -> tuple[float, int, float]:
        return heapq.heappop(self.items)

    def peek(self) -> tuple[float, int, float]:
        return self.items[0]


class OpCounter:
    def __init__(self) -> None:
        self.comparisons = 0
        self.pushes = 0
        self.pops = 0


class _Counted:
    __slots__ = ("entry", "counter")

    def __init__(self, entry: tuple, counter: OpCounter) -> None:
        self.entry = entry
        self.counter = counter

    def __lt__(self, other: _Counted) -> bool:
        self.counter.comparisons += 1
        return self.entry < other.entry


class CountingHeap(_Heap):
    """Binary heap that counts element comparisons, pushes and pops."""

    __slots__ = ("counter",)

    def __init__(self, counter: OpCounter) -> None:
        super().__init__()
        self.counter = counter

    def push(self, entry: tuple[float, int, float]) -> None:
        self.counter.pushes += 1
        heapq.heappush(self.items, _Counted(entry, self.counter))

    def pop(self) -> tuple[float, int, float]:
        self.counter.pops += 1
        return heapq.heappop(self.items).entry

    def peek(self) -> tuple[float, int, float]:
        return self.items[0].entry


@dataclass
class PsbsState:
    """Scheduler state of PSBS.

    ``O`` holds jobs running in both the real and the virtual system, ``E``
    jobs already done in the real system but still running virtually; both
    are min-heaps of immutable ``(g_i, id, w_i)`` entries keyed by the
    virtual lag ``g_i`` at which the job finishes virtually. ``L`` maps late
    jobs to their weight.

    ``g`` grows by at most the sum of ``s_i / w_i`` over a run, so doubles
    keep ample relative precision at the scales simulated here.
    """

    g: float = 0.0
    t: float = 0.0
    O: _Heap = field(default_factory=_Heap)
    E: _Heap = field(default_factory=_Heap)
    L: dict[int, float] = field(default_factory=dict)
    w_L: float = 0.0
    w_v: float = 0.0
    virtual_log: list[tuple[int, float]] | None = None
    # ids still present in O, E or L
    members: set[int] = field(default_factory=set, repr=False)

    @classmethod
    def counting(cls, counter: OpCounter) -> PsbsState:
        return cls(O=CountingHeap(counter), E=CountingHeap(counter))

    def next_virtual_completion_time(self) -> float | None:
        g_hat = self._min_lag()
        if g_hat is None:
            return None
        return self.t + self.w_v * (g_hat - self.g)

    def update_virtual_time(self, t_hat: float) -> None:
        if t_hat < self.t:
            raise ContractViolation(f"virtual time moving backwards: {t_hat} < {self.t}")
        if self.w_v > 0.0:
            self.g += (t_hat - self.t) / self.w_v
        self.t = t_hat

    def virtual_job_completion(self, t_hat: float) -> None:
        g_hat = self._min_lag()
        if g_hat is None:
            raise ContractViolation("virtual completion with no job in the virtual system")
        self.update_virtual_time(t_hat)
        # rounding may leave g a hair below g_hat
        if self.g < g_hat:
            self.g = g_hat
        O, E = self.O, self.E
        if O.items and (not E.items or O.peek() <= E.peek()):
            _, jid, w = O.pop()
            self.L[jid] = w
            self.w_L += w
        else:
            _, jid, w = E.pop()
            self.members.discard(jid)
        self.w_v -= w
        if not O.items and not E.items:
            self.w_v = 0.0
        if self.virtual_log is not None:
            self.virtual_log.append((jid, t_hat))

    def real_job_completion(self, job_id: int) -> None:
        if self.L:
            try:
                w = self.L.pop(job_id)
            except KeyError:
                raise ContractViolation(f"job {job_id} completed but is not late") from None
            self.w_L = self.w_L - w if self.L else 0.0
            self.members.discard(job_id)
        else:
            if not self.O.items or self.O.peek()[1] != job_id:
                raise ContractViolation(f"job {job_id} completed but was not in service")
            self.E.push(self.O.pop())

    def job_arrival(self, t_hat: float, job_id: int, size: float, weight: float) -> None:
        if not (size > 0.0 and weight > 0.0):
            raise ContractViolation(f"job {job_id}: size and weight must be positive")
        if job_id in self.members:
            raise ContractViolation(f"duplicate job id {job_id}")
        self.members.add(job_id)
        self.update_virtual_time(t_hat)
        self.O.push((self.g + size / weight, job_id, weight))
        self.w_v += weight

    def process_job(self) -> Allocation:
        if self.L:
            w_L = self.w_L
            return {jid: w / w_L for jid, w in self.L.items()}
        if self.O.items:
            return {self.O.peek()[1]: 1.0}
        return {}

    def _min_lag(self) -> float | None:
        o, e = self.O.items, self.E.items
        if not o and not e:
            return None
        if not e:
            return self.O.peek()[0]
        if not o:
            return self.E.peek()[0]
        return min(self.O.peek()[0], self.E.peek()[0])

    def check(self) -> None:
        """Recompute weight sums and disjointness; raise on mismatch."""
        entries = list(_entries(self.O)) + list(_entries(self.E))
        w_v = sum(e[2] for e in entries)
        w_L = sum(self.L.values())
        ids = [e[1] for e in entries] + list(self.L)
        if len(ids) != len(set(ids)):
            raise ContractViolation("O, E and L overlap")
        if abs(w_v - self.w_v) > 1e-9 * max(1.0, w_v):
            raise ContractViolation(f"w_v drift: {self.w_v} vs {w_v}")
        if abs(w_L - self.w_L) > 1e-9 * max(1.0, w_L):
            raise ContractViolation(f"w_L drift: {self.w_L} vs {w_L}")


def _entries(heap: _Heap):
    for item in heap.items:
        yield item.entry if isinstance(item, _Counted) else item


class PSBS(Scheduler):
    name = "psbs"

    def __init__(
        self, *, exact: bool = False, state: PsbsState | None = None, debug: bool = False
    ) -> None:
        self.state = state if state is not None else PsbsState()
        self.exact = exact
        self.debug = debug
        self._alloc: Allocation = {}

    def _refresh(self) -> None:
        if self.debug:
            self.state.check()
        self._alloc = self.state.process_job()

    def on_arrival(self, t: float, job: Job) -> None:
        size = job.size if self.exact else job.estimated_size
        self.state.job_arrival(t, job.id, size, job.weight)
        self._refresh()

    def on_real_completion(self, t: float, job_id: int) -> None:
        self.state.real_job_completion(job_id)
        self._refresh()

    def next_internal_event(self) -> float | None:
        return self.state.next_virtual_completion_time()

    def on_internal_event(self, t: float) -> None:
        self.state.virtual_job_completion(t)
        self._refresh()

    def current_allocation(self) -> Allocation:
        return self._alloc
