from __future__ import annotations

import math

import pytest

from oracles import completions, jobs_from
from psbsim.engine import (
    ContractViolation,
    Job,
    Scheduler,
    Simulation,
    WorkloadError,
    project_next_completion,
    run_simulation,
)
from psbsim.registry import FACTORIES, make_scheduler


@pytest.mark.parametrize("name", sorted(FACTORIES))
def test_single_job_gets_dedicated_service(name):
    (rec,) = run_simulation(jobs_from((0, 5)), make_scheduler(name))
    assert rec.completion == pytest.approx(5.0)
    assert rec.slowdown == pytest.approx(1.0)


def test_srpt_small_job_preempts():
    recs = run_simulation(jobs_from((0, 10), (3, 2)), make_scheduler("srpt"))
    assert completions(recs) == pytest.approx([12.0, 5.0])


def test_srpt_without_preemption_keeps_arrival_order():
    # each arrival is larger than the remaining work in service
    seen = []

    def watch(t0, t1, alloc):
        seen.append(tuple(alloc))

    recs = run_simulation(jobs_from((0, 1), (0.5, 2), (1, 3)), make_scheduler("srpt"), observer=watch)
    assert completions(recs) == pytest.approx([1.0, 3.0, 6.0])
    served = [s[0] for s in seen if s]
    assert served == sorted(served)


def test_project_next_completion_examples():
    assert project_next_completion({7: 4.0}, {7: 0.5}, now=10.0) == (18.0, 7)
    assert project_next_completion({0: 4.0, 1: 1.0}, {0: 0.5, 1: 0.5}) == (2.0, 1)
    assert project_next_completion({0: 3.0, 1: 3.0, 2: 3.0}, {i: 1 / 3 for i in range(3)}) == (
        pytest.approx(9.0),
        0,
    )
    assert project_next_completion({}, {}) is None
    assert project_next_completion({0: 1.0}, {0: 0.0}) is None


@pytest.mark.parametrize(
    "jobs",
    [
        [Job(0, 1.0, 1.0, 1.0), Job(1, 0.0, 1.0, 1.0)],
        [Job(0, 0.0, 0.0, 1.0)],
        [Job(0, 0.0, 1.0, -1.0)],
        [Job(0, 0.0, 1.0, 1.0, 0.0)],
        [Job(0, 0.0, 1.0, 1.0), Job(0, 1.0, 1.0, 1.0)],
        [Job(-1, 0.0, 1.0, 1.0)],
        [Job(0, math.nan, 1.0, 1.0)],
    ],
)
def test_malformed_workloads_rejected(jobs):
    with pytest.raises(WorkloadError):
        run_simulation(jobs, make_scheduler("ps"))


class _Ghost(Scheduler):
    """Gives the server to a job that does not exist."""

    name = "ghost"

    def on_arrival(self, t, job):
        pass

    def on_real_completion(self, t, job_id):
        pass

    def current_allocation(self):
        return {99: 1.0}


class _Idle(Scheduler):
    name = "idle"

    def on_arrival(self, t, job):
        pass

    def on_real_completion(self, t, job_id):
        pass

    def current_allocation(self):
        return {}


@pytest.mark.parametrize("sched", [_Ghost, _Idle])
def test_contract_violations_fail_fast(sched):
    with pytest.raises(ContractViolation):
        run_simulation(jobs_from((0, 1)), sched())


def test_work_conservation_and_causality():
    jobs = jobs_from((0, 3), (0.5, 1), (0.5, 2), (4, 0.5), (10, 1))
    for name in FACTORIES:
        busy = 0.0
        served: dict[int, list[tuple[float, float]]] = {}

        def watch(t0, t1, alloc):
            nonlocal busy
            busy += sum(alloc.values()) * (t1 - t0)
            for jid, share in alloc.items():
                if share > 0:
                    served.setdefault(jid, []).append((t0, t1))

        recs = run_simulation(jobs, make_scheduler(name), observer=watch)
        assert busy == pytest.approx(sum(j.size for j in jobs), rel=1e-9), name
        for r in recs:
            for t0, t1 in served[r.job_id]:
                assert t0 >= r.arrival - 1e-12 and t1 <= r.completion + 1e-12, name


def test_deterministic():
    jobs = jobs_from((0, 3, 1), (0.5, 1, 2), (0.5, 2, 2.5), (1, 0.5, 0.1))
    for name in FACTORIES:
        a = run_simulation(jobs, make_scheduler(name))
        b = run_simulation(jobs, make_scheduler(name))
        assert a == b


def test_simulation_steps_and_drains():
    sim = Simulation(make_scheduler("ps"))
    sim.add(Job(0, 0.0, 2.0, 2.0))
    assert sim.advance_to(1.0) == []
    assert sim.remaining[0] == pytest.approx(1.0)
    sim.add(Job(1, 1.0, 1.0, 1.0))
    assert sim.next_event_time() == pytest.approx(3.0)
    done = sim.drain()
    assert [j for j, _ in done] == [0, 1]
    assert [t for _, t in done] == pytest.approx([3.0, 3.0])
    with pytest.raises(WorkloadError):
        sim.add(Job(0, 3.0, 1.0, 1.0))


def test_simultaneous_arrival_and_completion():
    # job 1 arrives exactly when job 0 finishes
    recs = run_simulation(jobs_from((0, 1), (1, 1), (1, 1)), make_scheduler("fifo"))
    assert completions(recs) == pytest.approx([1.0, 2.0, 3.0])
