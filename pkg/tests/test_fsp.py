from __future__ import annotations

import numpy as np
import pytest

from oracles import completions, fsp_completions, items, jobs_from, random_instance
from psbsim.engine import ContractViolation, run_simulation
from psbsim.fsp import PSBS, OpCounter, PsbsState
from psbsim.registry import make_scheduler

WORKED = ((0, 10), (3, 5), (5, 2))


def test_worked_example_lag_trajectory():
    st = PsbsState()
    st.job_arrival(0.0, 1, 10.0, 1.0)
    assert st.g == 0.0 and st.O.peek() == (10.0, 1, 1.0)
    st.job_arrival(3.0, 2, 5.0, 1.0)
    assert st.g == pytest.approx(3.0)
    st.job_arrival(5.0, 3, 2.0, 1.0)
    assert st.g == pytest.approx(4.0)
    lags = sorted((e[1], e[0]) for e in st.O.items)
    assert lags == [(1, 10.0), (2, 8.0), (3, 6.0)]
    assert st.w_v == 3.0
    assert st.next_virtual_completion_time() == pytest.approx(11.0)
    assert st.process_job() == {3: 1.0}


def test_worked_example_full_run_never_uses_late_set():
    log: list = []
    sched = PSBS(exact=True, state=PsbsState(virtual_log=log), debug=True)
    late_seen = []
    recs = run_simulation(
        jobs_from(*WORKED), sched, observer=lambda *_: late_seen.append(bool(sched.state.L))
    )
    assert not any(late_seen)
    assert completions(recs) == pytest.approx([17.0, 10.0, 7.0])
    assert [j for j, _ in log] == [2, 1, 0]
    assert [t for _, t in log] == pytest.approx([11.0, 15.0, 17.0])


def test_worked_example_fsp_matches_oracle():
    jobs = jobs_from(*WORKED)
    recs = run_simulation(jobs, make_scheduler("fsp"))
    oracle = fsp_completions(items(jobs))
    assert completions(recs) == pytest.approx([float(oracle[j.id]) for j in jobs])
    assert completions(recs) == pytest.approx([17.0, 10.0, 7.0])


def test_fresh_state():
    st = PsbsState()
    assert (st.g, st.t, st.w_v, st.w_L) == (0.0, 0.0, 0.0, 0.0)
    assert st.next_virtual_completion_time() is None
    assert st.process_job() == {}


def test_update_virtual_time():
    st = PsbsState()
    st.update_virtual_time(4.0)
    assert st.g == 0.0 and st.t == 4.0
    with pytest.raises(ContractViolation):
        st.update_virtual_time(3.0)


def test_single_job_virtual_completion():
    st = PsbsState()
    st.job_arrival(2.5, 0, 4.0, 1.0)
    assert st.next_virtual_completion_time() == pytest.approx(6.5)


def test_virtual_completion_moves_running_job_to_late():
    st = PsbsState()
    st.job_arrival(0.0, 0, 1.0, 2.0)
    st.virtual_job_completion(st.next_virtual_completion_time())
    assert st.L == {0: 2.0} and st.w_L == 2.0 and st.w_v == 0.0
    assert st.process_job() == {0: 1.0}
    st.real_job_completion(0)
    assert st.L == {} and st.w_L == 0.0


def test_virtual_completion_of_early_job_is_silent():
    st = PsbsState()
    st.job_arrival(0.0, 0, 3.0, 1.0)
    st.job_arrival(0.0, 1, 5.0, 1.0)
    st.update_virtual_time(2.0)
    st.real_job_completion(0)
    assert st.E.peek() == (3.0, 0, 1.0) and st.O.peek() == (5.0, 1, 1.0)
    st.virtual_job_completion(st.next_virtual_completion_time())
    assert st.L == {} and st.w_v == 1.0
    assert len(st.E) == 0


def test_drain_empties_everything():
    st = PsbsState()
    st.job_arrival(0.0, 0, 1.0, 1.0)
    st.update_virtual_time(1.0)
    st.real_job_completion(0)
    st.virtual_job_completion(st.next_virtual_completion_time())
    assert len(st.O) == len(st.E) == len(st.L) == 0
    assert st.w_v == 0.0 and st.w_L == 0.0
    st.check()


def test_process_job_weights_late_jobs():
    st = PsbsState()
    st.L = {0: 1.0, 1: 3.0}
    st.w_L = 4.0
    assert st.process_job() == {0: 0.25, 1: 0.75}


def test_contract_errors():
    st = PsbsState()
    with pytest.raises(ContractViolation):
        st.virtual_job_completion(1.0)
    st.job_arrival(0.0, 0, 1.0, 1.0)
    with pytest.raises(ContractViolation):
        st.job_arrival(0.0, 0, 1.0, 1.0)
    with pytest.raises(ContractViolation):
        st.real_job_completion(7)
    with pytest.raises(ContractViolation):
        st.job_arrival(0.0, 1, 0.0, 1.0)


def test_counting_heaps_count():
    counter = OpCounter()
    st = PsbsState.counting(counter)
    for i in range(8):
        st.job_arrival(float(i), i, 10.0 - i, 1.0)
    assert counter.pushes == 8 and counter.comparisons > 0
    assert st.O.peek()[1] == 7


def test_psbs_late_jobs_share_by_weight():
    # both under-estimated; once both are late they share 3:1
    jobs = jobs_from((0, 4, 0.1, 3.0), (0, 4, 0.1, 1.0))
    segs = []
    run_simulation(jobs, PSBS(), observer=lambda a, b, al: segs.append(dict(al)))
    assert any(s == {0: 0.75, 1: 0.25} for s in segs)


def test_pri_single_job_and_fsp_order():
    for name in ("fsp", "pri:ps", "pri:las", "pri:dps", "pri:fifo"):
        (rec,) = run_simulation(jobs_from((1, 3)), make_scheduler(name))
        assert rec.completion == pytest.approx(4.0)
    recs = run_simulation(jobs_from(*WORKED), make_scheduler("pri:ps"))
    assert completions(recs) == pytest.approx([17.0, 10.0, 7.0])


def test_pri_las_dominates_las_on_random_instances():
    rng = np.random.default_rng(8)
    for _ in range(20):
        jobs = random_instance(rng, 8)
        a = run_simulation(jobs, make_scheduler("pri:las"))
        b = run_simulation(jobs, make_scheduler("las"))
        for x, y in zip(a, b):
            assert x.completion <= y.completion + 1e-9 * max(1.0, y.completion)


def test_fspe_underestimated_job_blocks():
    recs = run_simulation(jobs_from((0, 10, 1), (2, 1)), make_scheduler("fspe"))
    assert completions(recs) == pytest.approx([10.0, 11.0])


# job 1 is late from t=2, job 0 from t=3.5
TWO_LATE = ((0, 3, 3), (1, 5, 0.5))


@pytest.mark.parametrize(
    "name, expected",
    [("fspe", [8.0, 6.0]), ("fspe+ps", [7.5, 8.0]), ("fspe+las", [6.0, 8.0])],
)
def test_fspe_variants_with_two_late_jobs(name, expected):
    recs = run_simulation(jobs_from(*TWO_LATE), make_scheduler(name))
    assert completions(recs) == pytest.approx(expected)


def test_fspe_ps_three_late_jobs_share_equally():
    segs = []
    run_simulation(
        jobs_from((0, 5, 0.1), (0, 5, 0.1), (0, 5, 0.1)),
        make_scheduler("fspe+ps"),
        observer=lambda a, b, al: segs.append(dict(al)),
    )
    assert any(len(s) == 3 and all(v == pytest.approx(1 / 3) for v in s.values()) for s in segs)


def test_psbs_equals_fspe_ps_with_unit_weights():
    jobs = jobs_from(*TWO_LATE)
    a = completions(run_simulation(jobs, make_scheduler("psbs")))
    b = completions(run_simulation(jobs, make_scheduler("fspe+ps")))
    assert a == pytest.approx(b)
