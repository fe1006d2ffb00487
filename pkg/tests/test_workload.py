from __future__ import annotations

import math

import numpy as np
import pytest

from psbsim.engine import WorkloadError, run_simulation
from psbsim.registry import make_scheduler
from psbsim.workload import (
    WorkloadSpec,
    apply_error,
    assign_weights,
    gen_inter_arrivals,
    gen_sizes,
    generate,
    load_trace,
    read_trace,
    streams,
    uniform_open,
    weibull_scale,
    write_trace,
)

N = 1_000_000


def rng(seed=0):
    return np.random.default_rng(seed)


def test_table_defaults():
    s = WorkloadSpec()
    assert (s.sigma, s.shape, s.timeshape, s.njobs, s.load) == (0.5, 0.25, 1.0, 10_000, 0.9)


def test_weibull_scale_closed_form():
    assert weibull_scale(0.25) == pytest.approx(1 / 24)
    assert weibull_scale(1.0) == pytest.approx(1.0)


@pytest.mark.parametrize("shape, rel", [(1.0, 0.01), (0.25, 0.05)])
def test_size_mean_is_one(shape, rel):
    x = gen_sizes(WorkloadSpec(shape=shape, njobs=N), rng(1))
    assert x.mean() == pytest.approx(1.0, rel=rel)


def test_light_tailed_sizes():
    x = gen_sizes(WorkloadSpec(shape=4.0, njobs=N), rng(2))
    assert x.std() / x.mean() < 0.3


def test_inter_arrivals():
    gaps = gen_inter_arrivals(WorkloadSpec(njobs=N), rng(3))
    assert gaps.mean() == pytest.approx(1 / 0.9, rel=0.01)
    gaps = gen_inter_arrivals(WorkloadSpec(load=0.5, njobs=N), rng(4))
    assert gaps.mean() == pytest.approx(2.0, rel=0.01)
    gaps = gen_inter_arrivals(WorkloadSpec(timeshape=0.125, njobs=N), rng(5))
    assert gaps.std() / gaps.mean() > 10


def test_uniform_open_stays_inside():
    u = uniform_open(rng(), 100_000)
    assert u.min() > 0.0 and u.max() < 1.0


def test_apply_error():
    s = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(apply_error(s, 0.0, rng()), s)
    x = apply_error(np.ones(N), 0.5, rng(6))
    assert np.median(np.log(x)) == pytest.approx(0.0, abs=0.01)
    assert np.log(x).std() == pytest.approx(0.5, rel=0.01)


def test_assign_weights():
    labels, w = assign_weights(1000, 0.0, 5, rng())
    assert np.all(w == 1.0) and set(labels) == {1, 2, 3, 4, 5}
    labels, w = assign_weights(1000, 2.0, 5, rng())
    assert np.allclose(w, 1.0 / labels**2)
    assert w[labels == 5][0] == pytest.approx(1 / 25)
    labels, w = assign_weights(1000, 1.0, 5, rng())
    assert w[labels == 2][0] == pytest.approx(0.5)


def test_generate_deterministic_and_streams_independent():
    a = generate(WorkloadSpec(njobs=500, seed=3))
    b = generate(WorkloadSpec(njobs=500, seed=3))
    assert a.jobs == b.jobs
    c = generate(WorkloadSpec(njobs=500, seed=3, sigma=2.0))
    assert np.array_equal(a.sizes, c.sizes)
    assert [j.arrival for j in a.jobs] == [j.arrival for j in c.jobs]
    assert not np.array_equal(a.estimates, c.estimates)
    assert a.jobs[0].arrival == 0.0
    assert generate(WorkloadSpec(njobs=500, seed=4)).jobs != a.jobs


def test_streams_are_distinct():
    r = streams(0)
    draws = {k: g.random() for k, g in r.items()}
    assert len(set(draws.values())) == 4


def test_empirical_load():
    w = generate(WorkloadSpec(njobs=100_000, seed=11))
    load = w.sizes.sum() / w.jobs[-1].arrival
    assert load == pytest.approx(0.9, rel=0.10)


def test_pareto_sizes():
    spec = WorkloadSpec(size_family="pareto", alpha=2.0, njobs=N)
    x = gen_sizes(spec, rng(7))
    assert x.min() > 0
    # Lomax(2) has unit mean but infinite variance, so the tolerance is loose
    assert x.mean() == pytest.approx(1.0, rel=0.1)
    assert np.median(x) == pytest.approx(math.sqrt(2) - 1, rel=0.01)


@pytest.mark.parametrize(
    "changes",
    [{"shape": 0.0}, {"load": 1.0}, {"load": 0.0}, {"timeshape": -1.0}, {"sigma": -0.1},
     {"njobs": 0}, {"size_family": "lognormal"}, {"weight_beta": -1.0}],
)
def test_invalid_spec(changes):
    with pytest.raises(WorkloadError):
        WorkloadSpec(**changes)


def test_load_trace_normalizes(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("0 9\n10, 9  # second job\n")
    jobs = load_trace(p, 0.9)
    assert [j.size for j in jobs] == pytest.approx([4.5, 4.5])
    assert [j.estimated_size for j in jobs] == pytest.approx([4.5, 4.5])


def test_load_trace_single_row(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("3 1\n")
    with pytest.raises(WorkloadError):
        load_trace(p)


def test_load_trace_sorts_with_warning(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("5 1\n0 1\n2 1 0.5\n")
    with pytest.warns(UserWarning):
        jobs = load_trace(p)
    assert [j.arrival for j in jobs] == [0.0, 2.0, 5.0]
    assert [j.weight for j in jobs] == [1.0, 0.5, 1.0]
    assert [j.id for j in jobs] == [0, 1, 2]


@pytest.mark.parametrize("text", ["", "# only\n", "1 2 3 4\n", "a 1\n", "0 -1\n", "0 1 0\n", "0 nan\n"])
def test_read_trace_errors(tmp_path, text):
    p = tmp_path / "t.txt"
    p.write_text(text)
    with pytest.raises(WorkloadError):
        read_trace(p)


def test_trace_round_trip(tmp_path):
    w = generate(WorkloadSpec(njobs=300, seed=5))
    p = tmp_path / "t.txt"
    write_trace(p, w.jobs)
    rows = read_trace(p)
    assert rows == [(j.arrival, j.size, j.weight) for j in w.jobs]
    # normalization to the workload's own empirical load is the identity
    span = w.jobs[-1].arrival
    back = load_trace(p, sum(j.size for j in w.jobs) / span)
    a = run_simulation([j for j in w.jobs], make_scheduler("srpt"))
    b = run_simulation(back, make_scheduler("srpt"))
    assert [r.sojourn for r in a] == pytest.approx([r.sojourn for r in b])
