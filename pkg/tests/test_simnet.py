import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ods.errors import ParameterDomainError, ValidationError
from ods.params import ParamVector
from ods.simnet import (Dataset, LinkModel, LoadProfile, Scenario, command_time, effective_throughput,
                        generate_logs, simulate_transfer, steady_throughput)

from oracles import throughput_ref

REF = LinkModel(capacity=1000, rtt=100, buffer=125_000, command_rtt=25, overload_threshold=64, loss_coeff=0.05)


def test_single_stream_is_window_limited():
    assert effective_throughput(REF, ParamVector(1, 1, 1), 0) == pytest.approx(10.0)


def test_huge_buffer_hits_capacity():
    big = LinkModel(capacity=1000, rtt=100, buffer=12_500_000, overload_threshold=64, loss_coeff=0.05)
    assert effective_throughput(big, ParamVector(1, 1, 1), 0) == pytest.approx(1000.0)


def test_stream_sweep_golden():
    # hand-derived: 10 Mbps per stream until the overload threshold at S = 64
    vals = {s: effective_throughput(REF, ParamVector(s, 1, 1), 10) for s in range(1, 129)}
    s_star = max(vals, key=vals.get)
    assert s_star == 64
    assert vals[s_star] == pytest.approx(640.0)


@given(cc=st.integers(1, 40), p=st.integers(1, 40), bg=st.integers(0, 500),
       thr=st.integers(1, 200), coeff=st.floats(0, 0.5))
def test_throughput_matches_longhand(cc, p, bg, thr, coeff):
    link = LinkModel(capacity=1000, rtt=80, buffer=200_000, overload_threshold=thr, loss_coeff=coeff)
    got = effective_throughput(link, ParamVector(cc, p, 1), bg)
    assert got == pytest.approx(throughput_ref(1000, 80, 200_000, thr, coeff, cc * p, bg), rel=1e-12)
    assert 0 < got <= 1000


def test_invalid_params_rejected():
    with pytest.raises(ParameterDomainError):
        ParamVector(0, 1, 1)
    with pytest.raises(ParameterDomainError):
        effective_throughput(REF, (1, -2, 1), 0)


def test_link_invariants():
    with pytest.raises(ValidationError) as ei:
        LinkModel(capacity=0, rtt=-1, buffer=1)
    assert set(ei.value.fields) >= {"capacity", "rtt"}


def test_one_gigabyte_takes_eight_seconds():
    link = LinkModel(capacity=1000, rtt=100, buffer=10**9, command_rtt=0)
    out = simulate_transfer(link, LoadProfile(), Dataset((("g", 10**9),)), ParamVector(), 64 * 2**20)
    assert out.duration == pytest.approx(8.0)
    assert out.avg_throughput == pytest.approx(1000.0)


def test_empty_file_costs_setup_commands_only():
    out = simulate_transfer(REF, LoadProfile(), Dataset((("z", 0),)), ParamVector(), 4 * 2**20)
    assert out.duration == pytest.approx(3 * 0.025)
    assert out.avg_throughput == 0.0


def test_pipelining_monotone_for_small_files():
    link = LinkModel(capacity=1000, rtt=100, buffer=125_000, command_rtt=50)
    ds = Dataset.uniform(1000, 10_000)
    durs = [simulate_transfer(link, LoadProfile(), ds, ParamVector(1, 1, pp), 1024).duration
            for pp in (1, 2, 4, 8, 16, 32)]
    # oracle: per-file commands = 3 + ceil(10000/1024) = 13, so ceil(13/pp) rounds
    rounds = [math.ceil(13 / pp) for pp in (1, 2, 4, 8, 16, 32)]
    data = 1000 * 10_000 * 8 / 10e6
    for d, r in zip(durs, rounds):
        assert d == pytest.approx(data + 1000 * r * 0.05)
    assert durs[0] > durs[1] > durs[2] > durs[3] > durs[4]


@given(st.lists(st.integers(0, 5_000_000), min_size=1, max_size=30), st.integers(1, 6), st.integers(1, 8))
def test_outcome_invariants(sizes, cc, pp):
    ds = Dataset(tuple((f"f{i}", s) for i, s in enumerate(sizes)))
    out = simulate_transfer(REF, LoadProfile.constant(3), ds, ParamVector(cc, 2, pp), 1 << 20)
    if out.duration > 0:
        assert out.avg_throughput == pytest.approx(sum(sizes) * 8 / out.duration / 1e6, rel=1e-9)
    for _, s, e in out.per_file_times:
        assert 0 <= s <= e <= out.duration + 1e-12


def test_load_step_reevaluated_at_file_boundaries():
    ds = Dataset.uniform(4, 50_000_000)
    flat = simulate_transfer(REF, LoadProfile.constant(0), ds, ParamVector(1, 8, 1))
    step = simulate_transfer(REF, LoadProfile.step(0, 200, 1.0), ds, ParamVector(1, 8, 1))
    first = flat.per_file_times[0]
    assert step.per_file_times[0] == pytest.approx(first)   # starts before the step
    assert step.duration > flat.duration


def test_steady_throughput_is_many_file_limit():
    ds = Dataset.uniform(3000, 2_000_000)
    params = ParamVector(4, 3, 2)
    sim = simulate_transfer(REF, LoadProfile.constant(5), ds, params).avg_throughput
    steady = steady_throughput(REF, params, 5, ds.avg_file_size)
    assert sim == pytest.approx(steady, rel=2e-3)


def test_command_time():
    assert command_time(10 * 2**20, 4 * 2**20, 2, 40) == pytest.approx(3 * 0.04)


def test_generate_logs_deterministic_and_noisy():
    grid = [ParamVector(c, 1, 1) for c in (1, 2, 4)]
    a = generate_logs([REF], [LoadProfile.constant(10, "peak")], [Dataset.uniform(5, 10**6)], grid, seed=7)
    b = generate_logs([REF], [LoadProfile.constant(10, "peak")], [Dataset.uniform(5, 10**6)], grid, seed=7)
    assert a == b
    assert {r.load_regime for r in a} == {"peak"}
    for r in a:
        truth = simulate_transfer(REF, LoadProfile.constant(10), Dataset.uniform(5, 10**6), r.params).avg_throughput
        assert abs(r.observed_throughput / truth - 1) <= 0.02


def test_scenario_round_trip(tmp_path):
    sc = Scenario(REF, LoadProfile.step(0, 4, 2.0), Dataset.uniform(3, 1000), ParamVector(2, 2, 2), 512)
    path = tmp_path / "s.json"
    path.write_text(json.dumps(sc.to_dict()))
    again = Scenario.from_file(path)
    assert again == sc
    assert again.run().duration == sc.run().duration
