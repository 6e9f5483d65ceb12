#!/usr/bin/env python

from dataclasses import replace
from json import dump

from matplotlib.pyplot import close, subplots
from numpy import allclose
from numpy.random import default_rng
from pytest import mark, raises

from dgf_strandinterleave.errors import ConfigError, InfeasibleError
from dgf_strandinterleave.FoldedLayout import fold_layers, linear_layers
from dgf_strandinterleave.PipelineSchedule import (
    Block,
    boundary_crossings,
    bubble_ratio,
    closed_form_bubble,
    idle_time_per_device,
    pp_comm_volume,
    schedule_to_rows,
    schedule_to_trace,
    validate_schedule,
)
from dgf_strandinterleave.PipelineSchedulers import schedule

_durations = {"F": 2.0, "B": 2.0, "SI": 4.0}
_uneven = {"F": 1.0, "B": 2.0, "SI": 3.0}
_disciplines = ("w_shape", "one_f_one_b", "bidirectional")
_grid = [(m, p) for p in range(1, 9) for m in range(1, 17)]


@mark.parametrize("discipline", _disciplines)
def test_schedule_valid(discipline):
    for m, p in _grid:
        sched = schedule(discipline, m, p, {"F": 1.0, "B": 2.0, "SI": 2.5})
        problems = validate_schedule(sched)
        assert problems == [], f"m={m}, p={p}: {problems[:3]}"


@mark.parametrize("m,p", ((6, 3), (2, 4), (4, 4), (1, 3)))
@mark.parametrize("discipline", _disciplines)
def test_schedule_valid_with_latency(discipline, m, p):
    sched = schedule(discipline, m, p, _durations, p2p_latency_us=0.5)
    assert validate_schedule(sched) == []


def test_w_pipeline_units():
    sched = schedule("w_shape", 12, 4, _durations)
    si = sorted((b for b in sched.blocks if b.kind == "SI"), key=lambda b: b.slot)
    assert (si[0].fwd_mb, si[0].bwd_mb) == (4, 0)
    assert si[0].device == 0
    assert len(si) == 8 * 7
    assert all(b.dur_us == _durations[b.kind] / 2 * b.span for b in sched.blocks)
    assert {b.device for b in sched.blocks if b.span == 2} == {3}
    assert {b.device for b in sched.blocks if b.half == "up"} == {0, 1, 2}

    for backward in (False, True):
        assert boundary_crossings(sched, 5, backward) == {(0, 1): 2, (1, 2): 2, (2, 3): 2}

    few = schedule("w_shape", 3, 4, {"F": 2.0, "B": 2.0})
    assert all(b.kind != "SI" for b in few.blocks)


def test_w_pipeline_single_micro_batch_single_device():
    sched = schedule("w_shape", 1, 1, _uneven)
    forward, backward = sorted(sched.blocks, key=lambda b: b.start_us)
    assert len(sched.blocks) == 2
    assert (forward.kind, forward.start_us, forward.dur_us, forward.span) == ("F", 0.0, 1.0, 2)
    assert (backward.kind, backward.start_us, backward.dur_us, backward.span) == ("B", 1.0, 2.0, 2)
    assert validate_schedule(sched) == []


def test_one_f_one_b_crossings():
    sched = schedule("one_f_one_b", 8, 4, _durations)
    assert boundary_crossings(sched, 3) == {(0, 1): 1, (1, 2): 1, (2, 3): 1}


def test_pp_comm_volume():
    for m, p in _grid:
        w = pp_comm_volume(schedule("w_shape", m, p, _durations), 100)
        ref = pp_comm_volume(schedule("one_f_one_b", m, p, _durations), 100)
        assert w["transfers"] == 4 * m * (p - 1), (m, p)
        assert ref["transfers"] == 2 * m * (p - 1), (m, p)
        assert w["bytes"] == 2 * ref["bytes"], (m, p)


def test_pp_comm_volume_single_stage():
    sched = schedule("w_shape", 4, 1, _durations)
    assert pp_comm_volume(sched, 100) == {"transfers": 0, "bytes": 0}


@mark.parametrize("durations", (_durations, _uneven))
def test_idle_parity(durations):
    for m, p in _grid:
        w = schedule("w_shape", m, p, durations)
        ref = schedule("one_f_one_b", m, p, durations)
        assert allclose(w.makespan_us, ref.makespan_us, rtol=1e-12, atol=1e-9), (m, p)
        assert allclose(idle_time_per_device(w).sum(), idle_time_per_device(ref).sum(), rtol=1e-12, atol=1e-9), (m, p)


@mark.parametrize("durations", (_durations, _uneven, {"F": 1.0, "B": 2.0, "SI": 2.5}))
def test_makespan(durations):
    F, B, SI = durations["F"], durations["B"], durations["SI"]
    for m, p in _grid:
        w = schedule("w_shape", m, p, durations)
        ref = schedule("one_f_one_b", m, p, durations)
        assert allclose(ref.makespan_us, (m + p - 1) * (F + B), rtol=1e-12, atol=0), (m, p)
        if m > p:
            assert allclose(w.makespan_us, p * (F + B) + (m - 1) * SI, rtol=1e-12, atol=0), (m, p)
        else:
            assert allclose(w.makespan_us, ref.makespan_us, rtol=1e-12, atol=0), (m, p)


def test_makespan_short_si():
    w = schedule("w_shape", 3, 2, {"F": 2.0, "B": 2.0, "SI": 3.0})
    assert allclose(w.makespan_us, 14.0, rtol=1e-12, atol=0)


@mark.parametrize("durations", ({"F": 2.0, "B": 2.0, "SI": 3.0}, {"F": 1.0, "B": 2.0, "SI": 2.2}))
def test_short_si_beats_one_f_one_b(durations):
    for p in range(1, 9):
        for m in range(2 * p, 2 * p + 5):
            w = schedule("w_shape", m, p, durations)
            ref = schedule("one_f_one_b", m, p, durations)
            assert w.makespan_us < ref.makespan_us, (m, p)


@mark.parametrize("durations", (_durations, {"F": 1.0, "B": 2.0, "SI": 2.2}, {"F": 3.0, "B": 5.0, "SI": 6.0}))
def test_steady_phase_runs_si_back_to_back(durations):
    """Between the first fused unit and the first pure backward every device runs SI blocks without gaps"""
    for p in range(1, 9):
        for m in range(2 * p, 2 * p + 6):
            sched = schedule("w_shape", m, p, durations)
            for device in range(p):
                blocks = sched.device_blocks(device)
                lo = max(b.end_us for b in blocks if b.fwd_mb == p)
                hi = min(b.start_us for b in blocks if b.kind == "B")
                window = [b for b in blocks if b.start_us >= lo - 1e-9 and b.end_us <= hi + 1e-9]
                if m > 2 * p:
                    assert window, (m, p, device)
                if not window:
                    continue
                assert all(b.kind == "SI" for b in window), (m, p, device)
                assert allclose([window[0].start_us, window[-1].end_us], [lo, hi], rtol=1e-12, atol=1e-9)
                for a, b in zip(window[:-1], window[1:]):
                    assert allclose(b.start_us, a.end_us, rtol=1e-12, atol=1e-9), (m, p, device)


def test_bubble_ratio():
    unit = {"F": 1.0, "B": 1.0}
    assert allclose(bubble_ratio(schedule("one_f_one_b", 8, 4, unit)), 6 / 22, rtol=1e-12, atol=0)
    for m in (1, 4, 9):
        assert bubble_ratio(schedule("one_f_one_b", m, 1, unit)) == 0.0
        assert bubble_ratio(schedule("w_shape", m, 1, {**unit, "SI": 2.0})) == 0.0


def test_bubble_ratio_uses_global_span():
    sched = schedule("one_f_one_b", 8, 4, {"F": 1.0, "B": 1.0})
    last = sched.device_blocks(3)
    # the last device is busy without a gap inside its own span
    assert allclose(last[-1].end_us - last[0].start_us, 16.0, rtol=1e-12, atol=0)
    assert allclose(idle_time_per_device(sched), [6.0] * 4, rtol=1e-12, atol=0)

    shifted = type(sched)(tuple(replace(b, start_us=b.start_us + 5.0) for b in sched.blocks), 8, 4, sched.discipline)
    assert allclose(bubble_ratio(shifted), bubble_ratio(sched), rtol=1e-12, atol=0)


def test_bidirectional():
    sched = schedule("bidirectional", 6, 4, _durations)
    assert sched.state_factor == 2
    assert {b.direction for b in sched.blocks} == {"down", "up"}
    ups = {b.fwd_mb for b in sched.blocks if b.direction == "up" and b.kind == "F"}
    assert ups == {3, 4, 5}


def test_closed_form_bubble():
    assert closed_form_bubble(8, 4) == {"p_minus_1_over_m": 3 / 8, "p_over_m_minus_1": 4 / 7}
    assert closed_form_bubble(1, 4)["p_over_m_minus_1"] == float("inf")


def test_schedule_errors():
    with raises(ConfigError):
        schedule("zigzag", 4, 2, _durations)
    with raises(ConfigError):
        schedule("w_shape", 0, 2, _durations)
    with raises(ConfigError, match="SI"):
        schedule("w_shape", 4, 2, {"F": 1.0, "B": 1.0})
    with raises(ConfigError):
        schedule("one_f_one_b", 4, 2, {"F": 1.0, "B": 0.0})
    with raises(ConfigError):
        Block(0, "SI", 1, None, "down", 0.0, 1.0)
    with raises(ConfigError):
        Block(0, "X", 1, None, "down", 0.0, 1.0)
    with raises(ConfigError, match="span"):
        Block(0, "F", 1, None, "down", 0.0, 1.0, span=0)


def test_validate_detects_overlap():
    sched = schedule("one_f_one_b", 2, 2, _durations)
    first = sched.blocks[0]
    shifted = Block(first.device, first.kind, first.fwd_mb, first.bwd_mb, first.half, first.start_us + 0.5, first.dur_us)
    broken = type(sched)((shifted, *sched.blocks[1:]), sched.m, sched.p, sched.discipline)
    assert validate_schedule(broken)


def _pairwise_violation(sched) -> bool:
    """Brute-force check of the timing rules over every pair of blocks"""
    blocks = sched.blocks
    if any(b.start_us < 0 for b in blocks):
        return True
    for i, a in enumerate(blocks):
        for b in blocks[i + 1 :]:
            if a.device == b.device and a.start_us < b.end_us and b.start_us < a.end_us:
                return True
    runs = {}
    for b in blocks:
        for stage in b.stages:
            if b.fwd_mb is not None:
                runs[(b.fwd_mb, 0, stage)] = b
            if b.bwd_mb is not None:
                runs[(b.bwd_mb, 1, stage)] = b
    for mb in range(sched.m):
        chain = [runs[(mb, phase, stage)] for phase in (0, 1) for stage in range(sched.stages)]
        for producer, consumer in zip(chain[:-1], chain[1:]):
            if producer is consumer:
                continue
            latency = sched.p2p_latency_us if producer.device != consumer.device else 0.0
            if consumer.start_us < producer.end_us + latency:
                return True
    return False


@mark.parametrize("latency", (0.0, 0.5))
@mark.parametrize("discipline", _disciplines)
def test_validate_agrees_with_pairwise_check(discipline, latency):
    rng = default_rng(7)
    durations = {"F": 1.0, "B": 2.0, "SI": 2.5}
    broken = 0
    for m, p in ((6, 3), (3, 4), (9, 2)):
        sched = schedule(discipline, m, p, durations, p2p_latency_us=latency)
        assert not _pairwise_violation(sched)
        for _ in range(60):
            mutated = list(sched.blocks)
            for i in rng.integers(len(mutated), size=rng.integers(1, 3)):
                offset = float(rng.integers(-8, 9)) * 0.25
                mutated[i] = replace(mutated[i], start_us=mutated[i].start_us + offset)
            candidate = type(sched)(tuple(mutated), m, p, discipline, latency)
            expected = _pairwise_violation(candidate)
            broken += expected
            assert bool(validate_schedule(candidate)) == expected
    assert broken > 0


def test_fold_layers():
    layout = fold_layers(32, 4)
    assert (layout.gpus[0].front_range, layout.gpus[0].back_range) == ((0, 4), (28, 32))
    assert (layout.gpus[3].front_range, layout.gpus[3].back_range) == ((12, 16), (16, 20))
    assert layout.layers_per_half_stage == 4
    assert all(layout.layers_on(k) == 8 for k in range(4))
    covered = sorted(i for gpu in layout.gpus for lo, hi in (gpu.front_range, gpu.back_range) for i in range(lo, hi))
    assert covered == list(range(32))

    linear = linear_layers(32, 4)
    assert linear.ranges[1] == (8, 16)
    assert linear.block_layers(1) == 8


@mark.parametrize("L,p", ((30, 4), (28, 8), (0, 2), (8, 0)))
def test_fold_layers_infeasible(L, p):
    with raises(InfeasibleError):
        fold_layers(L, p)


def test_schedule_outputs(testname):
    sched = schedule("w_shape", 8, 4, _durations)
    trace = schedule_to_trace(sched)
    with open(f"output/{testname}.json", "w") as f:
        dump(trace, f)
    events = [event for event in trace["traceEvents"] if event["ph"] == "X"]
    assert len(events) == len(sched.blocks)
    assert {event["tid"] for event in events} == set(range(4))
    assert {event["args"]["span"] for event in events} == {1, 2}

    rows = schedule_to_rows(sched)
    assert len(rows) == len(sched.blocks)
    assert rows[0]["device"] == 0
    assert rows[0]["bwd_mb"] == ""


@mark.parametrize("discipline", _disciplines)
def test_schedule_plot(discipline, save_artifacts, testname):
    sched = schedule(discipline, 8, 4, _durations)
    if not save_artifacts:
        return
    colors = {"F": "tab:blue", "B": "tab:orange", "SI": "tab:green"}
    fig, ax = subplots(1, 1, figsize=(12, 3))
    for block in sched.blocks:
        ax.broken_barh([(block.start_us, block.dur_us)], (block.device - 0.4, 0.8), color=colors[block.kind])
        ax.text(block.start_us + block.dur_us / 2, block.device, block.label, ha="center", va="center", fontsize=5)
    ax.set_yticks(range(sched.p), [f"GPU {device}" for device in range(sched.p)])
    ax.invert_yaxis()
    ax.set_xlabel("time, us")
    ax.set_title(f"{discipline}: m=8, p=4, makespan {sched.makespan_us:g} us")
    fig.savefig(f"output/{testname}.pdf")
    close(fig)
