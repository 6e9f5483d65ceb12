#!/usr/bin/env python

from time import perf_counter

from numpy.random import default_rng
from pytest import mark, raises

from dgf_strandinterleave.errors import ConfigError
from dgf_strandinterleave.PairingPlan import PairingPlan, brute_force_align, count_alignments, dp_align
from dgf_strandinterleave.Segmentation import (
    Segmentation,
    count_segmentations,
    enumerate_segmentations,
    segmentation_pairs,
)


def _random_costs(rng, n_f: int, n_b: int):
    solo_f = rng.uniform(0.5, 10.0, n_f)
    solo_b = rng.uniform(0.5, 10.0, n_b)
    paired = rng.uniform(0.3, 1.2, (n_f, n_b)) * (solo_f[:, None] + solo_b[None, :])

    def cost(i, j):
        if j is None:
            return float(solo_f[i])
        if i is None:
            return float(solo_b[j])
        return float(paired[i, j])

    return cost


def test_dp_equals_brute_force():
    rng = default_rng(20)
    start = perf_counter()
    for _ in range(200):
        n_f, n_b = rng.integers(1, 7, size=2)
        cost = _random_costs(rng, n_f, n_b)
        barrier = float(rng.choice((0.0, 0.5)))
        plan = dp_align(range(n_f), range(n_b), cost, barrier)
        oracle = brute_force_align(range(n_f), range(n_b), cost, barrier)
        assert plan.total_us == oracle.total_us
        assert plan.violations(n_f, n_b) == []
        assert len(plan.step_us) == len(plan.steps)
    assert perf_counter() - start < 10


def test_dp_prefers_pairing_on_ties():
    plan = dp_align((0,), (0,), lambda i, j: 1.0 if i is None or j is None else 2.0)
    assert plan.steps == ((0, 0),)
    assert plan.total_us == 2.0
    assert plan.paired_steps == 1


def test_dp_skips_bad_pairs():
    plan = dp_align((0, 1), (0,), lambda i, j: 1.0 if i is None or j is None else 5.0)
    assert plan.paired_steps == 0
    assert plan.total_us == 3.0
    assert plan.violations(2, 1) == []


def test_violations():
    assert PairingPlan(((1, 0), (0, None)), 0.0).violations(2, 1)
    assert PairingPlan(((None, None),), 0.0).violations(0, 0)
    assert PairingPlan(((0, 0),), 0.0).violations(2, 1)


@mark.parametrize("n_f,n_b,expected", ((0, 5, 1), (1, 1, 3), (2, 2, 13), (3, 3, 63), (4, 3, 129)))
def test_count_alignments(n_f, n_b, expected):
    assert count_alignments(n_f, n_b) == expected


def test_brute_force_limit():
    with raises(ConfigError):
        brute_force_align(range(8), range(7), lambda i, j: 1.0)


@mark.parametrize("n", (1, 2, 5, 8))
@mark.parametrize("max_segments", (1, 3, 6))
def test_segmentations(n, max_segments):
    seq = tuple(range(10, 10 + n))
    segmentations = enumerate_segmentations(seq, max_segments)
    assert len(segmentations) == count_segmentations(n, max_segments)
    assert len(set(segmentations)) == len(segmentations)
    assert segmentations[0] == Segmentation.coarsest(seq)
    for segmentation in segmentations:
        assert sum(segmentation.segments, ()) == seq
        assert 1 <= len(segmentation) <= max_segments
    if max_segments >= n:
        assert Segmentation.finest(seq) in segmentations
    assert len(enumerate_segmentations(seq, max_segments, 2)) == min(2, len(segmentations))


@mark.parametrize("n_f,n_b", ((1, 1), (3, 5), (6, 4), (0, 3)))
def test_segmentation_pairs(n_f, n_b):
    fwd, bwd = tuple(range(n_f)), tuple(range(100, 100 + n_b))
    previous: list = []
    for max_segments in range(1, 8):
        pairs = list(segmentation_pairs(fwd, bwd, max_segments))
        assert len(pairs) == count_segmentations(n_f, max_segments) * count_segmentations(n_b, max_segments)
        assert len(set(pairs)) == len(pairs)
        assert pairs[: len(previous)] == previous
        assert pairs[0] == (Segmentation.coarsest(fwd), Segmentation.coarsest(bwd))
        levels = [max(len(f), len(b), 1) for f, b in pairs]
        assert levels == sorted(levels)
        previous = pairs


def test_segmentation_invalid():
    with raises(ConfigError):
        Segmentation((1, 2, 3), (2, 1))
    with raises(ConfigError):
        Segmentation((1, 2, 3), (3,))
    with raises(ConfigError):
        enumerate_segmentations((1, 2), 0)
    with raises(ConfigError):
        next(segmentation_pairs((1, 2), (3,), 0))
