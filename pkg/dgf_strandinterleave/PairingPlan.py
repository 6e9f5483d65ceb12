from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

from numba import njit
from numpy import double, empty, int8, zeros
from scipy.special import comb

from .errors import ConfigError

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from numpy.typing import NDArray

    # P(fwd segment or None, bwd segment or None)
    CostFunction = Callable[[Any, Any], float]

_max_brute_force_segments = 14


@dataclass(frozen=True, slots=True)
class PairingPlan:
    """Monotone alignment of forward and backward segments; a step holds at most one segment per strand"""

    steps: tuple[tuple[int | None, int | None], ...]
    total_us: float
    step_us: tuple[float, ...] = ()

    def violations(self, n_f: int, n_b: int) -> list[str]:
        problems = []
        last_f, last_b = -1, -1
        for k, (i, j) in enumerate(self.steps):
            if i is None and j is None:
                problems.append(f"step {k} is empty")
            if i is not None:
                if i != last_f + 1:
                    problems.append(f"step {k}: forward segment {i} follows {last_f}")
                last_f = i
            if j is not None:
                if j != last_b + 1:
                    problems.append(f"step {k}: backward segment {j} follows {last_b}")
                last_b = j
        if last_f != n_f - 1:
            problems.append(f"forward segments covered up to {last_f}, expected {n_f - 1}")
        if last_b != n_b - 1:
            problems.append(f"backward segments covered up to {last_b}, expected {n_b - 1}")
        return problems

    @property
    def paired_steps(self) -> int:
        return sum(1 for i, j in self.steps if i is not None and j is not None)

    def to_dict(self) -> dict[str, Any]:
        return {
            "steps": [[i, j] for i, j in self.steps],
            "step_us": list(self.step_us),
            "total_us": self.total_us,
        }


def _step_costs(
    segs_f: Sequence[Any], segs_b: Sequence[Any], cost: CostFunction, barrier_us: float
) -> tuple[NDArray[double], NDArray[double], NDArray[double]]:
    n_f, n_b = len(segs_f), len(segs_b)
    solo_f = empty(n_f, dtype=double)
    solo_b = empty(n_b, dtype=double)
    paired = empty((n_f, n_b), dtype=double)
    for i, seg in enumerate(segs_f):
        solo_f[i] = cost(seg, None) + barrier_us
    for j, seg in enumerate(segs_b):
        solo_b[j] = cost(None, seg) + barrier_us
    for i, seg_f in enumerate(segs_f):
        for j, seg_b in enumerate(segs_b):
            paired[i, j] = cost(seg_f, seg_b) + barrier_us
    return solo_f, solo_b, paired


@njit(cache=True, nogil=True)
def _dp_fill(solo_f: NDArray[double], solo_b: NDArray[double], paired: NDArray[double]):
    """choice codes: 0 paired, 1 forward alone, 2 backward alone"""
    n_f, n_b = len(solo_f), len(solo_b)
    total = zeros((n_f + 1, n_b + 1), dtype=double)
    choice = zeros((n_f + 1, n_b + 1), dtype=int8)
    for i in range(n_f + 1):
        for j in range(n_b + 1):
            if i == 0 and j == 0:
                continue
            best = 0.0
            best_choice = -1
            if i > 0 and j > 0:
                best = total[i - 1, j - 1] + paired[i - 1, j - 1]
                best_choice = 0
            if i > 0:
                value = total[i - 1, j] + solo_f[i - 1]
                if best_choice < 0 or value < best:
                    best, best_choice = value, 1
            if j > 0:
                value = total[i, j - 1] + solo_b[j - 1]
                if best_choice < 0 or value < best:
                    best, best_choice = value, 2
            total[i, j] = best
            choice[i, j] = best_choice
    return total, choice


def dp_align(
    segs_f: Sequence[Any],
    segs_b: Sequence[Any],
    cost: CostFunction,
    barrier_us: float = 0.0,
) -> PairingPlan:
    """
    Minimum-makespan alignment of two segment lists.

    T(i, j) = min(T(i-1, j-1) + P(i, j), T(i-1, j) + P(i, -), T(i, j-1) + P(-, j)),
    ties resolved in that order. Every step also pays `barrier_us`.
    """
    solo_f, solo_b, paired = _step_costs(segs_f, segs_b, cost, barrier_us)
    total, choice = _dp_fill(solo_f, solo_b, paired)

    steps, step_us = [], []
    i, j = len(segs_f), len(segs_b)
    while i > 0 or j > 0:
        match int(choice[i, j]):
            case 0:
                i, j = i - 1, j - 1
                steps.append((i, j))
                step_us.append(paired[i, j])
            case 1:
                i -= 1
                steps.append((i, None))
                step_us.append(solo_f[i])
            case 2:
                j -= 1
                steps.append((None, j))
                step_us.append(solo_b[j])
            case code:
                raise RuntimeError(f"Invalid alignment choice {code} at ({i}, {j})")
    steps.reverse()
    step_us.reverse()
    return PairingPlan(tuple(steps), float(total[-1, -1]), tuple(float(t) for t in step_us))


def brute_force_align(
    segs_f: Sequence[Any],
    segs_b: Sequence[Any],
    cost: CostFunction,
    barrier_us: float = 0.0,
) -> PairingPlan:
    """Exhaustive minimum over every monotone alignment, for N_f + N_b <= 14"""
    n_f, n_b = len(segs_f), len(segs_b)
    if n_f + n_b > _max_brute_force_segments:
        raise ConfigError(f"Exhaustive alignment is limited to {_max_brute_force_segments} segments, got {n_f + n_b}")
    solo_f, solo_b, paired = _step_costs(segs_f, segs_b, cost, barrier_us)

    best: PairingPlan | None = None
    steps: list[tuple[int | None, int | None]] = []
    step_us: list[float] = []

    def visit(i: int, j: int, total: float) -> None:
        nonlocal best
        if i == n_f and j == n_b:
            if best is None or total < best.total_us:
                best = PairingPlan(tuple(steps), total, tuple(step_us))
            return
        moves = []
        if i < n_f and j < n_b:
            moves.append(((i, j), i + 1, j + 1, paired[i, j]))
        if i < n_f:
            moves.append(((i, None), i + 1, j, solo_f[i]))
        if j < n_b:
            moves.append(((None, j), i, j + 1, solo_b[j]))
        for step, next_i, next_j, step_cost in moves:
            steps.append(step)
            step_us.append(float(step_cost))
            visit(next_i, next_j, total + float(step_cost))
            steps.pop()
            step_us.pop()

    visit(0, 0, 0.0)
    return best


def count_alignments(n_f: int, n_b: int) -> int:
    """Number of monotone alignments of n_f and n_b segments (the Delannoy number)"""
    if n_f < 0 or n_b < 0:
        raise ConfigError(f"Invalid segment counts {n_f}, {n_b}")
    return sum(
        int(comb(n_f, k, exact=True)) * int(comb(n_b, k, exact=True)) * 2**k for k in range(min(n_f, n_b) + 1)
    )
