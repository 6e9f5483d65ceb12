from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

from numba import njit
from numpy import array, double, full, int64, zeros

from .errors import MissingProfileEntryError
from .OperatorClass import Lane, class_codes, lane_codes

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray

    from .LayerDag import OpNode
    from .OverlapTable import OverlapTable, SoloTimeTable

_lanes_by_code = {code: lane for lane, code in lane_codes.items()}
_classes_by_code = {code: cls for cls, code in class_codes.items()}


@dataclass(frozen=True, slots=True)
class SegmentCost:
    p_us: float
    lane_breakdown: dict[Lane, float]
    saved_us: float = 0.0
    comm_us: float = 0.0


@njit(cache=True, nogil=True)
def _precedes(
    a_work: NDArray[double],
    a_lane: NDArray[int64],
    a_cls: NDArray[int64],
    ia: int,
    rem_a: float,
    b_work: NDArray[double],
    b_lane: NDArray[int64],
    b_cls: NDArray[int64],
    ib: int,
    rem_b: float,
) -> bool:
    """True if the remaining list of strand a is lexicographically not greater than that of b"""
    na, nb = len(a_work) - ia, len(b_work) - ib
    for k in range(min(na, nb)):
        wa = rem_a if k == 0 else a_work[ia + k]
        wb = rem_b if k == 0 else b_work[ib + k]
        if wa != wb:
            return wa < wb
        if a_lane[ia + k] != b_lane[ib + k]:
            return a_lane[ia + k] < b_lane[ib + k]
        if a_cls[ia + k] != b_cls[ib + k]:
            return a_cls[ia + k] < b_cls[ib + k]
    return na <= nb


@njit(cache=True, nogil=True)
def _lane_timeline(
    a_work: NDArray[double],
    a_lane: NDArray[int64],
    a_cls: NDArray[int64],
    b_work: NDArray[double],
    b_lane: NDArray[int64],
    b_cls: NDArray[int64],
    oef: NDArray[double],
    present: NDArray,
    slowdown: float,
    launch: float,
    busy: NDArray[double],
    missing: NDArray[int64],
) -> float:
    """
    Fluid three-lane timeline of two strands.

    returns: elapsed time, or -1 with `missing` set to the class codes of an absent pair
    """
    na, nb = len(a_work), len(b_work)
    ia, ib = 0, 0
    rem_a = a_work[0] if na else 0.0
    rem_b = b_work[0] if nb else 0.0
    elapsed = 0.0
    while True:
        while ia < na and rem_a <= 0.0:
            ia += 1
            rem_a = a_work[ia] if ia < na else 0.0
        while ib < nb and rem_b <= 0.0:
            ib += 1
            rem_b = b_work[ib] if ib < nb else 0.0
        active_a, active_b = ia < na, ib < nb
        if not active_a and not active_b:
            return elapsed

        run_a_alone = active_a and not active_b
        run_b_alone = active_b and not active_a
        if active_a and active_b and a_lane[ia] == b_lane[ib]:
            if _precedes(a_work, a_lane, a_cls, ia, rem_a, b_work, b_lane, b_cls, ib, rem_b):
                run_a_alone = True
            else:
                run_b_alone = True

        if run_a_alone:
            elapsed += rem_a
            busy[a_lane[ia]] += rem_a
            rem_a = 0.0
            continue
        if run_b_alone:
            elapsed += rem_b
            busy[b_lane[ib]] += rem_b
            rem_b = 0.0
            continue

        ca, cb = a_cls[ia], b_cls[ib]
        if not present[ca, cb]:
            missing[0] = ca
            missing[1] = cb
            return -1.0
        rate = 1.0 / ((2.0 - oef[ca, cb]) * (1.0 + slowdown))
        rate_a = rate / (1.0 + launch) if a_lane[ia] != 0 else rate
        rate_b = rate / (1.0 + launch) if b_lane[ib] != 0 else rate
        t_a = rem_a / rate_a
        t_b = rem_b / rate_b
        if t_a < t_b:
            dt = t_a
            rem_a = 0.0
            rem_b -= rate_b * dt
        elif t_b < t_a:
            dt = t_b
            rem_b = 0.0
            rem_a -= rate_a * dt
        else:
            dt = t_a
            rem_a = 0.0
            rem_b = 0.0
        elapsed += dt
        busy[a_lane[ia]] += dt
        busy[b_lane[ib]] += dt


class LaneCostModel:
    """
    Paired-segment execution cost P(i, j) on three lanes: compute, local and cross communication.

    Each strand runs its operators in order. Operators of different strands on
    different lanes run concurrently, both at the rate 1/((2-OEF)(1+slowdown)),
    communication additionally divided by (1+launch overhead). Operators
    competing for one lane serialize, the one with less remaining work first.
    """

    __slots__ = ("_overlap", "_solo", "_oef", "_present")
    _overlap: OverlapTable
    _solo: SoloTimeTable | None
    _oef: NDArray[double]
    _present: NDArray

    def __init__(self, overlap: OverlapTable, solo: SoloTimeTable | None = None):
        self._overlap = overlap
        self._solo = solo
        self._oef, self._present = overlap.matrix()

    @property
    def overlap(self) -> OverlapTable:
        return self._overlap

    def solo_time(self, node: OpNode) -> float:
        if self._solo is not None and (t_us := self._solo.get(node.op_class, node.shape)) is not None:
            return t_us
        return node.duration_us

    def _arrays(self, seg: Sequence[OpNode]) -> tuple[NDArray, NDArray, NDArray]:
        work = array([self.solo_time(node) for node in seg], dtype=double)
        lanes = array([lane_codes[node.lane] for node in seg], dtype=int64)
        classes = array([class_codes[node.op_class] for node in seg], dtype=int64)
        return work, lanes, classes

    def cost(self, seg_a: Sequence[OpNode], seg_b: Sequence[OpNode] = ()) -> SegmentCost:
        a_work, a_lane, a_cls = self._arrays(seg_a)
        b_work, b_lane, b_cls = self._arrays(seg_b)
        solo_sum = float(a_work.sum() + b_work.sum())
        comm_us = float(a_work[a_lane != 0].sum() + b_work[b_lane != 0].sum())

        busy = zeros(len(lane_codes), dtype=double)
        measured = None
        if len(seg_a) and len(seg_b):
            measured = self._overlap.measured(
                (node.op_class for node in seg_a), (node.op_class for node in seg_b)
            )
        if measured is not None:
            p_us = measured
            for work, lanes in ((a_work, a_lane), (b_work, b_lane)):
                for w, lane in zip(work, lanes):
                    busy[lane] += w
            busy[busy > p_us] = p_us
        else:
            missing = full(2, -1, dtype=int64)
            p_us = _lane_timeline(
                a_work,
                a_lane,
                a_cls,
                b_work,
                b_lane,
                b_cls,
                self._oef,
                self._present,
                self._overlap.slowdown_factor,
                self._overlap.launch_overhead_frac,
                busy,
                missing,
            )
            if p_us < 0:
                a, b = _classes_by_code[int(missing[0])], _classes_by_code[int(missing[1])]
                raise MissingProfileEntryError(f"No overlap factor for the encountered pair ({a.name}, {b.name})")

        return SegmentCost(
            p_us=float(p_us),
            lane_breakdown={_lanes_by_code[code]: float(busy[code]) for code in range(len(busy))},
            saved_us=solo_sum - float(p_us),
            comm_us=comm_us,
        )


def segment_pair_cost(
    seg_a: Sequence[OpNode],
    seg_b: Sequence[OpNode],
    tbl: OverlapTable,
    solo: SoloTimeTable | None = None,
) -> SegmentCost:
    """P(a, b) of two dependency-ordered segments; an empty `seg_b` gives the solo time of `seg_a`"""
    return LaneCostModel(tbl, solo).cost(seg_a, seg_b)
