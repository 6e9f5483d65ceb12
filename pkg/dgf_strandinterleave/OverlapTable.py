from __future__ import annotations

from typing import TYPE_CHECKING

from numpy import clip, zeros

from .errors import ConfigError, MissingProfileEntryError
from .OperatorClass import OperatorClass, class_codes

if TYPE_CHECKING:
    from collections.abc import Iterable, Iterator, Mapping

    from numpy.typing import NDArray

# tolerated measurement noise of ingested factors
oef_tolerance = 0.05

# midpoints of the measured 20-30% kernel slowdown and 10-20% launch interval growth
default_slowdown_factor = 0.25
default_launch_overhead_frac = 0.15


def oef(t_i: float, t_j: float, p_ij: float) -> float:
    """Overlap effectiveness: the share of the shorter operator hidden by running both together"""
    if t_i <= 0 or t_j <= 0:
        raise ConfigError(f"Solo times must be positive, got {t_i} and {t_j}")
    if p_ij < max(t_i, t_j):
        raise ConfigError(f"Impossible overlap: P={p_ij} is shorter than max({t_i}, {t_j})")
    return (t_i + t_j - p_ij) / min(t_i, t_j)


def overlapped_time(t_i: float, t_j: float, oef_val: float) -> float:
    if t_i <= 0 or t_j <= 0:
        raise ConfigError(f"Solo times must be positive, got {t_i} and {t_j}")
    if not 0.0 <= oef_val <= 1.0:
        raise ConfigError(f"Overlap factor must be within [0, 1], got {oef_val}")
    return t_i + t_j - oef_val * min(t_i, t_j)


def _pair_key(a: OperatorClass, b: OperatorClass) -> frozenset[OperatorClass]:
    return frozenset((a, b))


class SoloTimeTable:
    """Sequential execution time of every (operator class, shape) entry, microseconds"""

    __slots__ = ("_entries",)
    _entries: dict[tuple[OperatorClass, str], float]

    def __init__(self, entries: Mapping[tuple[OperatorClass | str, str], float] | None = None):
        self._entries = {}
        for (op_class, shape), t_us in (entries or {}).items():
            self.set(op_class, shape, t_us)

    def set(self, op_class: OperatorClass | str, shape: str, t_us: float) -> None:
        op_class = OperatorClass.parse(op_class)
        if not t_us > 0:
            raise ConfigError(f"Solo time of {op_class.name}[{shape}] must be positive, got {t_us}")
        self._entries[(op_class, str(shape))] = float(t_us)

    def get(self, op_class: OperatorClass, shape: str) -> float | None:
        return self._entries.get((op_class, shape))

    def lookup(self, op_class: OperatorClass, shape: str) -> float:
        try:
            return self._entries[(op_class, shape)]
        except KeyError as e:
            raise MissingProfileEntryError(f"No solo time for {op_class.name}[{shape}]") from e

    def items(self) -> Iterator[tuple[tuple[OperatorClass, str], float]]:
        return iter(sorted(self._entries.items(), key=lambda item: (item[0][0].name, item[0][1])))

    def classes(self) -> set[OperatorClass]:
        return {op_class for op_class, _ in self._entries}

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, SoloTimeTable) and self._entries == other._entries

    def __repr__(self) -> str:
        return f"SoloTimeTable({len(self._entries)} entries)"


class OverlapTable:
    """
    Pairwise overlap effectiveness factors plus the two interference parameters.

    Keys are unordered class pairs, so the table is symmetric by construction.
    Optional measured segment-pair times take precedence over the lane model.
    """

    __slots__ = ("_entries", "_slowdown_factor", "_launch_overhead_frac", "_segments")
    _entries: dict[frozenset[OperatorClass], float]
    _slowdown_factor: float
    _launch_overhead_frac: float
    _segments: dict[tuple[tuple[OperatorClass, ...], tuple[OperatorClass, ...]], float]

    def __init__(
        self,
        entries: Mapping[tuple[OperatorClass | str, OperatorClass | str], float] | None = None,
        *,
        slowdown_factor: float = default_slowdown_factor,
        launch_overhead_frac: float = default_launch_overhead_frac,
        segments: Iterable[tuple[Iterable[OperatorClass | str], Iterable[OperatorClass | str], float]] = (),
    ):
        if not 0.0 <= slowdown_factor <= 1.0:
            raise ConfigError(f"slowdown_factor must be within [0, 1], got {slowdown_factor}")
        if launch_overhead_frac < 0.0:
            raise ConfigError(f"launch_overhead_frac must be non-negative, got {launch_overhead_frac}")
        self._slowdown_factor = float(slowdown_factor)
        self._launch_overhead_frac = float(launch_overhead_frac)
        self._entries = {}
        for (a, b), value in (entries or {}).items():
            self.set(a, b, value)
        self._segments = {}
        for seg_a, seg_b, p_us in segments:
            key = (tuple(map(OperatorClass.parse, seg_a)), tuple(map(OperatorClass.parse, seg_b)))
            if not p_us > 0:
                raise ConfigError(f"Measured segment time must be positive, got {p_us}")
            self._segments[key] = float(p_us)

    def set(self, a: OperatorClass | str, b: OperatorClass | str, value: float) -> None:
        a, b = OperatorClass.parse(a), OperatorClass.parse(b)
        if not -oef_tolerance <= value <= 1.0 + oef_tolerance:
            raise ConfigError(f"OEF({a.name}, {b.name}) = {value} is outside [-0.05, 1.05]")
        self._entries[_pair_key(a, b)] = float(value)

    @property
    def slowdown_factor(self) -> float:
        return self._slowdown_factor

    @property
    def launch_overhead_frac(self) -> float:
        return self._launch_overhead_frac

    def get(self, a: OperatorClass, b: OperatorClass) -> float | None:
        return self._entries.get(_pair_key(a, b))

    def lookup(self, a: OperatorClass, b: OperatorClass) -> float:
        try:
            return self._entries[_pair_key(a, b)]
        except KeyError as e:
            raise MissingProfileEntryError(f"No overlap factor for the pair ({a.name}, {b.name})") from e

    def measured(self, seg_a: Iterable[OperatorClass], seg_b: Iterable[OperatorClass]) -> float | None:
        seg_a, seg_b = tuple(seg_a), tuple(seg_b)
        p_us = self._segments.get((seg_a, seg_b))
        return self._segments.get((seg_b, seg_a)) if p_us is None else p_us

    def segments(self) -> list[tuple[tuple[OperatorClass, ...], tuple[OperatorClass, ...], float]]:
        return [(a, b, p_us) for (a, b), p_us in self._segments.items()]

    def items(self) -> Iterator[tuple[tuple[OperatorClass, OperatorClass], float]]:
        pairs = []
        for key, value in self._entries.items():
            a, b = sorted(key, key=lambda c: c.name) if len(key) == 2 else (next(iter(key)),) * 2
            pairs.append(((a, b), value))
        return iter(sorted(pairs, key=lambda item: (item[0][0].name, item[0][1].name)))

    def with_interference(self, slowdown_factor: float, launch_overhead_frac: float) -> OverlapTable:
        return OverlapTable(
            {pair: value for pair, value in self.items()},
            slowdown_factor=slowdown_factor,
            launch_overhead_frac=launch_overhead_frac,
            segments=self.segments(),
        )

    def matrix(self) -> tuple[NDArray, NDArray]:
        """Dense (values, present) matrices indexed by class code, values clipped into [0, 1]"""
        n = len(class_codes)
        values = zeros((n, n), dtype="d")
        present = zeros((n, n), dtype="b")
        for (a, b), value in self.items():
            i, j = class_codes[a], class_codes[b]
            values[i, j] = values[j, i] = value
            present[i, j] = present[j, i] = 1
        clip(values, 0.0, 1.0, out=values)
        return values, present

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, OverlapTable)
            and self._entries == other._entries
            and self._slowdown_factor == other._slowdown_factor
            and self._launch_overhead_frac == other._launch_overhead_frac
            and self._segments == other._segments
        )

    def __repr__(self) -> str:
        return (
            f"OverlapTable({len(self._entries)} pairs, slowdown={self._slowdown_factor}, "
            f"launch={self._launch_overhead_frac})"
        )
