from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, islice
from typing import TYPE_CHECKING

from scipy.special import comb

from .errors import ConfigError

if TYPE_CHECKING:
    from collections.abc import Iterator, Sequence


@dataclass(frozen=True, slots=True)
class Segmentation:
    """A sequence cut into contiguous segments; `cuts` are the start indices of every segment but the first"""

    sequence: tuple[int, ...]
    cuts: tuple[int, ...] = ()

    def __post_init__(self):
        n = len(self.sequence)
        previous = 0
        for cut in self.cuts:
            if not previous < cut < n:
                raise ConfigError(f"Invalid cuts {self.cuts} for a sequence of {n}")
            previous = cut

    @classmethod
    def coarsest(cls, seq: Sequence[int]) -> Segmentation:
        return cls(tuple(seq))

    @classmethod
    def finest(cls, seq: Sequence[int]) -> Segmentation:
        return cls(tuple(seq), tuple(range(1, len(seq))))

    @property
    def segments(self) -> tuple[tuple[int, ...], ...]:
        if not self.sequence:
            return ()
        bounds = (0, *self.cuts, len(self.sequence))
        return tuple(self.sequence[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    def __len__(self) -> int:
        return len(self.cuts) + 1 if self.sequence else 0


def _iter_segmentations(seq: tuple[int, ...], max_segments: int, min_segments: int = 1) -> Iterator[Segmentation]:
    n = len(seq)
    if not n:
        if min_segments <= 1:
            yield Segmentation(seq)
        return
    for k in range(max(min_segments, 1), min(max_segments, n) + 1):
        for cuts in combinations(range(1, n), k - 1):
            yield Segmentation(seq, cuts)


def enumerate_segmentations(
    seq: Sequence[int], max_segments: int, max_candidates: int | None = None
) -> list[Segmentation]:
    """Segmentations with at most `max_segments` segments, coarsest first, cut subsets in lexicographic order"""
    if max_segments < 1:
        raise ConfigError(f"Invalid max_segments {max_segments}")
    if max_candidates is not None and max_candidates < 1:
        raise ConfigError(f"Invalid max_candidates {max_candidates}")
    return list(islice(_iter_segmentations(tuple(seq), max_segments), max_candidates))


def count_segmentations(n: int, max_segments: int) -> int:
    if n == 0:
        return 1
    return sum(int(comb(n - 1, k - 1, exact=True)) for k in range(1, min(max_segments, n) + 1))


def segmentation_pairs(
    fwd_seq: Sequence[int], bwd_seq: Sequence[int], max_segments: int
) -> Iterator[tuple[Segmentation, Segmentation]]:
    """
    Every (forward, backward) segmentation pair with at most `max_segments`
    segments per strand, by increasing larger segment count of the pair and in
    (forward, backward) enumeration order inside one count.

    A pair keeps its position when `max_segments` grows, so every prefix of
    this order is also a prefix of the order under a larger cap.
    """
    if max_segments < 1:
        raise ConfigError(f"Invalid max_segments {max_segments}")
    fwd_seq, bwd_seq = tuple(fwd_seq), tuple(bwd_seq)
    for k in range(1, min(max_segments, max(len(fwd_seq), len(bwd_seq), 1)) + 1):
        for fseg in _iter_segmentations(fwd_seq, k):
            for bseg in _iter_segmentations(bwd_seq, k, 1 if max(len(fseg), 1) == k else k):
                yield fseg, bseg
