from __future__ import annotations

from dataclasses import dataclass

from .errors import InfeasibleError


@dataclass(frozen=True, slots=True)
class GpuRanges:
    front_range: tuple[int, int]
    back_range: tuple[int, int]

    @property
    def layers(self) -> int:
        return (self.front_range[1] - self.front_range[0]) + (self.back_range[1] - self.back_range[0])


@dataclass(frozen=True)
class FoldedLayout:
    """U-shaped placement: GPU k holds one layer range from each end of the model"""

    layers: int
    gpus: tuple[GpuRanges, ...]

    @property
    def p(self) -> int:
        return len(self.gpus)

    @property
    def layers_per_half_stage(self) -> int:
        return self.layers // (2 * self.p)

    def layers_on(self, device: int) -> int:
        return self.gpus[device].layers

    def block_layers(self, device: int) -> int:
        """Layers processed by one pipeline block on `device`"""
        return self.layers_per_half_stage


@dataclass(frozen=True)
class LinearLayout:
    """Contiguous placement of 1F1B and bidirectional pipelines: GPU k holds layers [k*L/p, (k+1)*L/p)"""

    layers: int
    ranges: tuple[tuple[int, int], ...]

    @property
    def p(self) -> int:
        return len(self.ranges)

    def layers_on(self, device: int) -> int:
        lo, hi = self.ranges[device]
        return hi - lo

    def block_layers(self, device: int) -> int:
        return self.layers_on(device)


def fold_layers(L: int, p: int) -> FoldedLayout:
    if L < 1 or p < 1:
        raise InfeasibleError(f"Invalid layer count {L} or stage count {p}")
    if L % (2 * p):
        raise InfeasibleError(f"Cannot fold {L} layers onto {p} stages: {L} is not divisible by 2p={2 * p}")
    c = L // (2 * p)
    gpus = tuple(GpuRanges((k * c, (k + 1) * c), (L - (k + 1) * c, L - k * c)) for k in range(p))
    return FoldedLayout(L, gpus)


def linear_layers(L: int, p: int) -> LinearLayout:
    if L < 1 or p < 1:
        raise InfeasibleError(f"Invalid layer count {L} or stage count {p}")
    if L % p:
        raise InfeasibleError(f"Cannot split {L} layers onto {p} stages evenly")
    c = L // p
    return LinearLayout(L, tuple((k * c, (k + 1) * c) for k in range(p)))
