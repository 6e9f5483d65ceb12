from __future__ import annotations

from dataclasses import dataclass, replace
from logging import getLogger
from typing import TYPE_CHECKING

from .errors import ConfigError
from .PipelineSchedule import Block, PipelineSchedule

if TYPE_CHECKING:
    from collections.abc import Hashable, Mapping, Sequence

logger = getLogger(__name__)


@dataclass(frozen=True, slots=True)
class _BlockSpec:
    """A block of a device program before it is placed in time"""

    key: Hashable
    device: int
    kind: str
    fwd_mb: int | None
    bwd_mb: int | None
    half: str
    stage: int
    deps: tuple[Hashable, ...] = ()
    slot: int = 0
    direction: str = "down"
    span: int = 1
    release_us: float = 0.0


def _place(
    programs: Sequence[Sequence[_BlockSpec]], durations: Mapping[str, float], latency_us: float = 0.0
) -> list[Block]:
    """
    Earliest-start placement of per-device programs.

    A block starts when its device is free, its release time has passed and every
    dependency has delivered (plus `latency_us` when the dependency ran on another
    device). Devices keep their program order. A block spanning several stages
    takes the stage duration that many times.
    """
    delivered: dict[Hashable, tuple[float, int]] = {}
    heads = [0] * len(programs)
    free = [0.0] * len(programs)
    placed: list[Block] = []
    remaining = sum(len(program) for program in programs)
    while remaining:
        progressed = False
        for device, program in enumerate(programs):
            while heads[device] < len(program):
                spec = program[heads[device]]
                if any(dep not in delivered for dep in spec.deps):
                    break
                start = max(free[device], spec.release_us)
                for dep in spec.deps:
                    end, dep_device = delivered[dep]
                    start = max(start, end + latency_us if dep_device != device else end)
                duration = durations[spec.kind] * spec.span
                block = Block(
                    device=device,
                    kind=spec.kind,
                    fwd_mb=spec.fwd_mb,
                    bwd_mb=spec.bwd_mb,
                    half=spec.half,
                    start_us=start,
                    dur_us=duration,
                    stage=spec.stage,
                    slot=spec.slot,
                    direction=spec.direction,
                    span=spec.span,
                )
                placed.append(block)
                free[device] = block.end_us
                delivered[spec.key] = (block.end_us, device)
                heads[device] += 1
                remaining -= 1
                progressed = True
        if not progressed:
            stuck = {device: program[heads[device]].key for device, program in enumerate(programs) if heads[device] < len(program)}
            raise RuntimeError(f"Pipeline programs deadlock, waiting blocks: {stuck}")
    return placed


def _check_durations(m: int, p: int, durations: Mapping[str, float], kinds: Sequence[str]) -> dict[str, float]:
    if m < 1 or p < 1:
        raise ConfigError(f"Invalid pipeline size m={m}, p={p}")
    result = {}
    for kind in kinds:
        try:
            value = durations[kind]
        except KeyError as e:
            raise ConfigError(f"Missing block duration {kind!r}") from e
        if not value > 0:
            raise ConfigError(f"Block duration {kind} must be positive, got {value}")
        result[kind] = float(value)
    return result


def schedule_w_pipeline(
    m: int, p: int, block_durations: Mapping[str, float], p2p_latency_us: float = 0.0
) -> PipelineSchedule:
    """
    W-shaped pipeline over a folded model.

    F, B and SI are the durations of one device's full layer share (both of its
    ranges); every half-stage block takes half of it. Unit u carries the
    forward of micro-batch u and the backward of micro-batch u - p; a unit
    carrying both is an SI block. Unit u at half-stage s has slot 2u + s and runs
    on device s going down, 2p - 1 - s coming back up. Half-stages p - 1 and p
    meet on device p - 1 and run as one block.

    Without any SI block (m <= p) the backward of micro-batch j enters no
    earlier than p·F + j·(F + B), the cadence the fused units keep once m > p.
    """
    kinds = ("F", "B", "SI") if m > p else ("F", "B")
    durations = _check_durations(m, p, block_durations, kinds)
    half_durations = {kind: value / 2 for kind, value in durations.items()}
    cadence = None if m > p else durations["F"] + durations["B"]

    def key(u: int, s: int) -> tuple[str, int, int]:
        return ("w", u, p - 1 if s == p else s)

    programs: list[list[_BlockSpec]] = [[] for _ in range(p)]
    for u in range(m + p):
        fwd_mb = u if u < m else None
        bwd_mb = u - p if 0 <= u - p < m else None
        if fwd_mb is None and bwd_mb is None:
            continue
        kind = "SI" if fwd_mb is not None and bwd_mb is not None else "F" if fwd_mb is not None else "B"
        for s in range(2 * p):
            if s == p:
                continue
            deps = []
            release = 0.0
            if s > 0:
                deps.append(key(u, s - 1))
            elif bwd_mb is not None:
                deps.append(key(bwd_mb, 2 * p - 1))
                if cadence is not None:
                    release = p * durations["F"] + bwd_mb * cadence
            device = s if s < p else 2 * p - 1 - s
            programs[device].append(
                _BlockSpec(
                    key=key(u, s),
                    device=device,
                    kind=kind,
                    fwd_mb=fwd_mb,
                    bwd_mb=bwd_mb,
                    half="down" if s < p else "up",
                    stage=s,
                    deps=tuple(deps),
                    slot=2 * u + s,
                    span=2 if s == p - 1 else 1,
                    release_us=release,
                )
            )
    for program in programs:
        program.sort(key=lambda spec: spec.slot)

    blocks = _place(programs, half_durations, p2p_latency_us)
    logger.debug(f"W pipeline m={m}, p={p}: {len(blocks)} blocks")
    return PipelineSchedule(tuple(blocks), m, p, "w_shape", p2p_latency_us)


def _one_f_one_b_programs(mbs: Sequence[int], p: int, direction: str = "down") -> list[list[_BlockSpec]]:
    """Standard 1F1B device programs: warm-up forwards, alternating F/B, cool-down backwards"""
    n = len(mbs)
    programs: list[list[_BlockSpec]] = [[] for _ in range(p)]
    back = "up" if direction == "down" else "down"
    for device in range(p):
        position = device if direction == "down" else p - 1 - device

        def forward(mb: int) -> _BlockSpec:
            deps = (("F", mb, position - 1),) if position > 0 else ()
            return _BlockSpec(("F", mb, position), device, "F", mb, None, direction, position, deps, direction=direction)

        def backward(mb: int) -> _BlockSpec:
            stage = p - 1 - position
            deps = (("B", mb, stage - 1),) if stage > 0 else (("F", mb, p - 1),)
            return _BlockSpec(("B", mb, stage), device, "B", None, mb, back, stage, deps, direction=direction)

        warmup = min(p - position - 1, n)
        program = [forward(mb) for mb in mbs[:warmup]]
        for j in range(n - warmup):
            program.append(forward(mbs[warmup + j]))
            program.append(backward(mbs[j]))
        program.extend(backward(mb) for mb in mbs[n - warmup :])
        programs[device] = program
    return programs


def _with_unit_slots(programs: list[list[_BlockSpec]]) -> list[list[_BlockSpec]]:
    """Stamp every block with its start time in the unit-duration placement"""
    unit = _place(programs, {"F": 1.0, "B": 1.0})
    slots = {}
    for block in unit:
        key = ("F", block.fwd_mb, block.stage) if block.kind == "F" else ("B", block.bwd_mb, block.stage)
        slots[key] = int(block.start_us)
    return [[replace(spec, slot=slots[spec.key]) for spec in program] for program in programs]


def schedule_1f1b(m: int, p: int, durations: Mapping[str, float], p2p_latency_us: float = 0.0) -> PipelineSchedule:
    """1F1B over a linear layout; F and B are the durations of one device's layer share"""
    durations = _check_durations(m, p, durations, ("F", "B"))
    programs = _with_unit_slots(_one_f_one_b_programs(range(m), p))
    blocks = _place(programs, durations, p2p_latency_us)
    return PipelineSchedule(tuple(blocks), m, p, "one_f_one_b", p2p_latency_us)


def schedule_bidirectional(
    m: int, p: int, durations: Mapping[str, float], p2p_latency_us: float = 0.0
) -> PipelineSchedule:
    """
    Two opposing 1F1B pipelines over a replicated model: ceil(m/2) micro-batches
    flow down the device chain and the rest flow up. Device programs are merged
    by their unit-duration slots.
    """
    durations = _check_durations(m, p, durations, ("F", "B"))
    n_down = (m + 1) // 2
    down = _with_unit_slots(_one_f_one_b_programs(range(n_down), p, "down"))
    up = _with_unit_slots(_one_f_one_b_programs(range(n_down, m), p, "up"))
    rank = {"down": 0, "up": 1}
    programs = [
        sorted([*down[device], *up[device]], key=lambda spec: (spec.slot, rank[spec.direction]))
        for device in range(p)
    ]
    blocks = _place(programs, durations, p2p_latency_us)
    return PipelineSchedule(tuple(blocks), m, p, "bidirectional", p2p_latency_us)


def schedule(
    discipline: str, m: int, p: int, durations: Mapping[str, float], p2p_latency_us: float = 0.0
) -> PipelineSchedule:
    match discipline:
        case "w_shape":
            return schedule_w_pipeline(m, p, durations, p2p_latency_us)
        case "one_f_one_b":
            return schedule_1f1b(m, p, durations, p2p_latency_us)
        case "bidirectional":
            return schedule_bidirectional(m, p, durations, p2p_latency_us)
        case _:
            raise ConfigError(f"Invalid pipeline discipline {discipline!r}")
