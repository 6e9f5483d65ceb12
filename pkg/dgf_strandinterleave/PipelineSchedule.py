from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

from numba import njit
from numpy import array, double, int64, zeros

from .errors import ConfigError

if TYPE_CHECKING:
    from numpy.typing import NDArray

_kinds = ("F", "B", "SI")
_halves = ("down", "up")
_disciplines = ("w_shape", "one_f_one_b", "bidirectional")

# relative slack of the dependency and exclusivity checks
_time_tolerance = 1e-9


@dataclass(frozen=True, slots=True)
class Block:
    device: int
    kind: str
    fwd_mb: int | None
    bwd_mb: int | None
    half: str
    start_us: float
    dur_us: float
    stage: int = 0
    slot: int = 0
    direction: str = "down"
    span: int = 1

    def __post_init__(self):
        match self.kind:
            case "F":
                valid = self.fwd_mb is not None and self.bwd_mb is None
            case "B":
                valid = self.fwd_mb is None and self.bwd_mb is not None
            case "SI":
                valid = self.fwd_mb is not None and self.bwd_mb is not None
            case _:
                raise ConfigError(f"Invalid block kind {self.kind!r}")
        if not valid:
            raise ConfigError(f"{self.kind} block with fwd_mb={self.fwd_mb}, bwd_mb={self.bwd_mb}")
        if self.half not in _halves or self.direction not in _halves:
            raise ConfigError(f"Invalid block half {self.half!r} or direction {self.direction!r}")
        if self.span < 1:
            raise ConfigError(f"Invalid block span {self.span}")

    @property
    def stages(self) -> range:
        """Consecutive stages of the traversal this block covers"""
        return range(self.stage, self.stage + self.span)

    @property
    def end_us(self) -> float:
        return self.start_us + self.dur_us

    @property
    def label(self) -> str:
        match self.kind:
            case "F":
                return f"F{self.fwd_mb}"
            case "B":
                return f"B{self.bwd_mb}"
            case _:
                return f"SI f{self.fwd_mb}/b{self.bwd_mb}"


@dataclass(frozen=True)
class PipelineSchedule:
    blocks: tuple[Block, ...]
    m: int
    p: int
    discipline: str
    p2p_latency_us: float = 0.0

    def __post_init__(self):
        if self.discipline not in _disciplines:
            raise ConfigError(f"Invalid pipeline discipline {self.discipline!r}")

    @property
    def stages(self) -> int:
        """Stages one micro-batch traverses per pass"""
        return 2 * self.p if self.discipline == "w_shape" else self.p

    @property
    def state_factor(self) -> int:
        """Model-state copies per device"""
        return 2 if self.discipline == "bidirectional" else 1

    @property
    def makespan_us(self) -> float:
        if not self.blocks:
            return 0.0
        return max(block.end_us for block in self.blocks) - min(block.start_us for block in self.blocks)

    def device_blocks(self, device: int) -> list[Block]:
        return sorted((b for b in self.blocks if b.device == device), key=lambda b: (b.start_us, b.slot))

    def stage_device(self, stage: int, backward: bool, direction: str = "down") -> int:
        """Device executing `stage` of a micro-batch pass"""
        p = self.p
        if self.discipline == "w_shape":
            return stage if stage < p else 2 * p - 1 - stage
        device = p - 1 - stage if backward else stage
        return p - 1 - device if direction == "up" else device


def _late(start: float, required: float) -> bool:
    return start < required - _time_tolerance * max(1.0, abs(required))


def validate_schedule(sched: PipelineSchedule) -> list[str]:
    """Violations of the schedule invariants, an empty list for a valid schedule"""
    problems: list[str] = []
    stages = sched.stages
    passes: dict[tuple[int, bool], dict[int, Block]] = {}
    directions: dict[int, str] = {}

    for block in sched.blocks:
        if not 0 <= block.device < sched.p:
            problems.append(f"{block.label}: device {block.device} is outside [0, {sched.p})")
        if not block.dur_us > 0 or block.start_us < 0:
            problems.append(f"{block.label}: invalid timing start={block.start_us}, dur={block.dur_us}")
        for mb, backward in ((block.fwd_mb, False), (block.bwd_mb, True)):
            if mb is None:
                continue
            if not 0 <= mb < sched.m:
                problems.append(f"{block.label}: micro-batch {mb} is outside [0, {sched.m})")
            if directions.setdefault(mb, block.direction) != block.direction:
                problems.append(f"micro-batch {mb} travels in both directions")
            visited = passes.setdefault((mb, backward), {})
            for stage in block.stages:
                if stage in visited:
                    problems.append(f"{block.label}: stage {stage} of micro-batch {mb} executed twice")
                visited[stage] = block
                expected = sched.stage_device(stage, backward, block.direction)
                if block.device != expected:
                    problems.append(f"{block.label}: stage {stage} runs on device {block.device}, expected {expected}")

    for device in range(sched.p):
        previous = None
        for block in sched.device_blocks(device):
            if previous is not None and _late(block.start_us, previous.end_us):
                problems.append(f"device {device}: {block.label} overlaps {previous.label}")
            previous = block

    latency = sched.p2p_latency_us
    for mb in range(sched.m):
        fwd, bwd = passes.get((mb, False), {}), passes.get((mb, True), {})
        if sorted(fwd) != list(range(stages)) or sorted(bwd) != list(range(stages)):
            problems.append(f"micro-batch {mb}: forward stages {sorted(fwd)}, backward stages {sorted(bwd)}")
            continue
        chain = [fwd[s] for s in range(stages)] + [bwd[s] for s in range(stages)]
        for producer, consumer in zip(chain[:-1], chain[1:]):
            if producer is consumer:
                continue
            required = producer.end_us + (latency if producer.device != consumer.device else 0.0)
            if _late(consumer.start_us, required):
                problems.append(f"micro-batch {mb}: {consumer.label} starts before {producer.label} delivers")
    return problems


@njit(cache=True)
def _device_busy(devices: NDArray[int64], durations: NDArray[double], p: int) -> NDArray[double]:
    busy = zeros(p, dtype=double)
    for i in range(len(devices)):
        busy[devices[i]] += durations[i]
    return busy


def idle_time_per_device(sched: PipelineSchedule) -> NDArray[double]:
    """Idle time of every device within the span of the whole schedule"""
    if not sched.blocks:
        raise ConfigError("Empty schedule")
    devices = array([b.device for b in sched.blocks], dtype=int64)
    durations = array([b.dur_us for b in sched.blocks], dtype=double)
    return sched.makespan_us - _device_busy(devices, durations, sched.p)


def bubble_ratio(sched: PipelineSchedule) -> float:
    idle = idle_time_per_device(sched)
    return float(idle.mean() / sched.makespan_us)


def closed_form_bubble(m: int, p: int) -> dict[str, float]:
    """Both textbook bubble fractions, (p-1)/m and p/(m-1)"""
    return {
        "p_minus_1_over_m": (p - 1) / m,
        "p_over_m_minus_1": p / (m - 1) if m > 1 else float("inf"),
    }


def pp_comm_volume(sched: PipelineSchedule, bytes_per_boundary: int = 0) -> dict[str, int]:
    """Point-to-point activation/gradient transfers implied by consecutive stages on different devices"""
    stages = sched.stages
    at: dict[tuple[int, bool, int], int] = {}
    for block in sched.blocks:
        for stage in block.stages:
            if block.fwd_mb is not None:
                at[(block.fwd_mb, False, stage)] = block.device
            if block.bwd_mb is not None:
                at[(block.bwd_mb, True, stage)] = block.device
    transfers = 0
    for mb in range(sched.m):
        chain = [at.get((mb, False, s)) for s in range(stages)] + [at.get((mb, True, s)) for s in range(stages)]
        transfers += sum(1 for a, b in zip(chain[:-1], chain[1:]) if a is not None and b is not None and a != b)
    return {"transfers": transfers, "bytes": transfers * bytes_per_boundary}


def boundary_crossings(sched: PipelineSchedule, mb: int, backward: bool = False) -> dict[tuple[int, int], int]:
    """How often one pass of micro-batch `mb` crosses each device boundary (lower device, upper device)"""
    chain = sorted(
        (stage, b.device)
        for b in sched.blocks
        if (b.bwd_mb if backward else b.fwd_mb) == mb
        for stage in b.stages
    )
    crossings: dict[tuple[int, int], int] = {}
    for (_, a), (_, b) in zip(chain[:-1], chain[1:]):
        if a != b:
            key = (min(a, b), max(a, b))
            crossings[key] = crossings.get(key, 0) + 1
    return crossings


def schedule_to_trace(sched: PipelineSchedule) -> dict[str, Any]:
    """Chrome trace-event document: one complete event per block, devices as threads"""
    events: list[dict[str, Any]] = [
        {"name": "process_name", "ph": "M", "pid": sched.discipline, "tid": 0, "args": {"name": sched.discipline}}
    ]
    events.extend(
        {"name": "thread_name", "ph": "M", "pid": sched.discipline, "tid": device, "args": {"name": f"GPU {device}"}}
        for device in range(sched.p)
    )
    for block in sorted(sched.blocks, key=lambda b: (b.start_us, b.device)):
        events.append(
            {
                "name": block.label,
                "cat": block.kind,
                "ph": "X",
                "ts": block.start_us,
                "dur": block.dur_us,
                "pid": sched.discipline,
                "tid": block.device,
                "args": {
                    "kind": block.kind,
                    "fwd_mb": block.fwd_mb,
                    "bwd_mb": block.bwd_mb,
                    "half": block.half,
                    "stage": block.stage,
                    "span": block.span,
                    "direction": block.direction,
                },
            }
        )
    return {"traceEvents": events, "displayTimeUnit": "ms"}


block_fields = ("device", "kind", "fwd_mb", "bwd_mb", "half", "stage", "span", "slot", "direction", "start_us", "dur_us")


def schedule_to_rows(sched: PipelineSchedule) -> list[dict[str, Any]]:
    rows = []
    for block in sorted(sched.blocks, key=lambda b: (b.device, b.start_us)):
        row = {name: getattr(block, name) for name in block_fields}
        row["fwd_mb"] = "" if block.fwd_mb is None else block.fwd_mb
        row["bwd_mb"] = "" if block.bwd_mb is None else block.bwd_mb
        rows.append(row)
    return rows
