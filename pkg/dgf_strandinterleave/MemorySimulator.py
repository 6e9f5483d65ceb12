from __future__ import annotations

from dataclasses import dataclass
from logging import getLogger
from typing import TYPE_CHECKING, Any

from numpy import add, array, cumsum, int64, unique, zeros
from scipy.constants import mebi

from .errors import ConfigError, InfeasibleError
from .FoldedLayout import FoldedLayout, LinearLayout, fold_layers, linear_layers
from .PipelineSchedulers import schedule

if TYPE_CHECKING:
    from .PipelineSchedule import PipelineSchedule
    from .Specs import ClusterSpec, ModelSpec, ParallelismSpec

logger = getLogger(__name__)

# fp16 weights and gradients, fp32 master weights and two Adam moments
_state_bytes_per_param = 16

# block durations do not change the per-device event order, any positive values work
_unit_durations = {"F": 1.0, "B": 2.0, "SI": 3.0}


@dataclass(frozen=True)
class MemoryConfig:
    act_bytes_per_layer: int
    state_bytes_per_layer: int
    capacity_bytes: int
    slack_bytes: int = 512 * int(mebi)

    def __post_init__(self):
        for name in ("act_bytes_per_layer", "state_bytes_per_layer", "capacity_bytes", "slack_bytes"):
            if getattr(self, name) < 0:
                raise ConfigError(f"memory.{name} must be non-negative, got {getattr(self, name)}")

    @classmethod
    def from_specs(
        cls,
        model: ModelSpec,
        par: ParallelismSpec,
        cluster: ClusterSpec,
        layers: int | None = None,
        *,
        slack_mb: float = 512,
    ) -> MemoryConfig:
        """
        Activation bytes per layer and micro-batch, s·b·h/(t·cp)·(15 + 19·(f/4h)·k),
        with k the routed top-k for MoE models. Model state is 16 bytes per
        parameter held by the device; expert weights are split over EP.
        """
        s, b, h, f = model.seq_len, par.micro_batch_size, model.hidden, model.intermediate
        k = model.topk if model.is_moe else 1
        act = s * b * h / (par.tp * par.cp) * (15 + 19 * (f / (4 * h)) * k)

        params = model.params_per_layer()
        if model.is_moe:
            experts = model.experts * (3 if model.gated_mlp else 2) * h * f
            params = params - experts + experts / par.ep
        state = params / par.tp * _state_bytes_per_param

        cfg = cls(round(act), round(state), cluster.capacity_bytes, round(slack_mb * mebi))
        if layers is not None and layers / par.pp * cfg.state_bytes_per_layer > cfg.capacity_bytes:
            logger.warning(f"Model state of {layers} layers over pp={par.pp} exceeds the device capacity")
        return cfg

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> MemoryConfig:
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"memory: {e}") from e


@dataclass(frozen=True)
class MemoryTimeline:
    """Piecewise-constant per-device occupancy, breakpoints are (time_us, bytes)"""

    discipline: str
    breakpoints: tuple[tuple[tuple[float, int], ...], ...]
    peak_bytes: tuple[int, ...]
    baseline_bytes: tuple[int, ...]
    capacity_bytes: int

    @property
    def peak(self) -> int:
        return max(self.peak_bytes)

    @property
    def over_capacity(self) -> list[int]:
        return [device for device, peak in enumerate(self.peak_bytes) if peak > self.capacity_bytes]

    def final_bytes(self, device: int) -> int:
        return self.breakpoints[device][-1][1]

    def returns_to_baseline(self) -> bool:
        return all(self.final_bytes(d) == base for d, base in enumerate(self.baseline_bytes))


def _check_layout(sched: PipelineSchedule, layout: FoldedLayout | LinearLayout) -> None:
    match sched.discipline:
        case "w_shape":
            valid = isinstance(layout, FoldedLayout)
        case "one_f_one_b" | "bidirectional":
            valid = isinstance(layout, LinearLayout)
        case _:
            raise ConfigError(f"Invalid pipeline discipline {sched.discipline!r}")
    if not valid:
        raise ConfigError(f"{type(layout).__name__} does not match the {sched.discipline} discipline")
    if layout.p != sched.p:
        raise ConfigError(f"Layout spans {layout.p} devices, schedule spans {sched.p}")


def simulate_memory(
    sched: PipelineSchedule, layout: FoldedLayout | LinearLayout, cfg: MemoryConfig
) -> MemoryTimeline:
    """
    Replay the schedule on every device: a forward allocates the activations of
    the layers of every stage its block spans at block end, the matching backward
    frees them at block end. An SI block does both at the same instant.
    """
    _check_layout(sched, layout)
    breakpoints, peaks, baselines = [], [], []
    for device in range(sched.p):
        baseline = sched.state_factor * layout.layers_on(device) * cfg.state_bytes_per_layer
        chunk = layout.block_layers(device) * cfg.act_bytes_per_layer
        times, deltas = [], []
        for block in sched.device_blocks(device):
            size = chunk * block.span
            delta = (size if block.fwd_mb is not None else 0) - (size if block.bwd_mb is not None else 0)
            times.append(block.end_us)
            deltas.append(delta)

        start = min((b.start_us for b in sched.blocks), default=0.0)
        if not times:
            breakpoints.append(((start, baseline),))
            peaks.append(baseline)
            baselines.append(baseline)
            continue
        instants, inverse = unique(array(times), return_inverse=True)
        net = zeros(len(instants), dtype=int64)
        add.at(net, inverse, array(deltas, dtype=int64))
        occupancy = baseline + cumsum(net)
        if occupancy.min() < baseline:
            raise RuntimeError(f"device {device}: activations freed before they were allocated")

        breakpoints.append(((start, baseline), *((float(t), int(b)) for t, b in zip(instants, occupancy))))
        peaks.append(max(baseline, int(occupancy.max())))
        baselines.append(baseline)

    timeline = MemoryTimeline(sched.discipline, tuple(breakpoints), tuple(peaks), tuple(baselines), cfg.capacity_bytes)
    if over := timeline.over_capacity:
        logger.warning(f"{sched.discipline}: peak memory exceeds capacity on devices {over}")
    return timeline


def layout_for(discipline: str, layers: int, p: int) -> FoldedLayout | LinearLayout:
    match discipline:
        case "w_shape":
            return fold_layers(layers, p)
        case "one_f_one_b" | "bidirectional":
            return linear_layers(layers, p)
        case _:
            raise ConfigError(f"Invalid pipeline discipline {discipline!r}")


def simulate_discipline(discipline: str, layers: int, par: ParallelismSpec, cfg: MemoryConfig) -> MemoryTimeline:
    sched = schedule(discipline, par.microbatches, par.pp, _unit_durations)
    return simulate_memory(sched, layout_for(discipline, layers, par.pp), cfg)


def _fits(discipline: str, layers: int, par: ParallelismSpec, cfg: MemoryConfig) -> bool:
    peak = simulate_discipline(discipline, layers, par, cfg).peak
    if discipline == "w_shape":
        peak += cfg.slack_bytes
    return peak <= cfg.capacity_bytes


def max_model_size(
    base_model: ModelSpec,
    par: ParallelismSpec,
    cfg: MemoryConfig,
    discipline: str,
    *,
    method: str = "bisect",
) -> dict[str, int]:
    """
    Largest layer count on the lattice of multiples of 2·pp whose simulated
    peak fits the capacity (plus slack for the W pipeline).
    """
    step = 2 * par.pp
    factor = 2 if discipline == "bidirectional" else 1
    if cfg.state_bytes_per_layer:
        # model state alone bounds the search
        top = int(cfg.capacity_bytes * par.pp // (factor * cfg.state_bytes_per_layer)) // step
    elif cfg.act_bytes_per_layer:
        top = int(cfg.capacity_bytes * par.pp // cfg.act_bytes_per_layer) // step
    else:
        raise ConfigError("Memory configuration with zero bytes per layer has no maximum size")

    match method:
        case "bisect":
            lo, hi = 0, top
            while lo < hi:
                mid = (lo + hi + 1) // 2
                if _fits(discipline, mid * step, par, cfg):
                    lo = mid
                else:
                    hi = mid - 1
            best = lo
        case "linear":
            best = 0
            for k in range(1, top + 1):
                if not _fits(discipline, k * step, par, cfg):
                    break
                best = k
        case _:
            raise ConfigError(f"Invalid search method {method!r}")

    if best == 0:
        raise InfeasibleError(
            f"{discipline}: even {step} layers do not fit {cfg.capacity_bytes / mebi:.0f} MiB per device"
        )
    layers = best * step
    logger.debug(f"{discipline}: at most {layers} layers fit")
    return {"layers": layers, "param_count": base_model.param_count(layers)}


def slack_violations(w_timeline: MemoryTimeline, reference: MemoryTimeline, cfg: MemoryConfig) -> list[str]:
    """Devices where the W pipeline needs more than the slack over the single-strand peak"""
    findings = [
        f"device {device}: {w_peak - ref_peak} bytes over the single-strand peak, slack is {cfg.slack_bytes}"
        for device, (w_peak, ref_peak) in enumerate(zip(w_timeline.peak_bytes, reference.peak_bytes))
        if w_peak > ref_peak + cfg.slack_bytes
    ]
    for finding in findings:
        logger.warning(finding)
    return findings


def timeline_rows(timeline: MemoryTimeline) -> list[dict[str, Any]]:
    return [
        {"device": device, "t_us": t, "bytes": value}
        for device, points in enumerate(timeline.breakpoints)
        for t, value in points
    ]


def peak_summary(timeline: MemoryTimeline) -> dict[str, Any]:
    return {
        "discipline": timeline.discipline,
        "capacity_bytes": timeline.capacity_bytes,
        "peak_bytes": timeline.peak,
        "peak_bytes_per_device": list(timeline.peak_bytes),
        "baseline_bytes_per_device": list(timeline.baseline_bytes),
        "over_capacity_devices": timeline.over_capacity,
    }
