from __future__ import annotations

from dataclasses import dataclass, field
from logging import getLogger
from typing import TYPE_CHECKING, Any

from .CommVolume import dp_sync_time_us
from .errors import ConfigError
from .FoldedLayout import fold_layers, linear_layers
from .LayerDagBuilder import build_layer_dag
from .MemorySimulator import MemoryConfig, simulate_memory
from .PipelineSchedule import bubble_ratio
from .PipelineSchedulers import schedule_1f1b, schedule_w_pipeline
from .SegmentCost import LaneCostModel
from .SIPlanSearch import SearchCaps, search_si_plan, wavelet_plan

if TYPE_CHECKING:
    from pathlib import Path

    from .OverlapTable import OverlapTable, SoloTimeTable
    from .PipelineSchedule import PipelineSchedule
    from .Schemas import TemplateModel
    from .Specs import ClusterSpec, ModelSpec, ParallelismSpec

logger = getLogger(__name__)

plan_sources = ("megatron_baseline", "intra_batch", "wavelet_rr", "dhelix")

_tp_shape = "act"


@dataclass(frozen=True)
class IterationEstimate:
    plan_source: str
    makespan_us: float
    pipeline_us: float
    dp_sync_us: float
    tflops_per_gpu: float
    mfu: float
    hidden_comm_frac: float
    bubble_ratio: float
    peak_memory_bytes: int
    block_us: dict[str, float]
    layer: dict[str, float]
    schedule: PipelineSchedule = field(repr=False, compare=False)
    plan: dict[str, Any] | None = field(default=None, repr=False)

    @property
    def discipline(self) -> str:
        return self.schedule.discipline

    def to_dict(self) -> dict[str, Any]:
        data = {
            "plan_source": self.plan_source,
            "discipline": self.discipline,
            "makespan_us": self.makespan_us,
            "pipeline_us": self.pipeline_us,
            "dp_sync_us": self.dp_sync_us,
            "tflops_per_gpu": self.tflops_per_gpu,
            "mfu": self.mfu,
            "hidden_comm_frac": self.hidden_comm_frac,
            "bubble_ratio": self.bubble_ratio,
            "peak_memory_bytes": self.peak_memory_bytes,
            "block_us": dict(self.block_us),
            "layer": dict(self.layer),
        }
        if self.plan is not None:
            data["plan"] = self.plan
        return data


def estimate_iteration_time(
    model: ModelSpec,
    cluster: ClusterSpec,
    par: ParallelismSpec,
    plan_source: str,
    tables: tuple[SoloTimeTable | None, OverlapTable],
    caps: SearchCaps | None = None,
    *,
    template: str | Path | TemplateModel | None = None,
    barrier_us: float = 0.0,
    p2p_latency_us: float = 0.0,
    workers: int = 1,
    intra_batch_hidden_frac: float = 0.261,
    slack_mb: float = 512,
) -> IterationEstimate:
    """
    One training iteration of `model` under `plan_source`.

    Megatron and intra-batch run 1F1B over contiguous stages; wavelet_rr and
    dhelix run the W pipeline over the folded model with the SI block time of
    their layer plan. DP gradient sync is added to every plan source.
    """
    if plan_source not in plan_sources:
        raise ConfigError(f"Invalid plan source {plan_source!r}, known: {', '.join(plan_sources)}")
    if not 0 <= intra_batch_hidden_frac <= 1:
        raise ConfigError(f"Invalid intra_batch_hidden_frac {intra_batch_hidden_frac}")
    par.check_cluster(cluster)
    solo, overlap = tables
    fwd, bwd = build_layer_dag(model, par, cluster, solo, template)
    cost_model = LaneCostModel(overlap, solo)

    def times(dag, select=None) -> float:
        return sum(cost_model.solo_time(node) for node in dag.nodes if select is None or select(node))

    def is_comm(node) -> bool:
        return node.lane.is_comm

    def is_tp(node) -> bool:
        return node.lane.is_comm and node.shape.startswith(f"{_tp_shape}[")

    fwd_us, bwd_us = times(fwd), times(bwd)
    comm_us = times(fwd, is_comm) + times(bwd, is_comm)
    layers_per_device = model.layers // par.pp
    m, p = par.microbatches, par.pp
    plan = None

    match plan_source:
        case "megatron_baseline" | "intra_batch":
            layout = linear_layers(model.layers, p)
            hidden = 0.0
            if plan_source == "intra_batch":
                tp_us = times(fwd, is_tp) + times(bwd, is_tp)
                fwd_us -= intra_batch_hidden_frac * times(fwd, is_tp)
                bwd_us -= intra_batch_hidden_frac * times(bwd, is_tp)
                hidden = intra_batch_hidden_frac * tp_us / comm_us if comm_us > 0 else 0.0
            pair_us = fwd_us + bwd_us
            block_us = {"F": layers_per_device * fwd_us, "B": layers_per_device * bwd_us}
            sched = schedule_1f1b(m, p, block_us, p2p_latency_us)
        case "wavelet_rr" | "dhelix":
            layout = fold_layers(model.layers, p)
            if plan_source == "dhelix":
                best = search_si_plan(fwd, bwd, tables, caps, barrier_us=barrier_us, workers=workers)
            else:
                best = wavelet_plan(fwd, bwd, tables, barrier_us=barrier_us)
            pair_us, hidden = best.total_us, best.hidden_comm_frac
            plan = best.to_dict(fwd, bwd)
            block_us = {
                "F": layers_per_device * fwd_us,
                "B": layers_per_device * bwd_us,
                "SI": layers_per_device * pair_us,
            }
            sched = schedule_w_pipeline(m, p, block_us, p2p_latency_us)

    dp_us = dp_sync_time_us(model, par, cluster) if par.dp > 1 else 0.0
    makespan = sched.makespan_us + dp_us

    flops = sum(node.flops for dag in (fwd, bwd) for node in dag.nodes) * layers_per_device * m
    tflops = flops / makespan / 1e6
    memory = simulate_memory(sched, layout, MemoryConfig.from_specs(model, par, cluster, slack_mb=slack_mb))

    logger.info(f"{plan_source}: {makespan / 1e3:.2f} ms per iteration, {tflops:.1f} TFLOPS per GPU")
    return IterationEstimate(
        plan_source=plan_source,
        makespan_us=makespan,
        pipeline_us=sched.makespan_us,
        dp_sync_us=dp_us,
        tflops_per_gpu=tflops,
        mfu=tflops / cluster.peak_tflops,
        hidden_comm_frac=hidden,
        bubble_ratio=bubble_ratio(sched),
        peak_memory_bytes=memory.peak,
        block_us=block_us,
        layer={"fwd_us": fwd_us, "bwd_us": bwd_us, "pair_us": pair_us, "comm_us": comm_us},
        schedule=sched,
        plan=plan,
    )
