from __future__ import annotations

from logging import getLogger
from typing import TYPE_CHECKING, Any

from .errors import ConfigError
from .LayerDagBuilder import build_layer_dag
from .OperatorClass import Lane

if TYPE_CHECKING:
    from .Specs import ClusterSpec, ModelSpec, ParallelismSpec

logger = getLogger(__name__)

_bytes_per_element = 2

_shape_groups = {"act": "tp", "kv": "cp", "kv_bwd": "cp", "tokens": "ep"}

# Send/Recv transfers per micro-batch and stage boundary
_pp_transfers = {"one_f_one_b": 2, "bidirectional": 2, "w_shape": 4}


def cross_time_ratio(local_us: float, cross_us: float) -> float:
    """Share of the communication time spent on cross-node links"""
    if local_us < 0 or cross_us < 0:
        raise ConfigError(f"Invalid communication times local={local_us}, cross={cross_us}")
    total = local_us + cross_us
    return cross_us / total if total else 0.0


def _dp_sync_bytes(model: ModelSpec, par: ParallelismSpec, layers_per_device: float) -> float:
    """Ring all-reduce of the bf16 gradients held by one device"""
    h, f = model.hidden, model.intermediate
    params = model.params_per_layer()
    expert_params = model.experts * (3 if model.gated_mlp else 2) * h * f if model.is_moe else 0
    dense = (params - expert_params) / par.tp * layers_per_device
    experts = expert_params / (par.tp * par.ep) * layers_per_device
    expert_dp = par.dp // par.ep
    volume = 2 * (par.dp - 1) / par.dp * dense * _bytes_per_element
    if expert_dp > 1:
        volume += 2 * (expert_dp - 1) / expert_dp * experts * _bytes_per_element
    return volume


def dp_sync_time_us(model: ModelSpec, par: ParallelismSpec, cluster: ClusterSpec) -> float:
    nbytes = _dp_sync_bytes(model, par, model.layers / par.pp)
    local = par.tp * par.cp * par.dp <= cluster.per_node
    return nbytes / (cluster.local_bytes_per_us if local else cluster.cross_bytes_per_us)


def comm_volume_estimate(
    model: ModelSpec,
    par: ParallelismSpec,
    cluster: ClusterSpec,
    tokens_per_microbatch: int | None = None,
    *,
    discipline: str = "one_f_one_b",
) -> dict[str, Any]:
    """
    Per-device communication of one training iteration.

    Collectives inside a layer come from the layer DAGs (TP/SP AllGather and
    ReduceScatter, CP ring Send/Recv, EP All-to-All); DP gradient sync and PP
    Send/Recv are added analytically. A group is local when its ranks fit in one node.
    """
    par.check_cluster(cluster)
    try:
        transfers_per_boundary = _pp_transfers[discipline]
    except KeyError as e:
        raise ConfigError(f"Invalid pipeline discipline {discipline!r}") from e
    if tokens_per_microbatch is not None:
        if tokens_per_microbatch % par.micro_batch_size:
            raise ConfigError(
                f"tokens_per_microbatch {tokens_per_microbatch} is not a multiple of micro_batch_size {par.micro_batch_size}"
            )
        model = model.with_seq_len(tokens_per_microbatch // par.micro_batch_size)

    layers_per_device = model.layers / par.pp
    m = par.microbatches
    breakdown: dict[str, dict[str, Any]] = {}

    def account(group: str, nbytes: float, lane: Lane) -> None:
        entry = breakdown.setdefault(group, {"local_bytes": 0.0, "cross_bytes": 0.0})
        entry["local_bytes" if lane is Lane.local_comm else "cross_bytes"] += nbytes

    fwd, bwd = build_layer_dag(model, par, cluster)
    for dag in (fwd, bwd):
        for node in dag.nodes:
            if node.lane.is_comm:
                group = _shape_groups.get(node.shape.split("[")[0], "other")
                account(group, node.nbytes * layers_per_device * m, node.lane)

    dp_local = par.tp * par.cp * par.dp <= cluster.per_node
    if par.dp > 1:
        account("dp", _dp_sync_bytes(model, par, layers_per_device), Lane.local_comm if dp_local else Lane.cross_comm)

    if par.pp > 1:
        tokens = model.seq_len * par.micro_batch_size / par.cp
        if par.sequence_parallel:
            tokens /= par.tp
        boundary_bytes = tokens * model.hidden * _bytes_per_element
        transfers = transfers_per_boundary * m * (par.pp - 1) / par.pp
        pp_local = par.world <= cluster.per_node
        account("pp", transfers * boundary_bytes, Lane.local_comm if pp_local else Lane.cross_comm)

    local_bytes = sum(entry["local_bytes"] for entry in breakdown.values())
    cross_bytes = sum(entry["cross_bytes"] for entry in breakdown.values())
    local_us = local_bytes / cluster.local_bytes_per_us
    cross_us = cross_bytes / cluster.cross_bytes_per_us
    ratio = cross_time_ratio(local_us, cross_us)
    logger.debug(f"Communication per device: {local_bytes:.3g} B local, {cross_bytes:.3g} B cross, cross share {ratio:.1%}")
    return {
        "local_bytes": local_bytes,
        "cross_bytes": cross_bytes,
        "local_us": local_us,
        "cross_us": cross_us,
        "cross_time_ratio": ratio,
        "breakdown": {group: breakdown[group] for group in sorted(breakdown)},
    }
