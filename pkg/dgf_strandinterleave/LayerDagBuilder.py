from __future__ import annotations

from json import JSONDecodeError, load
from logging import getLogger
from pathlib import Path
from typing import TYPE_CHECKING

from networkx import DiGraph

from .errors import ConfigError, MissingProfileEntryError
from .LayerDag import LayerDag, OpNode
from .OperatorClass import Lane, OperatorClass
from .Schemas import TemplateModel, TemplatePassModel, validate_document

if TYPE_CHECKING:
    from .OverlapTable import SoloTimeTable
    from .Specs import ClusterSpec, ModelSpec, ParallelismSpec

logger = getLogger(__name__)

template_dir = Path(__file__).parent / "templates"

# bf16 activations and weights
_bytes_per_element = 2
# FlashAttention backward recomputes the scores: ~2.5x the forward FLOPs
_attention_bwd_factor = 2.5


def load_template(path: str | Path | None = None, *, moe: bool = False) -> TemplateModel:
    """Read a DAG template file, the shipped dense or MoE template by default"""
    if path is None:
        path = template_dir / ("moe_ep.json" if moe else "dense_tpsp.json")
    path = Path(path)
    try:
        with path.open() as f:
            data = load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Template file {path} not found") from e
    except JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: {e.msg}") from e
    return validate_document(TemplateModel, data, str(path))


def _condition(when: str | None, model: ModelSpec, par: ParallelismSpec) -> bool:
    match when:
        case None:
            return True
        case "tp":
            return par.tp > 1
        case "sp":
            return par.sequence_parallel
        case "cp":
            return par.cp > 1
        case "ep":
            return par.ep > 1
        case "gated":
            return model.gated_mlp
        case _:
            raise ConfigError(f"Invalid template condition {when!r}")


def _gemm(m: float, k: float, n: float) -> tuple[float, float]:
    return 2.0 * m * k * n, _bytes_per_element * (m * k + k * n + m * n)


class _ShapeCalculator:
    """FLOPs, HBM bytes and wire bytes of every template shape for one (model, parallelism)"""

    __slots__ = ("_model", "_par", "_tokens", "_tokens_sp", "_sp_divisor")

    def __init__(self, model: ModelSpec, par: ParallelismSpec):
        self._model = model
        self._par = par
        self._tokens = model.seq_len * par.micro_batch_size // par.cp
        self._sp_divisor = par.tp if par.sequence_parallel else 1
        self._tokens_sp = self._tokens / self._sp_divisor

    def key(self, shape: str) -> str:
        """Shape key: the template shape name tagged with its dimensions"""
        h, f, t = self._model.hidden, self._model.intermediate, self._par.tp
        T = self._tokens
        match shape:
            case "norm" | "bda" | "act":
                dims = (T, h, self._sp_divisor, t)
            case "qkv" | "proj" | "fc1" | "fc2" | "fc1_dgrad":
                dims = (T, h, f, t)
            case "attn":
                dims = (T, self._model.seq_len, h, t)
            case "kv" | "kv_bwd":
                dims = (T, h, t, self._par.cp)
            case "router" | "permute" | "expert_fc1" | "expert_fc2" | "tokens":
                dims = (T, h, f, self._sp_divisor, self._model.experts, self._model.topk, self._par.ep)
            case _:
                dims = (T, h, f, t)
        return f"{shape}[{'x'.join(str(d) for d in dims)}]"

    def compute(self, shape: str, op_class: OperatorClass) -> tuple[float, float]:
        h, f, t = self._model.hidden, self._model.intermediate, self._par.tp
        T, T_sp = self._tokens, self._tokens_sp
        k = self._model.topk or 1
        match shape:
            case "norm":
                flops, nbytes = 8.0 * T_sp * h, 4.0 * T_sp * h
            case "bda":
                flops, nbytes = 3.0 * T_sp * h, 6.0 * T_sp * h
            case "qkv":
                flops, nbytes = _gemm(T, h, 3 * h / t)
            case "proj":
                flops, nbytes = _gemm(T, h / t, h)
            case "fc1":
                flops, nbytes = _gemm(T, h, f / t)
            case "fc2":
                flops, nbytes = _gemm(T, f / t, h)
            case "fc1_dgrad":
                flops, nbytes = _gemm(T, (2 if self._model.gated_mlp else 1) * f / t, h)
            case "attn":
                flops = 2.0 * T * self._model.seq_len * h / t
                nbytes = 4.0 * _bytes_per_element * T * h / t
                if op_class is OperatorClass.FlashAttentionBwd:
                    flops *= _attention_bwd_factor
                    nbytes *= 2
            case "router":
                flops, nbytes = _gemm(T_sp, h, self._model.experts or 1)
            case "permute":
                flops, nbytes = 0.0, 2.0 * _bytes_per_element * T_sp * k * h
            case "expert_fc1":
                flops, nbytes = _gemm(T_sp * k, h, 2 * f)
            case "expert_fc2":
                flops, nbytes = _gemm(T_sp * k, f, h)
            case _:
                raise ConfigError(f"Invalid compute shape {shape!r}")
        return flops, nbytes

    def wire_bytes(self, shape: str) -> int:
        h, t, cp, ep = self._model.hidden, self._par.tp, self._par.cp, self._par.ep
        T = self._tokens
        match shape:
            case "act":
                nbytes = (t - 1) / t * T * h * _bytes_per_element
                if t > 1 and not self._par.sequence_parallel:
                    # reduce-scatter stands in for an all-reduce
                    nbytes *= 2
            case "kv":
                nbytes = (cp - 1) * 2 * T * h / t * _bytes_per_element
            case "kv_bwd":
                nbytes = 2 * (cp - 1) * 2 * T * h / t * _bytes_per_element
            case "tokens":
                nbytes = (ep - 1) / ep * self._tokens_sp * (self._model.topk or 1) * h * _bytes_per_element
            case _:
                raise ConfigError(f"Invalid communication shape {shape!r}")
        return int(round(nbytes))

    def group_span(self, shape: str) -> int:
        """Number of consecutive ranks one collective of this shape spans"""
        tp, cp, ep = self._par.tp, self._par.cp, self._par.ep
        match shape:
            case "act":
                return tp
            case "kv" | "kv_bwd":
                return tp * cp
            case "tokens":
                return tp * cp * ep
            case _:
                raise ConfigError(f"Invalid communication shape {shape!r}")


def _instantiate(
    section: TemplatePassModel,
    pass_kind: str,
    model: ModelSpec,
    par: ParallelismSpec,
    cluster: ClusterSpec | None,
    solo: SoloTimeTable | None,
) -> LayerDag:
    graph = DiGraph()
    order = [node.id for node in section.nodes]
    if len(set(order)) != len(order):
        raise ConfigError(f"Duplicate node ids in the {pass_kind} template")
    graph.add_nodes_from(order)
    for producer, consumer in section.edges:
        if producer not in graph or consumer not in graph:
            raise ConfigError(f"Template edge ({producer}, {consumer}) references an unknown node")
        graph.add_edge(producer, consumer)

    # bypass switched-off nodes: wire every predecessor to every successor
    for tnode in section.nodes:
        if tnode.pass_kind is not None and tnode.pass_kind != pass_kind:
            raise ConfigError(f"Template node {tnode.id} is marked {tnode.pass_kind} inside the {pass_kind} section")
        if _condition(tnode.when, model, par):
            continue
        node_id = tnode.id
        graph.add_edges_from((p, s) for p in graph.predecessors(node_id) for s in graph.successors(node_id))
        graph.remove_node(node_id)

    shapes = _ShapeCalculator(model, par)
    renumber = {}
    nodes = []
    for tnode in section.nodes:
        if tnode.id not in graph:
            continue
        new_id = renumber[tnode.id] = len(renumber)
        op_class = OperatorClass.parse(tnode.op_class)
        key = shapes.key(tnode.shape)

        nbytes, flops = 0, 0.0
        lane = Lane(tnode.lane) if tnode.lane else op_class.lane
        if lane.is_comm:
            nbytes = shapes.wire_bytes(tnode.shape)
            if tnode.lane is None and cluster is not None:
                lane = Lane.local_comm if shapes.group_span(tnode.shape) <= cluster.per_node else Lane.cross_comm
        else:
            flops, hbm_bytes = shapes.compute(tnode.shape, op_class)

        duration = solo.get(op_class, key) if solo is not None else None
        if duration is None:
            if cluster is None:
                if solo is not None:
                    raise MissingProfileEntryError(f"No solo time for {op_class.name}[{key}] and no cluster to estimate it")
                raise ConfigError("build_layer_dag needs a cluster or a solo-time table")
            if lane.is_comm:
                bandwidth = cluster.local_bytes_per_us if lane is Lane.local_comm else cluster.cross_bytes_per_us
                duration = nbytes / bandwidth
            else:
                duration = max(flops / cluster.peak_flops_per_us, hbm_bytes / cluster.hbm_bytes_per_us)

        nodes.append(
            OpNode(
                id=new_id,
                op_class=op_class,
                pass_kind=pass_kind,
                duration_us=duration,
                nbytes=nbytes,
                name=tnode.name,
                shape=key,
                flops=flops,
                lane_override=lane if lane is not op_class.lane else None,
            )
        )
    edges = [(renumber[p], renumber[c]) for p, c in graph.edges]
    return LayerDag(nodes, edges, pass_kind)


def build_layer_dag(
    model: ModelSpec,
    par: ParallelismSpec,
    cluster: ClusterSpec | None = None,
    solo: SoloTimeTable | None = None,
    template: str | Path | TemplateModel | None = None,
) -> tuple[LayerDag, LayerDag]:
    """
    Forward and backward operator DAGs of one transformer layer.

    Durations come from `solo` when it has the (class, shape) entry and
    from the roofline of `cluster` otherwise.
    """
    if par.ep > 1 and not model.is_moe:
        raise ConfigError(f"Expert parallelism ep={par.ep} requested for the dense model {model.name or model.family}")
    if not isinstance(template, TemplateModel):
        template = load_template(template, moe=model.is_moe)

    fwd = _instantiate(template.forward, "forward", model, par, cluster, solo)
    bwd = _instantiate(template.backward, "backward", model, par, cluster, solo)
    logger.debug(f"Layer DAG {template.name}: {len(fwd)} forward / {len(bwd)} backward operators")
    return fwd, bwd
