from __future__ import annotations

from dataclasses import dataclass
from json import dumps
from typing import TYPE_CHECKING

from networkx import DiGraph, find_cycle, is_directed_acyclic_graph
from numba import njit
from numpy import int64, zeros

from .errors import ConfigError, CycleError
from .OperatorClass import Lane, OperatorClass

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence
    from typing import Literal

    from numpy.typing import NDArray

    PassKind = Literal["forward", "backward"]

_pass_kinds = ("forward", "backward")


@dataclass(frozen=True, slots=True)
class OpNode:
    id: int
    op_class: OperatorClass
    pass_kind: str
    duration_us: float = 0.0
    nbytes: int = 0
    name: str = ""
    shape: str = ""
    flops: float = 0.0
    lane_override: Lane | None = None

    def __post_init__(self):
        if self.pass_kind not in _pass_kinds:
            raise ConfigError(f"Invalid pass {self.pass_kind!r} of node {self.id}")
        if self.duration_us < 0:
            raise ConfigError(f"Node {self.id}: negative duration {self.duration_us}")
        if self.nbytes < 0:
            raise ConfigError(f"Node {self.id}: negative payload {self.nbytes}")
        if self.nbytes and self.lane is Lane.compute:
            raise ConfigError(f"Node {self.id}: compute node {self.op_class.name} carries a payload")

    @property
    def lane(self) -> Lane:
        return self.lane_override or self.op_class.lane

    @property
    def label(self) -> str:
        return self.name or f"{self.op_class.name}#{self.id}"


class LayerDag:
    """Operator DAG of one transformer layer for one pass"""

    __slots__ = ("_nodes", "_edges", "_pass_kind", "_graph", "_index")
    _nodes: tuple[OpNode, ...]
    _index: dict[int, OpNode]
    _edges: tuple[tuple[int, int], ...]
    _pass_kind: str
    _graph: DiGraph

    def __init__(self, nodes: Iterable[OpNode], edges: Iterable[tuple[int, int]], pass_kind: PassKind):
        if pass_kind not in _pass_kinds:
            raise ConfigError(f"Invalid pass {pass_kind!r}")
        self._pass_kind = pass_kind
        self._nodes = tuple(sorted(nodes, key=lambda node: node.id))
        self._edges = tuple(sorted({(int(p), int(c)) for p, c in edges}))

        ids = [node.id for node in self._nodes]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"Duplicate node ids in the {pass_kind} DAG")
        for node in self._nodes:
            if node.pass_kind != pass_kind:
                raise ConfigError(f"Node {node.id} belongs to the {node.pass_kind} pass, DAG is {pass_kind}")

        graph = DiGraph()
        graph.add_nodes_from(ids)
        known = set(ids)
        for producer, consumer in self._edges:
            if producer not in known or consumer not in known:
                raise ConfigError(f"Edge ({producer}, {consumer}) references an unknown node")
            graph.add_edge(producer, consumer)
        if not is_directed_acyclic_graph(graph):
            raise CycleError(f"Cycle detected in the {pass_kind} DAG: {find_cycle(graph)}")
        self._graph = graph
        self._index = {node.id: node for node in self._nodes}

    @property
    def nodes(self) -> tuple[OpNode, ...]:
        return self._nodes

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return self._edges

    @property
    def pass_kind(self) -> str:
        return self._pass_kind

    @property
    def graph(self) -> DiGraph:
        return self._graph

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(node.id for node in self._nodes)

    def node(self, node_id: int) -> OpNode:
        return self._index[node_id]

    def ops(self, seq: Sequence[int]) -> list[OpNode]:
        return [self._index[i] for i in seq]

    def comm_nodes(self) -> tuple[OpNode, ...]:
        return tuple(node for node in self._nodes if node.lane.is_comm)

    def count(self, op_class: OperatorClass) -> int:
        return sum(1 for node in self._nodes if node.op_class is op_class)

    def to_dict(self) -> dict:
        return {
            "pass": self._pass_kind,
            "nodes": [
                {
                    "id": node.id,
                    "class": node.op_class.name,
                    "pass": node.pass_kind,
                    "name": node.name,
                    "shape": node.shape,
                    "duration_us": node.duration_us,
                    "bytes": node.nbytes,
                    "lane": node.lane.value,
                }
                for node in self._nodes
            ],
            "edges": [list(edge) for edge in self._edges],
        }

    def to_json(self) -> str:
        return dumps(self.to_dict(), sort_keys=True, indent=2)

    def __len__(self) -> int:
        return len(self._nodes)

    def __repr__(self) -> str:
        return f"LayerDag({self._pass_kind}, nodes={len(self._nodes)}, edges={len(self._edges)})"


def validate_sequence(dag: LayerDag, seq: Sequence[int]) -> bool:
    """True iff `seq` is a permutation of the DAG nodes respecting every edge"""
    try:
        seq = list(seq)
        if len(seq) != len(dag) or set(seq) != set(dag.ids):
            return False
        position = {node_id: i for i, node_id in enumerate(seq)}
    except TypeError:
        return False
    return all(position[producer] < position[consumer] for producer, consumer in dag.edges)


def enumerate_topological_orders(dag: LayerDag, cap: int = 64) -> list[tuple[int, ...]]:
    """
    Up to `cap` topological orders, emitted in lexicographic order of ids.

    Backtracking over in-degree counts: at every choice point the smallest
    available id is tried first, so the first order is the
    lexicographically-smallest one.
    """
    if cap < 1:
        raise ConfigError(f"Invalid enumeration cap {cap}")
    graph = dag.graph
    indegree = {node_id: graph.in_degree(node_id) for node_id in dag.ids}
    successors = {node_id: sorted(graph.successors(node_id)) for node_id in dag.ids}
    placed: set[int] = set()
    current: list[int] = []
    orders: list[tuple[int, ...]] = []
    total = len(indegree)

    def visit() -> None:
        if len(current) == total:
            orders.append(tuple(current))
            return
        for node_id in sorted(n for n, d in indegree.items() if d == 0 and n not in placed):
            placed.add(node_id)
            current.append(node_id)
            for succ in successors[node_id]:
                indegree[succ] -= 1
            visit()
            for succ in successors[node_id]:
                indegree[succ] += 1
            current.pop()
            placed.remove(node_id)
            if len(orders) >= cap:
                return

    visit()
    return orders


_max_counted_nodes = 22


@njit(cache=True)
def _count_linear_extensions(pred_masks: NDArray[int64]) -> int:
    n = len(pred_masks)
    ways = zeros(1 << n, dtype=int64)
    ways[0] = 1
    for mask in range(1 << n):
        if ways[mask] == 0:
            continue
        for i in range(n):
            bit = 1 << i
            if mask & bit:
                continue
            if (pred_masks[i] & mask) == pred_masks[i]:
                ways[mask | bit] += ways[mask]
    return ways[(1 << n) - 1]


def count_topological_orders(dag: LayerDag) -> int:
    """Exact number of topological orders (subset DP), for DAGs up to 22 nodes"""
    if len(dag) > _max_counted_nodes:
        raise ConfigError(f"Counting orders is limited to {_max_counted_nodes} nodes, got {len(dag)}")
    if not len(dag):
        return 1
    position = {node_id: i for i, node_id in enumerate(dag.ids)}
    pred_masks = zeros(len(dag), dtype=int64)
    for producer, consumer in dag.edges:
        pred_masks[position[consumer]] |= 1 << position[producer]
    return int(_count_linear_extensions(pred_masks))
