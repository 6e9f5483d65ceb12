from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from itertools import islice
from logging import getLogger
from typing import TYPE_CHECKING, Any

from .errors import ConfigError
from .LayerDag import enumerate_topological_orders
from .PairingPlan import PairingPlan, dp_align
from .SegmentCost import LaneCostModel
from .Segmentation import Segmentation, segmentation_pairs

if TYPE_CHECKING:
    from collections.abc import Iterator, Mapping, Sequence

    from .LayerDag import LayerDag
    from .OverlapTable import OverlapTable, SoloTimeTable
    from .SegmentCost import SegmentCost

logger = getLogger(__name__)

_caps_aliases = {
    "seq": "sequences",
    "sequences": "sequences",
    "segs": "segments",
    "segments": "segments",
    "cands": "candidates",
    "candidates": "candidates",
}


@dataclass(frozen=True)
class SearchCaps:
    sequences: int = 16
    segments: int = 6
    candidates: int = 256

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"Invalid search cap {f.name}={value!r}")

    @classmethod
    def parse(cls, text: str) -> SearchCaps:
        """Parse `seq=16,segs=6,cands=256`; omitted keys keep their defaults"""
        values = {}
        for item in filter(None, (part.strip() for part in text.split(","))):
            key, sep, value = item.partition("=")
            try:
                name = _caps_aliases[key.strip()]
            except KeyError as e:
                raise ConfigError(f"Invalid search cap {key!r}") from e
            if not sep:
                raise ConfigError(f"Invalid search cap {item!r}: expected key=value")
            try:
                values[name] = int(value)
            except ValueError as e:
                raise ConfigError(f"Invalid search cap {item!r}: not an integer") from e
        return cls(**values)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SearchCaps:
        return cls(**{_caps_aliases.get(key, key): value for key, value in data.items()})

    def to_dict(self) -> dict[str, int]:
        return {"sequences": self.sequences, "segments": self.segments, "candidates": self.candidates}


class PairCosts:
    """Memoised segment-pair costs of one forward/backward DAG pair; segments are tuples of node ids"""

    __slots__ = ("_model", "_fwd", "_bwd", "_memo")
    _model: LaneCostModel
    _fwd: LayerDag
    _bwd: LayerDag
    _memo: dict[tuple[tuple[int, ...], tuple[int, ...]], SegmentCost]

    def __init__(self, fwd: LayerDag, bwd: LayerDag, tables: tuple[SoloTimeTable | None, OverlapTable]):
        solo, overlap = tables
        self._model = LaneCostModel(overlap, solo)
        self._fwd = fwd
        self._bwd = bwd
        self._memo = {}

    def segment_cost(self, fseg: Sequence[int] | None, bseg: Sequence[int] | None) -> SegmentCost:
        key = (tuple(fseg or ()), tuple(bseg or ()))
        try:
            return self._memo[key]
        except KeyError:
            pass
        cost = self._model.cost(self._fwd.ops(key[0]), self._bwd.ops(key[1]))
        self._memo[key] = cost
        return cost

    def __call__(self, fseg: Sequence[int] | None, bseg: Sequence[int] | None) -> float:
        return self.segment_cost(fseg, bseg).p_us

    def solo_us(self, dag: LayerDag) -> float:
        return sum(self._model.solo_time(node) for node in dag.nodes)

    def comm_us(self, dag: LayerDag) -> float:
        return sum(self._model.solo_time(node) for node in dag.comm_nodes())


@dataclass(frozen=True)
class BestPlan:
    plan: PairingPlan
    fwd_seq: tuple[int, ...]
    bwd_seq: tuple[int, ...]
    segmentations: tuple[Segmentation, Segmentation]
    total_us: float
    hidden_comm_frac: float
    fwd_solo_us: float = 0.0
    bwd_solo_us: float = 0.0
    candidates: int = 1
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def sequential_us(self) -> float:
        return self.fwd_solo_us + self.bwd_solo_us

    def to_dict(self, fwd: LayerDag | None = None, bwd: LayerDag | None = None) -> dict[str, Any]:
        fsegs, bsegs = (seg.segments for seg in self.segmentations)

        def labels(dag: LayerDag | None, seg: Sequence[int]) -> list[str | int]:
            return [dag.node(i).label for i in seg] if dag is not None else list(seg)

        steps = []
        for (i, j), step_us in zip(self.plan.steps, self.plan.step_us):
            steps.append(
                {
                    "forward": None if i is None else labels(fwd, fsegs[i]),
                    "backward": None if j is None else labels(bwd, bsegs[j]),
                    "us": step_us,
                }
            )
        return {
            "steps": steps,
            "total_us": self.total_us,
            "hidden_comm_frac": self.hidden_comm_frac,
            "metadata": {
                "fwd_seq": list(self.fwd_seq),
                "bwd_seq": list(self.bwd_seq),
                "fwd_cuts": list(self.segmentations[0].cuts),
                "bwd_cuts": list(self.segmentations[1].cuts),
                "fwd_solo_us": self.fwd_solo_us,
                "bwd_solo_us": self.bwd_solo_us,
                "candidates": self.candidates,
                **self.metadata,
            },
        }


def hidden_comm_frac(plan: PairingPlan, fseg: Segmentation, bseg: Segmentation, costs: PairCosts, comm_us: float) -> float:
    """Share of the communication solo time saved by the paired steps of a plan"""
    if comm_us <= 0:
        return 0.0
    fsegs, bsegs = fseg.segments, bseg.segments
    saved = sum(costs.segment_cost(fsegs[i], bsegs[j]).saved_us for i, j in plan.steps if i is not None and j is not None)
    return min(max(saved / comm_us, 0.0), 1.0)


def _shell(dims: tuple[int, ...], k: int, pos: int, hit: bool, prefix: tuple[int, ...]) -> Iterator[tuple[int, ...]]:
    if pos == len(dims):
        if hit:
            yield prefix
        return
    if not hit and not any(d > k for d in dims[pos + 1 :]):
        values = (k,) if k < dims[pos] else ()
    else:
        values = range(min(dims[pos], k + 1))
    for v in values:
        yield from _shell(dims, k, pos + 1, hit or v == k, (*prefix, v))


def candidate_order(dims: tuple[int, ...]) -> Iterator[tuple[int, ...]]:
    """Index tuples in shells of increasing maximum index, lexicographic inside a shell"""
    for k in range(max(dims, default=0)):
        yield from _shell(dims, k, 0, False, ())


def _candidates(
    fseqs: list[tuple[int, ...]], bseqs: list[tuple[int, ...]], caps: SearchCaps
) -> list[tuple[int, Segmentation, int, Segmentation]]:
    """
    Seeds first, then sequence pairs in shell order, each with the first
    `caps.candidates` of its segmentation pairs. A larger cap of any kind only
    appends pairs or extends a pair's share, so candidate sets grow monotonically.
    """
    seeds = [
        (0, Segmentation.coarsest(fseqs[0]), 0, Segmentation.coarsest(bseqs[0])),
        (0, Segmentation.finest(fseqs[0]), 0, Segmentation.finest(bseqs[0])),
    ]
    candidates = list(dict.fromkeys(seeds))
    seen = set(candidates)
    for fi, bi in candidate_order((len(fseqs), len(bseqs))):
        for fseg, bseg in islice(segmentation_pairs(fseqs[fi], bseqs[bi], caps.segments), caps.candidates):
            candidate = (fi, fseg, bi, bseg)
            if candidate not in seen:
                seen.add(candidate)
                candidates.append(candidate)
    return candidates


def search_si_plan(
    fwd_dag: LayerDag,
    bwd_dag: LayerDag,
    tables: tuple[SoloTimeTable | None, OverlapTable],
    caps: SearchCaps | None = None,
    *,
    barrier_us: float = 0.0,
    workers: int = 1,
) -> BestPlan:
    """
    Best strand-interleaving plan of one layer under the search caps.

    Candidates are (forward order, forward segmentation, backward order,
    backward segmentation) tuples, up to `caps.candidates` segmentation pairs
    for every pair of orders; each one is aligned exactly by `dp_align`.
    The winner minimizes (total, candidate index), so the result does not
    depend on `workers`.
    """
    caps = caps or SearchCaps()
    if workers < 1:
        raise ConfigError(f"Invalid number of workers {workers}")
    if barrier_us < 0:
        raise ConfigError(f"Invalid barrier cost {barrier_us}")
    costs = PairCosts(fwd_dag, bwd_dag, tables)
    fseqs = enumerate_topological_orders(fwd_dag, caps.sequences)
    bseqs = enumerate_topological_orders(bwd_dag, caps.sequences)
    candidates = _candidates(fseqs, bseqs, caps)
    logger.debug(
        f"SI search: {len(fseqs)} forward x {len(bseqs)} backward orders, {len(candidates)} candidates, workers={workers}"
    )

    def evaluate(item: tuple[int, tuple[int, Segmentation, int, Segmentation]]) -> tuple[float, int, PairingPlan]:
        index, (_, fseg, _, bseg) = item
        plan = dp_align(fseg.segments, bseg.segments, costs, barrier_us)
        return plan.total_us, index, plan

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(evaluate, enumerate(candidates)))
    else:
        results = []
        best_so_far = None
        for item in enumerate(candidates):
            results.append(result := evaluate(item))
            if best_so_far is None or result[0] < best_so_far:
                best_so_far = result[0]
                logger.debug(f"SI search: candidate {item[0]} improves the best total to {best_so_far:.3f} us")

    total_us, index, plan = min(results, key=lambda result: result[:2])
    fi, fseg, bi, bseg = candidates[index]
    comm_us = costs.comm_us(fwd_dag) + costs.comm_us(bwd_dag)
    return BestPlan(
        plan=plan,
        fwd_seq=fseqs[fi],
        bwd_seq=bseqs[bi],
        segmentations=(fseg, bseg),
        total_us=total_us,
        hidden_comm_frac=hidden_comm_frac(plan, fseg, bseg, costs, comm_us),
        fwd_solo_us=costs.solo_us(fwd_dag),
        bwd_solo_us=costs.solo_us(bwd_dag),
        candidates=len(candidates),
        metadata={"caps": caps.to_dict(), "candidate_index": index, "barrier_us": barrier_us},
    )


def round_robin_plan(
    fwd_seq: Sequence[Any], bwd_seq: Sequence[Any], cost, barrier_us: float = 0.0
) -> PairingPlan:
    """
    One-operator-each alternation of the two strands: operator k of the forward
    order is paired with operator k of the backward order, leftovers run alone.
    """
    steps, step_us = [], []
    n_f, n_b = len(fwd_seq), len(bwd_seq)
    for k in range(max(n_f, n_b)):
        i = k if k < n_f else None
        j = k if k < n_b else None
        fseg = (fwd_seq[i],) if i is not None else None
        bseg = (bwd_seq[j],) if j is not None else None
        steps.append((i, j))
        step_us.append(cost(fseg, bseg) + barrier_us)
    total = 0.0
    for t_us in step_us:
        total += t_us
    return PairingPlan(tuple(steps), total, tuple(step_us))


def wavelet_plan(
    fwd_dag: LayerDag,
    bwd_dag: LayerDag,
    tables: tuple[SoloTimeTable | None, OverlapTable],
    *,
    barrier_us: float = 0.0,
) -> BestPlan:
    """Round-robin baseline over the first topological order of each pass"""
    costs = PairCosts(fwd_dag, bwd_dag, tables)
    fwd_seq = enumerate_topological_orders(fwd_dag, 1)[0]
    bwd_seq = enumerate_topological_orders(bwd_dag, 1)[0]
    plan = round_robin_plan(fwd_seq, bwd_seq, costs, barrier_us)
    fseg, bseg = Segmentation.finest(fwd_seq), Segmentation.finest(bwd_seq)
    comm_us = costs.comm_us(fwd_dag) + costs.comm_us(bwd_dag)
    return BestPlan(
        plan=plan,
        fwd_seq=fwd_seq,
        bwd_seq=bwd_seq,
        segmentations=(fseg, bseg),
        total_us=plan.total_us,
        hidden_comm_frac=hidden_comm_frac(plan, fseg, bseg, costs, comm_us),
        fwd_solo_us=costs.solo_us(fwd_dag),
        bwd_solo_us=costs.solo_us(bwd_dag),
        metadata={"barrier_us": barrier_us, "round_robin": True},
    )
