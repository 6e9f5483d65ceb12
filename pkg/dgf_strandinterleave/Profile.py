from __future__ import annotations

from itertools import combinations_with_replacement
from json import JSONDecodeError, load
from logging import getLogger
from pathlib import Path
from typing import TYPE_CHECKING

from numpy.random import default_rng

from .errors import ConfigError
from .LayerDagBuilder import build_layer_dag
from .OperatorClass import Lane, OperatorClass
from .OverlapTable import OverlapTable, SoloTimeTable, oef_tolerance
from .Output import write_json
from .Presets import cluster_preset, model_preset
from .Schemas import ProfileModel, validate_document
from .Specs import ParallelismSpec

if TYPE_CHECKING:
    from typing import Any

logger = getLogger(__name__)

archetypes = ("pcie_a40", "nvlink_a800", "nvlink_h100")

# Synthetic magnitudes. Each one only encodes the ordering
# comp-comm > local-cross > comp-comp ~ same-type comm, and every pair that
# can sit on two different lanes stays above the interference break-even
# (0.50 for comp-comm, 0.61 for comm-comm at the default interference).
_magnitudes = {
    "pcie_a40": dict(comp_comm=0.90, local_cross=0.70, comp_comp=0.10, same_comm=0.15, attn_bwd_gemm=0.05),
    "nvlink_a800": dict(comp_comm=0.85, local_cross=0.72, comp_comp=0.12, same_comm=0.18, attn_bwd_gemm=0.06),
    "nvlink_h100": dict(comp_comm=0.80, local_cross=0.68, comp_comp=0.15, same_comm=0.20, attn_bwd_gemm=0.08),
}
_archetype_clusters = {"pcie_a40": "a40", "nvlink_a800": "a800", "nvlink_h100": "h100"}
_reference_model = "llama-8B"
_reference_tp = 8
_jitter = 0.03


def _category(a: OperatorClass, b: OperatorClass) -> str:
    if not a.is_comm and not b.is_comm:
        if {a, b} == {OperatorClass.FlashAttentionBwd, OperatorClass.GEMM}:
            return "attn_bwd_gemm"
        return "comp_comp"
    if a.is_comm != b.is_comm:
        return "comp_comm"
    if a is b or a.lane is b.lane is Lane.local_comm:
        return "same_comm"
    # AllToAll and Send/Recv only overlap when one of them was placed intra-node
    return "local_cross"


def _reference_solo(archetype: str) -> SoloTimeTable:
    cluster = cluster_preset(_archetype_clusters[archetype])
    par = ParallelismSpec(tp=_reference_tp)
    solo = SoloTimeTable()
    for dag in build_layer_dag(model_preset(_reference_model), par, cluster):
        for node in dag.nodes:
            solo.set(node.op_class, node.shape, node.duration_us)
    return solo


def synth_profile(archetype: str, seed: int | None = None) -> tuple[SoloTimeTable, OverlapTable]:
    """
    Synthetic tables of one hardware archetype.

    The solo times are the roofline of the reference layer (Llama-8B, TP=8 with
    sequence parallelism) on the archetype cluster. A `seed` adds a bounded
    jitter of ±0.03 to every factor, which keeps the orderings.
    """
    try:
        magnitudes = _magnitudes[archetype]
    except KeyError as e:
        raise ConfigError(f"Unknown archetype {archetype!r}, known: {', '.join(archetypes)}") from e

    rng = default_rng(seed) if seed is not None else None
    entries = {}
    for a, b in combinations_with_replacement(OperatorClass, 2):
        value = magnitudes[_category(a, b)]
        if rng is not None:
            value += rng.uniform(-_jitter, _jitter)
        entries[(a, b)] = round(value, 6)
    logger.debug(f"Synthesized {len(entries)} overlap factors for {archetype} (seed={seed})")
    return _reference_solo(archetype), OverlapTable(entries)


def validate_profile(solo: SoloTimeTable, overlap: OverlapTable) -> list[str]:
    """Invariant violations of a pair of tables, an empty list for a clean profile"""
    problems = []
    for (a, b), value in overlap.items():
        if not -oef_tolerance <= value <= 1 + oef_tolerance:
            problems.append(f"oef ({a.name}, {b.name}) = {value} is outside [-0.05, 1.05]")
        elif not 0 <= value <= 1:
            problems.append(f"oef ({a.name}, {b.name}) = {value} is within tolerance, evaluated as {min(max(value, 0), 1)}")
    if not 0 <= overlap.slowdown_factor <= 1:
        problems.append(f"slowdown_factor {overlap.slowdown_factor} is outside [0, 1]")
    if overlap.launch_overhead_frac < 0:
        problems.append(f"launch_overhead_frac {overlap.launch_overhead_frac} is negative")

    classes = sorted(solo.classes(), key=lambda c: c.name)
    for a, b in combinations_with_replacement(classes, 2):
        if a.lane is not b.lane and overlap.get(a, b) is None:
            problems.append(f"oef ({a.name}, {b.name}) missing for two classes of the solo table")
    return problems


def profile_to_dict(solo: SoloTimeTable, overlap: OverlapTable, **metadata: Any) -> dict[str, Any]:
    return {
        "solo": [{"class": op_class.name, "shape": shape, "t_us": t_us} for (op_class, shape), t_us in solo.items()],
        "oef": [{"a": a.name, "b": b.name, "value": value} for (a, b), value in overlap.items()],
        "interference": {
            "slowdown_factor": overlap.slowdown_factor,
            "launch_overhead_frac": overlap.launch_overhead_frac,
        },
        "segments": [
            {"a": [c.name for c in seg_a], "b": [c.name for c in seg_b], "p_us": p_us}
            for seg_a, seg_b, p_us in overlap.segments()
        ],
        "metadata": {"hardware": "", "created": "", **metadata},
    }


def profile_from_dict(data: dict[str, Any], where: str = "profile") -> tuple[SoloTimeTable, OverlapTable]:
    doc = validate_document(ProfileModel, data, where)
    solo = SoloTimeTable()
    for entry in doc.solo:
        op_class = OperatorClass.parse(entry.op_class)
        if solo.get(op_class, entry.shape) is not None:
            raise ConfigError(f"{where}: duplicate solo entry {op_class.name}[{entry.shape}]")
        solo.set(op_class, entry.shape, entry.t_us)
    overlap = OverlapTable(
        {(entry.a, entry.b): entry.value for entry in doc.oef},
        slowdown_factor=doc.interference.slowdown_factor,
        launch_overhead_frac=doc.interference.launch_overhead_frac,
        segments=[(entry.a, entry.b, entry.p_us) for entry in doc.segments],
    )
    if len(overlap) != len(doc.oef):
        raise ConfigError(f"{where}: duplicate overlap factor entries")
    return solo, overlap


def load_profile(path: str | Path) -> tuple[SoloTimeTable, OverlapTable]:
    path = Path(path)
    try:
        with path.open() as f:
            data = load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Profile file {path} not found") from e
    except JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: {e.msg}") from e
    solo, overlap = profile_from_dict(data, str(path))
    logger.info(f"Loaded profile {path}: {len(solo)} solo entries, {len(overlap)} overlap factors")
    return solo, overlap


def save_profile(tables: tuple[SoloTimeTable, OverlapTable], path: str | Path, **metadata: Any) -> Path:
    solo, overlap = tables
    return write_json(path, profile_to_dict(solo, overlap, **metadata))
