from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from logging import getLogger
from pathlib import Path
from typing import TYPE_CHECKING, Any

from yaml import YAMLError, safe_load

from .errors import ConfigError
from .Presets import cluster_preset, model_preset
from .Profile import load_profile, synth_profile
from .Schemas import ScenarioModel, validate_document
from .SIPlanSearch import SearchCaps
from .Specs import ClusterSpec, ModelSpec, ParallelismSpec

if TYPE_CHECKING:
    from collections.abc import Mapping

    from .OverlapTable import OverlapTable, SoloTimeTable

logger = getLogger(__name__)

_expert_parallel = (8, 4, 2, 1)

# named sweeps, one variant per point
sweeps: dict[str, tuple[dict[str, Any], ...]] = {
    "tp": tuple({"tp": tp} for tp in (8, 16, 32)),
    "seq": tuple({"seq_len": seq_len} for seq_len in (8192, 16384)),
    "cp": tuple({"cp": cp} for cp in (1, 2, 4)),
    "moe": tuple({"model": name} for name in ("phi-16B", "phi-31B", "phi-42B")),
}


def sweep_points(name: str) -> tuple[dict[str, Any], ...]:
    try:
        return sweeps[name]
    except KeyError:
        raise ConfigError(f"Invalid sweep {name!r}, known: {', '.join(sweeps)}") from None


def point_label(changes: Mapping[str, Any]) -> str:
    return ",".join(f"{key}={value}" for key, value in changes.items() if value is not None)


@dataclass(frozen=True)
class Scenario:
    model: ModelSpec
    cluster: ClusterSpec
    par: ParallelismSpec
    name: str = ""
    archetype: str | None = None
    profile: str | None = None
    template: str | None = None
    plan_sources: tuple[str, ...] = ("megatron_baseline", "intra_batch", "wavelet_rr", "dhelix")
    caps: SearchCaps = SearchCaps()
    seed: int | None = None
    workers: int = 1
    barrier_us: float = 0.0
    p2p_latency_us: float = 0.0
    slack_mb: float = 512.0
    intra_batch_hidden_frac: float = 0.261

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: str | Path | None = None, where: str = "scenario") -> Scenario:
        """
        Validated scenario. `model` and `cluster` are preset names or mappings;
        a mapping with a `preset` key starts from that preset. A missing `dp`
        takes every GPU the other dimensions leave. Relative profile and
        template paths resolve against `base_dir`.
        """
        doc = validate_document(ScenarioModel, data, where)
        model = _resolve_model(doc.model, where)
        cluster = _resolve_cluster(doc.cluster, where)

        parallelism = dict(doc.parallelism)
        if "dp" not in parallelism:
            used = parallelism.get("tp", 1) * parallelism.get("pp", 1) * parallelism.get("cp", 1)
            if not isinstance(used, int) or used < 1 or cluster.gpus % used:
                raise ConfigError(f"{where}.parallelism: tp·pp·cp = {used} does not divide {cluster.gpus} GPUs")
            parallelism["dp"] = cluster.gpus // used
        par = ParallelismSpec.from_dict(parallelism)
        par.check_cluster(cluster)

        if doc.profile is None and doc.archetype is None:
            raise ConfigError(f"{where}: needs a `profile` file or a synthetic `archetype`")

        def resolve(path: str | None) -> str | None:
            if path is None or base_dir is None:
                return path
            return str(Path(base_dir) / path)

        return cls(
            model=model,
            cluster=cluster,
            par=par,
            name=doc.name,
            archetype=doc.archetype,
            profile=resolve(doc.profile),
            template=resolve(doc.template),
            plan_sources=tuple(dict.fromkeys(doc.plan_sources)),
            caps=SearchCaps(**doc.caps.model_dump()),
            seed=doc.seed,
            workers=doc.workers,
            barrier_us=doc.barrier_us,
            p2p_latency_us=doc.p2p_latency_us,
            slack_mb=doc.slack_mb,
            intra_batch_hidden_frac=doc.intra_batch_hidden_frac,
        )

    def to_dict(self) -> dict[str, Any]:
        """Fully resolved form, stable across runs"""
        return {
            "name": self.name,
            "model": asdict(self.model),
            "cluster": asdict(self.cluster),
            "parallelism": {f.name: getattr(self.par, f.name) for f in fields(self.par) if f.init},
            "archetype": self.archetype,
            "profile": self.profile,
            "template": self.template,
            "plan_sources": list(self.plan_sources),
            "caps": self.caps.to_dict(),
            "seed": self.seed,
            "workers": self.workers,
            "barrier_us": self.barrier_us,
            "p2p_latency_us": self.p2p_latency_us,
            "slack_mb": self.slack_mb,
            "intra_batch_hidden_frac": self.intra_batch_hidden_frac,
        }

    def tables(self) -> tuple[SoloTimeTable, OverlapTable]:
        if self.profile is not None:
            return load_profile(self.profile)
        return synth_profile(self.archetype, self.seed)

    def variant(
        self,
        *,
        tp: int | None = None,
        cp: int | None = None,
        seq_len: int | None = None,
        model: str | None = None,
    ) -> Scenario:
        """
        The scenario on the same cluster with sweep dimensions changed. A
        larger `tp` grows the model by the same factor in layers, rounded down
        to a multiple of 2·pp so that it still folds; a larger `cp` grows the
        sequence with it. A `model` preset of the MoE family takes the largest
        expert parallelism of 8, 4, 2 or 1 that divides dp.
        """
        world = self.cluster.gpus
        spec, par = self.model, self.par
        if model is not None:
            spec = model_preset(model)
            dp = par.rebalanced(world).dp
            ep = next(e for e in _expert_parallel if dp % e == 0) if spec.is_moe else 1
            par = par.rebalanced(world, ep=ep)
        if tp is not None:
            unit = 2 * par.pp
            spec = spec.with_layers(max(unit, spec.layers * tp // par.tp // unit * unit))
            par = par.rebalanced(world, tp=tp)
        if cp is not None:
            spec = spec.with_seq_len(spec.seq_len * cp // par.cp)
            par = par.rebalanced(world, cp=cp)
        if seq_len is not None:
            spec = spec.with_seq_len(seq_len)
        label = point_label({"tp": tp, "cp": cp, "seq_len": seq_len, "model": model})
        return replace(self, model=spec, par=par, name=f"{self.name or self.model.name}[{label}]")


def _resolve_model(value: str | dict[str, Any], where: str) -> ModelSpec:
    if isinstance(value, str):
        return model_preset(value)
    data = dict(value)
    if preset := data.pop("preset", None):
        data = {**asdict(model_preset(preset)), **data}
    try:
        return ModelSpec.from_dict(data)
    except ConfigError as e:
        raise ConfigError(f"{where}.{e}") from e


def _resolve_cluster(value: str | dict[str, Any], where: str) -> ClusterSpec:
    if isinstance(value, str):
        return cluster_preset(value)
    data = dict(value)
    if preset := data.pop("preset", None):
        return cluster_preset(preset, **data)
    try:
        return ClusterSpec.from_dict(data)
    except ConfigError as e:
        raise ConfigError(f"{where}.{e}") from e


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        with path.open() as f:
            data = safe_load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Scenario file {path} not found") from e
    except YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        problem = getattr(e, "problem", None) or str(e)
        raise ConfigError(f"{path}{line}: {problem}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    scenario = Scenario.from_dict(data, path.parent, str(path))
    logger.info(f"Loaded scenario {scenario.name or path.stem}: {scenario.model.name or scenario.model.family} on {scenario.par.world} GPUs")
    return scenario
