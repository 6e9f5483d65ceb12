from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import TYPE_CHECKING

from scipy.constants import gibi, giga, tera

from .errors import ConfigError

if TYPE_CHECKING:
    from collections.abc import Mapping
    from typing import Any

_families = ("llama", "gpt", "phi_moe")


def _from_mapping(cls, data: Mapping[str, Any], where: str):
    names = {f.name for f in fields(cls)}
    if unknown := sorted(set(data) - names):
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from e


def _require_positive(where: str, **values: float | int | None) -> None:
    for key, value in values.items():
        if value is None:
            continue
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}.{key}: expected a number, got {value!r}")
        if value <= 0:
            raise ConfigError(f"{where}.{key}: must be positive, got {value}")


@dataclass(frozen=True)
class ModelSpec:
    family: str
    hidden: int
    intermediate: int
    layers: int
    seq_len: int
    experts: int | None = None
    topk: int | None = None
    name: str = ""

    def __post_init__(self):
        where = f"model {self.name}" if self.name else "model"
        if self.family not in _families:
            raise ConfigError(f"{where}: invalid model family {self.family!r}")
        _require_positive(
            where,
            hidden=self.hidden,
            intermediate=self.intermediate,
            layers=self.layers,
            seq_len=self.seq_len,
            experts=self.experts,
            topk=self.topk,
        )
        if self.is_moe:
            if self.experts is None or self.topk is None:
                raise ConfigError(f"{where}: MoE family needs `experts` and `topk`")
            if self.topk > self.experts:
                raise ConfigError(f"{where}: topk {self.topk} exceeds experts {self.experts}")
        elif self.experts is not None or self.topk is not None:
            raise ConfigError(f"{where}: `experts`/`topk` are only valid for the phi_moe family")

    @property
    def is_moe(self) -> bool:
        return self.family == "phi_moe"

    @property
    def gated_mlp(self) -> bool:
        """SwiGLU-style MLP with separate gate and up projections"""
        return self.family != "gpt"

    def params_per_layer(self) -> int:
        h, f = self.hidden, self.intermediate
        attention = 4 * h * h
        mlp = (3 if self.gated_mlp else 2) * h * f
        if self.is_moe:
            return attention + self.experts * mlp + h * self.experts
        return attention + mlp

    def param_count(self, layers: int | None = None) -> int:
        return (self.layers if layers is None else layers) * self.params_per_layer()

    def with_layers(self, layers: int) -> ModelSpec:
        return replace(self, layers=layers)

    def with_seq_len(self, seq_len: int) -> ModelSpec:
        return replace(self, seq_len=seq_len)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ModelSpec:
        return _from_mapping(cls, data, "model")


@dataclass(frozen=True)
class ClusterSpec:
    """Per-GPU numbers except `cross_bw_gbs`, which is the per-node NIC aggregate"""

    gpus: int
    per_node: int
    peak_tflops: float
    local_bw_gbs: float
    cross_bw_gbs: float
    mem_gb: float
    hbm_bw_gbs: float = 2000.0
    efficiency: float = 0.5
    name: str = ""

    def __post_init__(self):
        where = f"cluster {self.name}" if self.name else "cluster"
        _require_positive(
            where,
            gpus=self.gpus,
            per_node=self.per_node,
            peak_tflops=self.peak_tflops,
            local_bw_gbs=self.local_bw_gbs,
            cross_bw_gbs=self.cross_bw_gbs,
            mem_gb=self.mem_gb,
            hbm_bw_gbs=self.hbm_bw_gbs,
            efficiency=self.efficiency,
        )
        if self.gpus % self.per_node:
            raise ConfigError(f"{where}: gpus {self.gpus} not divisible by per_node {self.per_node}")
        if self.efficiency > 1:
            raise ConfigError(f"{where}.efficiency: must be within (0, 1], got {self.efficiency}")

    @property
    def nodes(self) -> int:
        return self.gpus // self.per_node

    @property
    def peak_flops_per_us(self) -> float:
        return self.peak_tflops * tera * 1e-6

    @property
    def hbm_bytes_per_us(self) -> float:
        return self.hbm_bw_gbs * giga * 1e-6

    @property
    def local_bytes_per_us(self) -> float:
        return self.local_bw_gbs * giga * 1e-6 * self.efficiency

    @property
    def cross_bytes_per_us(self) -> float:
        return self.cross_bw_gbs / self.per_node * giga * 1e-6 * self.efficiency

    @property
    def capacity_bytes(self) -> int:
        return int(self.mem_gb * gibi)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ClusterSpec:
        return _from_mapping(cls, data, "cluster")


@dataclass(frozen=True)
class ParallelismSpec:
    dp: int = 1
    tp: int = 1
    pp: int = 1
    cp: int = 1
    ep: int = 1
    sp: bool | None = None
    micro_batch_size: int = 1
    microbatches: int = 8
    sequence_parallel: bool = field(init=False)

    def __post_init__(self):
        _require_positive(
            "parallelism",
            dp=self.dp,
            tp=self.tp,
            pp=self.pp,
            cp=self.cp,
            ep=self.ep,
            micro_batch_size=self.micro_batch_size,
            microbatches=self.microbatches,
        )
        if self.sp and self.tp == 1:
            raise ConfigError("parallelism.sp: sequence parallelism needs tp > 1")
        if self.dp % self.ep:
            raise ConfigError(f"parallelism.ep: {self.ep} does not divide dp {self.dp}")
        object.__setattr__(self, "sequence_parallel", self.tp > 1 if self.sp is None else bool(self.sp))

    @property
    def world(self) -> int:
        return self.dp * self.tp * self.pp * self.cp

    def check_cluster(self, cluster: ClusterSpec) -> None:
        if self.world != cluster.gpus:
            raise ConfigError(
                f"Inconsistent parallelism product: dp·tp·pp·cp = {self.world}, cluster has {cluster.gpus} GPUs"
            )

    def rebalanced(self, world: int, **dims: int) -> ParallelismSpec:
        """The layout with `dims` changed and dp taking every GPU of `world` the other dimensions leave"""
        layout = {"tp": self.tp, "pp": self.pp, "cp": self.cp, **dims}
        used = layout["tp"] * layout["pp"] * layout["cp"]
        if used < 1 or world % used:
            raise ConfigError(f"parallelism: tp·pp·cp = {used} does not divide {world} GPUs")
        return replace(self, **dims, dp=world // used)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ParallelismSpec:
        return _from_mapping(cls, data, "parallelism")
