from __future__ import annotations

from typing import TYPE_CHECKING, Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConfigError

if TYPE_CHECKING:
    from collections.abc import Mapping

LaneName = Literal["compute", "local_comm", "cross_comm"]
PlanSourceName = Literal["megatron_baseline", "intra_batch", "wavelet_rr", "dhelix"]
ArchetypeName = Literal["pcie_a40", "nvlink_a800", "nvlink_h100"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class TemplateNodeModel(_Strict):
    id: int = Field(ge=0)
    op_class: str = Field(alias="class")
    pass_kind: Literal["forward", "backward"] | None = Field(default=None, alias="pass")
    name: str = ""
    shape: str = ""
    when: Literal["tp", "sp", "cp", "ep", "gated"] | None = None
    lane: LaneName | None = None


class TemplatePassModel(_Strict):
    nodes: list[TemplateNodeModel]
    edges: list[tuple[int, int]] = []


class TemplateModel(_Strict):
    name: str = ""
    description: str = ""
    forward: TemplatePassModel
    backward: TemplatePassModel


class SoloEntryModel(_Strict):
    op_class: str = Field(alias="class")
    shape: str = ""
    t_us: float = Field(gt=0)


class OefEntryModel(_Strict):
    a: str
    b: str
    value: float = Field(ge=-0.05, le=1.05)


class SegmentEntryModel(_Strict):
    a: list[str] = Field(min_length=1)
    b: list[str] = Field(min_length=1)
    p_us: float = Field(gt=0)


class InterferenceModel(_Strict):
    slowdown_factor: float = Field(default=0.25, ge=0, le=1)
    launch_overhead_frac: float = Field(default=0.15, ge=0)


class MetadataModel(BaseModel):
    model_config = ConfigDict(extra="allow")

    hardware: str = ""
    created: str = ""


class ProfileModel(_Strict):
    """On-disk profile: solo times, pairwise overlap factors and interference parameters"""

    solo: list[SoloEntryModel] = []
    oef: list[OefEntryModel] = []
    interference: InterferenceModel = InterferenceModel()
    segments: list[SegmentEntryModel] = []
    metadata: MetadataModel = MetadataModel()


class CapsModel(_Strict):
    sequences: int = Field(default=16, ge=1)
    segments: int = Field(default=6, ge=1)
    candidates: int = Field(default=256, ge=1)


class ScenarioModel(_Strict):
    """
    On-disk scenario. `model` and `cluster` are preset names or mappings;
    a mapping with a `preset` key starts from that preset and overrides the rest.
    """

    name: str = ""
    model: str | dict[str, Any]
    cluster: str | dict[str, Any]
    parallelism: dict[str, Any] = {}
    archetype: ArchetypeName | None = None
    profile: str | None = None
    template: str | None = None
    plan_sources: list[PlanSourceName] = ["megatron_baseline", "intra_batch", "wavelet_rr", "dhelix"]
    caps: CapsModel = CapsModel()
    seed: int | None = None
    workers: int = Field(default=1, ge=1)
    barrier_us: float = Field(default=0.0, ge=0)
    p2p_latency_us: float = Field(default=0.0, ge=0)
    slack_mb: float = Field(default=512.0, ge=0)
    intra_batch_hidden_frac: float = Field(default=0.261, ge=0, le=1)


def format_validation_error(error: ValidationError, where: str) -> str:
    problems = []
    for item in error.errors():
        path = ".".join(str(part) for part in item["loc"]) or "<root>"
        problems.append(f"{path}: {item['msg']}")
    return f"{where}: " + "; ".join(problems)


def validate_document(model: type[BaseModel], data: Mapping[str, Any] | Any, where: str):
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(format_validation_error(e, where)) from e


def json_schema(kind: str) -> dict[str, Any]:
    match kind:
        case "profile":
            return ProfileModel.model_json_schema(by_alias=True)
        case "scenario":
            return ScenarioModel.model_json_schema(by_alias=True)
        case "template":
            return TemplateModel.model_json_schema(by_alias=True)
        case _:
            raise ConfigError(f"Invalid schema kind {kind!r}")
