from __future__ import annotations

from enum import Enum

from .errors import ConfigError


class Lane(Enum):
    compute = "compute"
    local_comm = "local_comm"
    cross_comm = "cross_comm"

    @property
    def is_comm(self) -> bool:
        return self is not Lane.compute


class OperatorClass(Enum):
    """Operator bases of a transformer layer and the lane each one occupies by default"""

    GEMM = "GEMM"
    FlashAttention = "FlashAttention"
    FlashAttentionBwd = "FlashAttentionBwd"
    GroupGEMM = "GroupGEMM"
    FusedBDA = "FusedBDA"
    LayerNorm = "LayerNorm"
    Router = "Router"
    Permute = "Permute"
    WeightGrad = "WeightGrad"
    AllGather = "AllGather"
    ReduceScatter = "ReduceScatter"
    AllToAll = "AllToAll"
    SendRecv = "SendRecv"

    @property
    def lane(self) -> Lane:
        return _default_lanes.get(self, Lane.compute)

    @property
    def is_comm(self) -> bool:
        return self.lane.is_comm

    @classmethod
    def parse(cls, name: str | OperatorClass) -> OperatorClass:
        if isinstance(name, OperatorClass):
            return name
        try:
            return cls[name]
        except KeyError as e:
            raise ConfigError(f"Invalid operator class {name!r}") from e


_default_lanes = {
    OperatorClass.AllGather: Lane.local_comm,
    OperatorClass.ReduceScatter: Lane.local_comm,
    OperatorClass.AllToAll: Lane.cross_comm,
    OperatorClass.SendRecv: Lane.cross_comm,
}

# integer codes shared with the numba kernels
lane_codes = {Lane.compute: 0, Lane.local_comm: 1, Lane.cross_comm: 2}
class_codes = {cls: i for i, cls in enumerate(OperatorClass)}
