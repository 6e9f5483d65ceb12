from __future__ import annotations

from .errors import ConfigError
from .Specs import ClusterSpec, ModelSpec

# hidden, intermediate, layers, default sequence length
_dense_models = {
    "llama-8B": ("llama", 4096, 14336, 32, 8192),
    "llama-25B": ("llama", 8192, 28672, 28, 8192),
    "llama-39B": ("llama", 16384, 53248, 12, 8192),
    "llama-66B": ("llama", 8192, 28672, 76, 16384),
    "gpt-6.7B": ("gpt", 4096, 16384, 32, 8192),
    "gpt-18B": ("gpt", 6144, 24576, 40, 8192),
    "gpt-30B": ("gpt", 12288, 49152, 16, 8192),
}

# 16 experts, top-2 routing, sequence length 3072
_moe_models = {
    "phi-16B": 12,
    "phi-31B": 24,
    "phi-42B": 32,
}

_clusters = {
    "a40": dict(gpus=64, per_node=8, peak_tflops=149.7, local_bw_gbs=32.0, cross_bw_gbs=12.5, mem_gb=48.0, hbm_bw_gbs=696.0),
    "a800": dict(gpus=64, per_node=8, peak_tflops=312.0, local_bw_gbs=400.0, cross_bw_gbs=100.0, mem_gb=80.0, hbm_bw_gbs=2039.0),
    "a100": dict(gpus=8, per_node=8, peak_tflops=312.0, local_bw_gbs=600.0, cross_bw_gbs=25.0, mem_gb=80.0, hbm_bw_gbs=2039.0),
    "h100": dict(gpus=32, per_node=8, peak_tflops=989.0, local_bw_gbs=900.0, cross_bw_gbs=400.0, mem_gb=80.0, hbm_bw_gbs=3350.0),
}


def _lookup(catalog, name: str, kind: str) -> str:
    folded = {key.lower(): key for key in catalog}
    try:
        return folded[name.lower()]
    except KeyError as e:
        raise ConfigError(f"Unknown {kind} preset {name!r}, known: {', '.join(catalog)}") from e


def model_preset(name: str) -> ModelSpec:
    catalog = {**_dense_models, **_moe_models}
    key = _lookup(catalog, name, "model")
    if key in _moe_models:
        return ModelSpec("phi_moe", 4096, 6400, _moe_models[key], 3072, experts=16, topk=2, name=key)
    family, hidden, intermediate, layers, seq_len = _dense_models[key]
    return ModelSpec(family, hidden, intermediate, layers, seq_len, name=key)


def cluster_preset(name: str, **overrides) -> ClusterSpec:
    key = _lookup(_clusters, name, "cluster")
    return ClusterSpec(**{**_clusters[key], **overrides, "name": key})


def list_presets() -> dict[str, dict]:
    return {
        "models": {name: model_preset(name) for name in (*_dense_models, *_moe_models)},
        "clusters": {name: cluster_preset(name) for name in _clusters},
    }
