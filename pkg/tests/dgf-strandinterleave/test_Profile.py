#!/usr/bin/env python

from json import dump

from pytest import mark, raises

from dgf_strandinterleave.errors import ConfigError, MissingProfileEntryError
from dgf_strandinterleave.LayerDagBuilder import build_layer_dag
from dgf_strandinterleave.OperatorClass import OperatorClass
from dgf_strandinterleave.OverlapTable import OverlapTable, SoloTimeTable
from dgf_strandinterleave.Presets import cluster_preset, model_preset
from dgf_strandinterleave.Profile import (
    archetypes,
    load_profile,
    profile_to_dict,
    save_profile,
    synth_profile,
    validate_profile,
)
from dgf_strandinterleave.SIPlanSearch import SearchCaps, search_si_plan
from dgf_strandinterleave.Specs import ParallelismSpec

_gemm, _ag, _a2a, _sr = OperatorClass.GEMM, OperatorClass.AllGather, OperatorClass.AllToAll, OperatorClass.SendRecv


@mark.parametrize("archetype", archetypes)
@mark.parametrize("seed", (None, 0, 17))
def test_synth_profile(archetype, seed):
    solo, overlap = synth_profile(archetype, seed)
    assert validate_profile(solo, overlap) == []
    assert len(solo) > 0

    comp_comm = overlap.lookup(_gemm, _ag)
    local_cross = overlap.lookup(_ag, _a2a)
    comp_comp = overlap.lookup(_gemm, OperatorClass.FlashAttention)
    same_comm = overlap.lookup(_ag, _ag)
    assert comp_comm > local_cross > max(comp_comp, same_comm)
    # above the break-even factors of the default interference
    assert comp_comm > 0.51
    assert local_cross > 0.61
    assert overlap.lookup(_a2a, _sr) == local_cross or seed is not None


@mark.parametrize("archetype", archetypes)
def test_synth_profile_seeded(archetype):
    _, plain = synth_profile(archetype)
    _, jittered = synth_profile(archetype, 5)
    _, again = synth_profile(archetype, 5)
    assert jittered == again
    assert jittered != plain
    assert all(abs(value - plain.lookup(a, b)) <= 0.03 + 1e-6 for (a, b), value in jittered.items())


def test_synth_profile_unknown():
    with raises(ConfigError, match="pcie_a40"):
        synth_profile("tpu_v5")


def test_validate_profile():
    solo = SoloTimeTable({(_gemm, "x"): 1.0, (_ag, "y"): 2.0})
    problems = validate_profile(solo, OverlapTable({(_gemm, _gemm): 1.03}))
    assert len(problems) == 2
    assert any("missing" in problem for problem in problems)
    assert any("within tolerance" in problem for problem in problems)


def test_profile_file(testname):
    tables = synth_profile("nvlink_a800", 3)
    path = save_profile(tables, f"output/{testname}.json", hardware="nvlink_a800")
    assert load_profile(path) == tables


def test_profile_file_errors(tmp_path):
    with raises(ConfigError, match="not found"):
        load_profile(tmp_path / "absent.json")

    broken = tmp_path / "broken.json"
    broken.write_text('{\n"solo": [\n')
    with raises(ConfigError, match=":3:"):
        load_profile(broken)

    duplicated = tmp_path / "duplicated.json"
    with duplicated.open("w") as f:
        dump({"solo": [{"class": "GEMM", "shape": "x", "t_us": 1.0}] * 2}, f)
    with raises(ConfigError, match="duplicate"):
        load_profile(duplicated)

    out_of_range = tmp_path / "range.json"
    with out_of_range.open("w") as f:
        dump({"oef": [{"a": "GEMM", "b": "AllGather", "value": 1.5}]}, f)
    with raises(ConfigError, match="oef.0.value"):
        load_profile(out_of_range)


def test_profile_without_a_class(tmp_path):
    solo, overlap = synth_profile("pcie_a40")
    data = profile_to_dict(solo, overlap)
    data["oef"] = [entry for entry in data["oef"] if "ReduceScatter" not in (entry["a"], entry["b"])]
    path = tmp_path / "no_reduce_scatter.json"
    with path.open("w") as f:
        dump(data, f)

    # loading is lazy about completeness, only a lookup of the absent class fails
    loaded_solo, loaded = load_profile(path)
    assert len(loaded) == len(data["oef"])
    assert loaded.lookup(_gemm, _ag) == overlap.lookup(_gemm, _ag)
    assert any("ReduceScatter" in problem for problem in validate_profile(loaded_solo, loaded))
    with raises(MissingProfileEntryError, match="ReduceScatter"):
        loaded.lookup(_gemm, OperatorClass.ReduceScatter)

    par = ParallelismSpec(dp=8, tp=8)
    fwd, bwd = build_layer_dag(model_preset("llama-8B"), par, cluster_preset("a40"), loaded_solo)
    assert fwd.count(OperatorClass.ReduceScatter) > 0
    with raises(MissingProfileEntryError, match="ReduceScatter"):
        search_si_plan(fwd, bwd, (loaded_solo, loaded), SearchCaps(2, 2, 16))


def test_profile_without_solo_times(tmp_path):
    solo, overlap = synth_profile("pcie_a40")
    data = profile_to_dict(solo, overlap)
    data["solo"] = [entry for entry in data["solo"] if entry["class"] != "FlashAttention"]
    path = tmp_path / "no_flash_attention.json"
    with path.open("w") as f:
        dump(data, f)

    loaded_solo, _ = load_profile(path)
    assert OperatorClass.FlashAttention not in loaded_solo.classes()
    with raises(MissingProfileEntryError, match="No solo time for FlashAttention"):
        build_layer_dag(model_preset("llama-8B"), ParallelismSpec(dp=8, tp=8), None, loaded_solo)
