#!/usr/bin/env python

from json import dump, loads

from pytest import fixture, mark, raises

from dgf_strandinterleave.cli import main

_scenario_yaml = """\
name: cli
model: {model}
cluster: a40
parallelism: {{tp: 8, pp: {pp}, microbatches: 8}}
archetype: pcie_a40
caps: {{sequences: 2, segments: 2, candidates: 32}}
"""


@fixture
def scenario(tmp_path):
    path = tmp_path / "scenario.yaml"
    path.write_text(_scenario_yaml.format(model="llama-8B", pp=2))
    return path


def _run(capsys, *argv):
    code = main([str(arg) for arg in argv])
    return code, capsys.readouterr().out


def test_presets(capsys):
    code, out = _run(capsys, "presets")
    assert code == 0
    data = loads(out)
    assert "llama-25B" in data["models"]
    assert "a40" in data["clusters"]


@mark.parametrize("kind", ("profile", "scenario", "template"))
def test_schema(capsys, kind):
    code, out = _run(capsys, "schema", kind)
    assert code == 0
    assert loads(out)["properties"]


def test_profile_commands(capsys, tmp_path):
    code, _ = _run(capsys, "--out", tmp_path, "--seed", 3, "profile", "synth", "nvlink_h100")
    assert code == 0
    path = tmp_path / "nvlink_h100.json"
    assert path.exists()

    code, out = _run(capsys, "--profile", path, "profile", "validate")
    assert code == 0
    assert loads(out)["problems"] == []

    noisy = tmp_path / "noisy.json"
    with noisy.open("w") as f:
        dump({"oef": [{"a": "GEMM", "b": "AllGather", "value": 1.03}]}, f)
    code, out = _run(capsys, "--profile", noisy, "profile", "validate")
    assert code == 2
    assert loads(out)["problems"]


def test_pipeline_command(capsys, tmp_path):
    code, out = _run(capsys, "--out", tmp_path, "--trace", "pipeline", "w_shape", "-m", 8, "-p", 4)
    assert code == 0
    data = loads(out)
    assert data["problems"] == []
    assert data["pp_transfers"] == 4 * 8 * 3
    assert (tmp_path / "schedule_w_shape.csv").exists()
    assert (tmp_path / "trace_w_shape.json").exists()

    code, _ = _run(capsys, "--out", tmp_path, "pipeline", "one_f_one_b", "-m", 8, "-p", 4, "--durations", "F=1,B=x")
    assert code == 2


def test_scenario_commands(capsys, tmp_path, scenario):
    out_dir = tmp_path / "out"
    code, out = _run(capsys, "--scenario", scenario, "--out", out_dir, "search")
    assert code == 0
    assert loads(out)["total_us"] <= loads(out)["sequential_us"]
    assert (out_dir / "plan.json").exists()

    code, out = _run(capsys, "--scenario", scenario, "--out", out_dir, "memory")
    assert code == 0
    data = loads(out)
    assert set(data["disciplines"]) == {"w_shape", "one_f_one_b", "bidirectional"}
    assert (out_dir / "memory_w_shape.csv").exists()

    code, out = _run(capsys, "--scenario", scenario, "--out", out_dir, "estimate", "dhelix")
    assert code == 0
    assert loads(out)["discipline"] == "w_shape"

    code, out = _run(capsys, "--scenario", scenario, "--out", out_dir, "--workers", 2, "compare")
    assert code == 0
    rows = loads(out)["rows"]
    assert rows[0]["plan_source"] == "megatron_baseline"
    assert rows[0]["speedup"] == 1.0
    assert (out_dir / "report.json").exists()


def test_compare_grid(capsys, tmp_path, scenario):
    code, out = _run(capsys, "--scenario", scenario, "--out", tmp_path, "compare", "--grid", "seq")
    assert code == 0
    data = loads(out)
    assert data["sweep"] == "seq"
    assert data["skipped"] == []
    assert {row["point"] for row in data["rows"]} == {"seq_len=8192", "seq_len=16384"}
    assert (tmp_path / "sweep_seq.json").exists()
    assert (tmp_path / "sweep_seq.csv").exists()

    with raises(SystemExit) as exc:
        _run(capsys, "--scenario", scenario, "--out", tmp_path, "compare", "--grid", "dp")
    assert exc.value.code == 2


def test_exit_codes(capsys, tmp_path, scenario):
    assert main(["search"]) == 2

    unknown = tmp_path / "unknown.yaml"
    unknown.write_text(_scenario_yaml.format(model="llama-8B", pp=2) + "colour: red\n")
    assert main(["--scenario", str(unknown), "--out", str(tmp_path), "estimate", "megatron_baseline"]) == 2

    unfoldable = tmp_path / "unfoldable.yaml"
    unfoldable.write_text(_scenario_yaml.format(model="llama-25B", pp=8))
    assert main(["--scenario", str(unfoldable), "--out", str(tmp_path), "estimate", "dhelix"]) == 3

    empty = tmp_path / "empty.json"
    empty.write_text('{"oef": []}')
    args = ["--scenario", str(scenario), "--profile", str(empty), "--out", str(tmp_path), "estimate"]
    assert main([*args, "megatron_baseline"]) == 0
    assert main([*args, "dhelix"]) == 4


@mark.parametrize("argv", (["--caps", "seq=0", "search"], ["-v", "-q", "presets"], ["pipeline", "zigzag"]))
def test_invalid_arguments(argv):
    with raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2
