#!/usr/bin/env python

from itertools import permutations
from json import loads

from numpy.random import default_rng
from pytest import mark, raises

from dgf_strandinterleave.errors import ConfigError, CycleError, MissingProfileEntryError
from dgf_strandinterleave.LayerDag import (
    LayerDag,
    OpNode,
    count_topological_orders,
    enumerate_topological_orders,
    validate_sequence,
)
from dgf_strandinterleave.LayerDagBuilder import build_layer_dag, load_template
from dgf_strandinterleave.OperatorClass import Lane, OperatorClass
from dgf_strandinterleave.OverlapTable import SoloTimeTable
from dgf_strandinterleave.Presets import cluster_preset, model_preset
from dgf_strandinterleave.Specs import ParallelismSpec


def _dag(n: int, edges, pass_kind: str = "forward") -> LayerDag:
    return LayerDag([OpNode(i, OperatorClass.GEMM, pass_kind, 1.0) for i in range(n)], edges, pass_kind)


def test_diamond_orders():
    dag = _dag(4, [(0, 1), (0, 2), (1, 3), (2, 3)])
    assert enumerate_topological_orders(dag) == [(0, 1, 2, 3), (0, 2, 1, 3)]
    assert count_topological_orders(dag) == 2
    assert validate_sequence(dag, (0, 2, 1, 3))
    assert not validate_sequence(dag, (1, 0, 2, 3))
    assert not validate_sequence(dag, (0, 1, 2))
    assert not validate_sequence(dag, (0, 1, 2, 2))


@mark.parametrize("cap", (1, 7, 200))
def test_antichain_orders(cap):
    dag = _dag(5, [])
    orders = enumerate_topological_orders(dag, cap)
    assert len(orders) == min(cap, 120)
    assert orders == sorted(orders)
    assert orders[0] == (0, 1, 2, 3, 4)
    assert count_topological_orders(dag) == 120


def test_cycle():
    with raises(CycleError):
        _dag(3, [(0, 1), (1, 2), (2, 0)])
    with raises(ConfigError):
        _dag(2, [(0, 5)])


@mark.parametrize(
    "par,n_fwd,n_bwd",
    (
        (dict(tp=8), 14, 18),
        (dict(tp=8, cp=2, dp=1), 15, 19),
        (dict(tp=8, sp=False), 12, 16),
        (dict(tp=1), 10, 14),
    ),
)
def test_dense_template_counts(par, n_fwd, n_bwd):
    fwd, bwd = build_layer_dag(model_preset("llama-8B"), ParallelismSpec(**par), cluster_preset("a800"))
    assert len(fwd) == n_fwd
    assert len(bwd) == n_bwd
    assert [node.id for node in fwd.nodes] == list(range(n_fwd))
    for dag in (fwd, bwd):
        orders = enumerate_topological_orders(dag, 8)
        assert all(validate_sequence(dag, order) for order in orders)
        assert all(node.duration_us > 0 for node in dag.nodes)


def test_dense_template_tp_payload():
    model, par = model_preset("llama-8B"), ParallelismSpec(tp=8)
    fwd, bwd = build_layer_dag(model, par, cluster_preset("a800"))
    payload = 7 / 8 * model.seq_len * model.hidden * 2
    tp_nodes = [node for dag in (fwd, bwd) for node in dag.comm_nodes()]
    assert len(tp_nodes) == 8
    assert all(node.nbytes == payload for node in tp_nodes)
    assert all(node.lane is Lane.local_comm for node in tp_nodes)
    assert fwd.count(OperatorClass.AllGather) == 2
    assert bwd.count(OperatorClass.ReduceScatter) == 2
    assert bwd.count(OperatorClass.WeightGrad) == 5


def test_tp_without_sp_doubles_payload():
    model = model_preset("llama-8B")
    fwd, _ = build_layer_dag(model, ParallelismSpec(tp=8, sp=False), cluster_preset("a800"))
    assert fwd.count(OperatorClass.AllGather) == 0
    assert all(node.nbytes == 2 * 7 / 8 * model.seq_len * model.hidden * 2 for node in fwd.comm_nodes())


def test_moe_template():
    fwd, bwd = build_layer_dag(model_preset("phi-16B"), ParallelismSpec(dp=4, ep=4, tp=2), cluster_preset("a800"))
    assert fwd.count(OperatorClass.AllToAll) == 2
    assert bwd.count(OperatorClass.AllToAll) == 2
    for dag in (fwd, bwd):
        assert dag.count(OperatorClass.Router) == 1
        assert dag.count(OperatorClass.Permute) == 2
        assert dag.count(OperatorClass.GroupGEMM) >= 1
    # a 2x4 expert group fits into one node
    assert all(node.lane is Lane.local_comm for node in fwd.comm_nodes() if node.op_class is OperatorClass.AllToAll)

    fwd, _ = build_layer_dag(model_preset("phi-16B"), ParallelismSpec(dp=8, ep=8, tp=2), cluster_preset("a800"))
    assert all(node.lane is Lane.cross_comm for node in fwd.comm_nodes() if node.op_class is OperatorClass.AllToAll)

    with raises(ConfigError):
        build_layer_dag(model_preset("llama-8B"), ParallelismSpec(dp=4, ep=4), cluster_preset("a800"))


def test_duration_sources():
    model, par = model_preset("llama-8B"), ParallelismSpec(tp=8)
    fwd, _ = build_layer_dag(model, par, cluster_preset("a800"))
    node = fwd.nodes[2]
    solo = SoloTimeTable({(node.op_class, node.shape): 123.0})
    fwd_solo, _ = build_layer_dag(model, par, cluster_preset("a800"), solo)
    assert fwd_solo.nodes[2].duration_us == 123.0
    assert fwd_solo.nodes[3].duration_us == fwd.nodes[3].duration_us

    with raises(MissingProfileEntryError):
        build_layer_dag(model, par, None, solo)
    with raises(ConfigError):
        build_layer_dag(model, par)


def test_dag_json(testname):
    fwd, _ = build_layer_dag(model_preset("gpt-6.7B"), ParallelismSpec(tp=4), cluster_preset("a100"))
    text = fwd.to_json()
    with open(f"output/{testname}.json", "w") as f:
        f.write(text)
    data = loads(text)
    assert data["pass"] == "forward"
    assert len(data["nodes"]) == len(fwd)
    assert [tuple(edge) for edge in data["edges"]] == list(fwd.edges)


def test_template_errors(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text('{\n  "forward": {\n    "nodes": [,]\n  }\n}\n')
    with raises(ConfigError, match=":3:"):
        load_template(broken)

    wrong = tmp_path / "wrong.json"
    wrong.write_text('{"forward": {"nodes": [{"id": 0, "klass": "GEMM"}]}, "backward": {"nodes": []}}')
    with raises(ConfigError, match="forward.nodes.0"):
        load_template(wrong)


def _random_dag(rng, n: int, density: float) -> LayerDag:
    # sparse, shuffled ids so that order and id are unrelated
    ids = [int(i) for i in rng.permutation(n) * 3 + 7]
    edges = [(ids[a], ids[b]) for a in range(n) for b in range(a + 1, n) if rng.random() < density]
    return LayerDag([OpNode(i, OperatorClass.GEMM, "backward", 1.0) for i in ids], edges, "backward")


def _respects(dag: LayerDag, seq) -> bool:
    return all(seq.index(producer) < seq.index(consumer) for producer, consumer in dag.edges)


@mark.parametrize("density", (0.0, 0.3, 0.6))
def test_orders_match_permutations(density):
    rng = default_rng(11)
    for n in range(1, 7):
        dag = _random_dag(rng, n, density)
        expected = sorted(seq for seq in permutations(dag.ids) if _respects(dag, seq))
        assert count_topological_orders(dag) == len(expected)
        assert enumerate_topological_orders(dag, 1000) == expected
        for cap in (1, 2, 5):
            assert enumerate_topological_orders(dag, cap) == expected[:cap]


def test_validate_sequence_random():
    rng = default_rng(12)
    for _ in range(40):
        dag = _random_dag(rng, int(rng.integers(1, 7)), 0.4)
        ids = list(dag.ids)
        for _ in range(10):
            seq = [int(i) for i in rng.permutation(ids)]
            match int(rng.integers(3)):
                case 1:
                    seq[int(rng.integers(len(seq)))] = int(rng.choice(ids))
                case 2:
                    seq = seq[:-1]
            expected = sorted(seq) == sorted(ids) and _respects(dag, seq)
            assert validate_sequence(dag, seq) == expected


def test_build_layer_dag_deterministic():
    for model, par in (
        ("llama-8B", dict(tp=8)),
        ("llama-8B", dict(tp=8, cp=2, dp=1)),
        ("phi-16B", dict(dp=4, ep=4, tp=2)),
    ):
        first = build_layer_dag(model_preset(model), ParallelismSpec(**par), cluster_preset("a800"))
        second = build_layer_dag(model_preset(model), ParallelismSpec(**par), cluster_preset("a800"))
        for a, b in zip(first, second):
            assert a.to_json() == b.to_json()
            assert enumerate_topological_orders(a, 4) == enumerate_topological_orders(b, 4)
