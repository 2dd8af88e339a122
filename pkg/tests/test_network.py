import json

import pytest

from exitdse.fixtures import worked_network
from exitdse.network import (
    DesignPoint,
    NetworkError,
    NetworkSpec,
    enumerate_designs,
    in_space,
    iter_designs,
    load_design,
    load_network,
    save_network,
)
from exitdse.sdf import build_graph

from helpers import residual_network


def _write(tmp_path, data, name="net.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def chain_dict(n=5, exits=(("e1", "L2"), ("e2", "L4"))):
    return {
        "name": "chain",
        "backbone": [{"id": f"L{i}", "preds": [f"L{i - 1}"] if i > 1 else []} for i in range(1, n + 1)],
        "candidate_exits": [{"id": a, "attach_after": b} for a, b in exits],
    }


def test_load_five_layer_chain(tmp_path):
    net = load_network(_write(tmp_path, chain_dict()))
    assert (net.n_backbone, net.n_exits, net.n_nodes) == (5, 2, 7)
    assert net.node_ids == ["L1", "L2", "L3", "L4", "L5", "e1", "e2"]
    assert net.backbone[net.terminal].id == "L5"


def test_single_layer_exit_on_terminal_rejected(tmp_path):
    data = {"name": "x", "backbone": [{"id": "L1", "preds": []}],
            "candidate_exits": [{"id": "e", "attach_after": "L1"}]}
    with pytest.raises(NetworkError, match="terminal"):
        load_network(_write(tmp_path, data))


def test_residual_join_accepted():
    net = residual_network()
    assert net.backbone_edges() == [(0, 1), (1, 2), (1, 3), (2, 3), (3, 4)]
    g = build_graph(net, DesignPoint((1, 1), 0.6))
    assert g.n_backbone_edges == 5  # more rows than a chain of 5 would have


@pytest.mark.parametrize(
    "mutate, msg",
    [
        (lambda d: d["backbone"][2]["preds"].__setitem__(0, "nope"), "predecessor"),
        (lambda d: d["backbone"][3].__setitem__("id", "L2"), "duplicate"),
        (lambda d: d["candidate_exits"][0].__setitem__("attach_after", "L9"), "unknown attach"),
        (lambda d: d["candidate_exits"][1].__setitem__("attach_after", "L5"), "terminal"),
        (lambda d: d["candidate_exits"][1].__setitem__("attach_after", "L2"), "already used"),
        (lambda d: d["candidate_exits"][1].__setitem__("id", "L3"), "duplicate"),
        (lambda d: d.__setitem__("candidate_exits", []), "at least one"),
        (lambda d: d["backbone"].append({"id": "L6", "preds": ["L4"]}), "exactly one terminal"),
        (lambda d: d["backbone"][2].__setitem__("preds", []), "source"),
        (lambda d: d.pop("backbone"), "missing field"),
    ],
)
def test_schema_violations(tmp_path, mutate, msg):
    data = chain_dict()
    mutate(data)
    with pytest.raises(NetworkError, match=msg):
        load_network(_write(tmp_path, data))


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(NetworkError, match="invalid JSON"):
        load_network(p)


def test_save_reload_keeps_indices(tmp_path):
    net = worked_network()
    save_network(net, tmp_path / "n.json")
    again = load_network(tmp_path / "n.json")
    assert again == net
    assert again.node_ids == net.node_ids
    assert [again.node_index(n) for n in net.node_ids] == list(range(net.n_nodes))


@pytest.mark.parametrize("n, grid, expected", [(3, (0.4, 0.6, 0.8), 23), (1, (0.5,), 1), (10, (0.4, 0.6, 0.8), 3071)])
def test_enumerate_designs(n, grid, expected):
    net = NetworkSpec.chain("c", n + 1, range(n))
    assert enumerate_designs(net, grid) == expected
    designs = list(iter_designs(net, grid))
    assert len(designs) == expected
    assert len(set(designs)) == expected
    assert all(in_space(d, grid) for d in designs)


def test_space_excludes_only_plain_network_at_lowest_threshold():
    grid = (0.4, 0.6, 0.8)
    assert not in_space(DesignPoint((0, 0), 0.4), grid)
    assert in_space(DesignPoint((0, 0), 0.6), grid)
    assert in_space(DesignPoint((1, 0), 0.4), grid)
    assert not in_space(DesignPoint((1, 0), 0.5), grid)
    assert not in_space(DesignPoint((1, 0), 0.4, terminal_exit=0), grid)


def test_design_point_invariants():
    d = DesignPoint((1, 0, 1), 0.6)
    assert d.n_exit == 2 and d.live_exits == [0, 2] and d.bits == "101"
    with pytest.raises(NetworkError):
        DesignPoint((2, 0), 0.5)
    with pytest.raises(NetworkError):
        DesignPoint((1, 0), 1.5)
    with pytest.raises(NetworkError):
        DesignPoint((0, 1), 0.5, terminal_exit=0)


@pytest.mark.parametrize("c", [0.6, 0.1 + 0.2, 1 / 3, 0.85, 0.0, 1.0])
def test_design_json_round_trip(tmp_path, c):
    d = DesignPoint((1, 0, 1), c)
    blob = d.to_dict("chain")
    assert isinstance(blob["c_thr"], str)
    p = tmp_path / "d.json"
    p.write_text(json.dumps(blob))
    back = load_design(p)
    assert back == d
    assert back.c_thr.hex() == d.c_thr.hex()


def test_load_design_accepts_wrapped_result(tmp_path):
    p = tmp_path / "best.json"
    p.write_text(json.dumps({"design": {"p_exit": [0, 1], "c_thr": "0.85"}, "score": 1}))
    assert load_design(p) == DesignPoint((0, 1), 0.85)
    p.write_text(json.dumps({"c_thr": "0.85"}))
    with pytest.raises(NetworkError, match="design schema"):
        load_design(p)


def test_exit_depth_order_follows_attach_points():
    net = worked_network()
    assert [net.candidate_exits[k].id for k in net.exit_depth_order] == ["exit1", "exit2"]
    assert [net.attach_index(k) for k in range(2)] == [3, 1]
