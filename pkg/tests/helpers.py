"""Random instance generators and independent reference builders for the tests."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from exitdse.calibration import CalibrationTrace, store_trace
from exitdse.fixtures import worked_network, worked_trace, synthetic_benchmark
from exitdse.network import DesignPoint, NetworkSpec, save_network
from exitdse.perf import DeviceProfile, store_profile

GRID = (0.4, 0.6, 0.8)
# coarse confidence values so that ties and exact threshold hits occur often
CONF_LEVELS = np.array([0.0, 0.2, 0.4, 0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 1.0])


def random_network(rng: np.random.Generator, max_layers: int = 9, skip_prob: float = 0.3) -> NetworkSpec:
    """Backbone DAG in topological declaration order with occasional skip edges."""
    nb = int(rng.integers(2, max_layers + 1))
    backbone = []
    for i in range(nb):
        preds = [] if i == 0 else [f"L{i}"]
        if i >= 2 and rng.random() < skip_prob:
            preds.append(f"L{int(rng.integers(1, i))}")
        backbone.append({"id": f"L{i + 1}", "preds": preds})
    slots = list(range(nb - 1))
    n_exits = int(rng.integers(1, len(slots) + 1))
    chosen = [int(s) for s in rng.choice(slots, size=n_exits, replace=False)]
    exits = [{"id": f"X{a + 1}", "attach_after": f"L{a + 1}"} for a in chosen]
    return NetworkSpec.from_dict({"name": "rand", "backbone": backbone, "candidate_exits": exits})


def random_trace(rng: np.random.Generator, net: NetworkSpec, n: int | None = None, coarse: bool | None = None):
    n = int(rng.integers(1, 60)) if n is None else n
    k = net.n_exits + 1
    coarse = bool(rng.random() < 0.5) if coarse is None else coarse
    conf = rng.choice(CONF_LEVELS, size=(n, k)) if coarse else rng.random((n, k))
    return CalibrationTrace(conf, rng.random((n, k)) < 0.6)


def random_design(rng, net: NetworkSpec, grid=GRID, terminal: bool = False) -> DesignPoint:
    p = tuple(int(b) for b in rng.random(net.n_exits) < 0.5)
    c = float(grid[int(rng.integers(len(grid)))])
    t = None
    if terminal and any(p) and rng.random() < 0.3:
        live = [k for k, b in enumerate(p) if b]
        t = int(rng.choice(live))
    return DesignPoint(p, c, t)


def random_profile(rng, net: NetworkSpec) -> DeviceProfile:
    lat = np.round(rng.uniform(0.1, 5.0, net.n_nodes), 3)
    mem = rng.integers(1, 10_000, net.n_nodes)
    return DeviceProfile("rand", lat, mem)


def reference_matrices(net: NetworkSpec, design: DesignPoint, r_exit, r_final):
    """C and R built from plain adjacency lists, without touching exitdse.sdf.

    Survival is counted per node: the rate of a node is the share of samples
    that did not stop at any live exit attached to a strictly earlier
    position in declaration order.
    """
    ids = [l.id for l in net.backbone] + [e.id for e in net.candidate_exits]
    col = {nid: j for j, nid in enumerate(ids)}
    succ: dict[str, list[str]] = {l.id: [] for l in net.backbone}
    edges = []
    for l in net.backbone:
        for p in l.preds:
            edges.append((p, l.id))
            succ[p].append(l.id)
    nb = len(net.backbone)
    stop_at = {}
    for k, e in enumerate(net.candidate_exits):
        if design.p_exit[k]:
            stop_at[col[e.attach_after]] = r_exit[k]
    reach = []
    for i in range(nb):
        left = 1.0 - sum(v for pos, v in stop_at.items() if pos < i)
        # 1 - sum leaves round-off where nothing survives
        left = 0.0 if abs(left) < 1e-12 else left
        reach.append(1.0 if not any(pos < i for pos in stop_at) else left)
    n_e = len(edges) + net.n_exits
    C = np.zeros((n_e, len(ids)))
    R = np.zeros((n_e, len(ids)))
    for row, (a, b) in enumerate(edges):
        i, j = col[a], col[b]
        C[row, i], C[row, j] = 1, -1
        R[row, i] = reach[j] / reach[i] if reach[i] else 0.0
        R[row, j] = 1.0
    for k, e in enumerate(net.candidate_exits):
        row = len(edges) + k
        i, j = col[e.attach_after], col[e.id]
        R[row, i] = R[row, j] = 1.0
        if design.p_exit[k]:
            C[row, i], C[row, j] = 1, -1
    return C, R, np.array(reach)


def residual_network() -> NetworkSpec:
    """Five layers with a skip connection L2 -> L4 around L3."""
    return NetworkSpec.from_dict(
        {
            "name": "resblock",
            "backbone": [
                {"id": "L1", "preds": []},
                {"id": "L2", "preds": ["L1"]},
                {"id": "L3", "preds": ["L2"]},
                {"id": "L4", "preds": ["L2", "L3"]},
                {"id": "L5", "preds": ["L4"]},
            ],
            "candidate_exits": [
                {"id": "E2", "attach_after": "L2"},
                {"id": "E3", "attach_after": "L3"},
            ],
        }
    )


def trace_with_rates(net: NetworkSpec, design: DesignPoint, counts: list[int]) -> CalibrationTrace:
    """Trace in which ``counts[i]`` samples stop at the i-th live classifier by depth."""
    live = [k for k in net.exit_depth_order if design.p_exit[k]] + [net.n_exits]
    rows = []
    for pos, cnt in enumerate(counts):
        for _ in range(cnt):
            r = np.zeros(net.n_exits + 1)
            r[live[pos]] = 1.0
            rows.append(r)
    conf = np.array(rows)
    return CalibrationTrace(conf, np.ones_like(conf, dtype=bool))


def write_fixture_files(d: Path) -> dict[str, Path]:
    d.mkdir(parents=True, exist_ok=True)
    net = worked_network()
    paths = {
        "worked_net": d / "worked.json",
        "worked_trace": d / "worked.csv",
        "unit": d / "unit.csv",
        "worked_design": d / "worked_design.json",
        "syn_net": d / "syn.json",
        "syn_trace": d / "syn.csv",
        "syn_profile": d / "syn_profile.csv",
    }
    save_network(net, paths["worked_net"])
    store_trace(worked_trace(), paths["worked_trace"])
    store_profile(DeviceProfile.uniform(net), net, paths["unit"])
    paths["worked_design"].write_text(json.dumps(DesignPoint((0, 1), 0.85).to_dict(net.name)))
    snet, strace, sprof = synthetic_benchmark()
    save_network(snet, paths["syn_net"])
    store_trace(strace, paths["syn_trace"])
    store_profile(sprof, snet, paths["syn_profile"])
    return paths
