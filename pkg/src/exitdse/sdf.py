"""SDF graph / topology-matrix model of an early-exit design.

The topology matrix has one row per edge and one column per node. Backbone
edges come first (in declaration order of their consumer), then one row per
candidate exit. ``Gamma = C * R`` elementwise, where ``C`` holds the signed
connectivity and ``R`` the normalised production/consumption rates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .network import DesignPoint, NetworkError, NetworkSpec, check_design

DENSE_LIMIT = 256
RESIDUAL_TOL = 1e-9


class SdfError(ValueError):
    """Malformed rates or topology."""


@dataclass(frozen=True)
class ExitRateVector:
    """Marginal stop fractions.

    ``r_exit[k]`` is the fraction of all samples stopping at candidate exit
    ``k`` (declaration order, zero when not instantiated); ``r_final`` is the
    fraction reaching the final classifier, fallbacks included.
    """

    r_exit: np.ndarray
    r_final: float

    def __post_init__(self):
        r = np.asarray(self.r_exit, dtype=float)
        r.setflags(write=False)
        object.__setattr__(self, "r_exit", r)
        object.__setattr__(self, "r_final", float(self.r_final))

    @property
    def total(self) -> float:
        return float(self.r_exit.sum() + self.r_final)

    @classmethod
    def no_exit(cls, n_exits: int) -> "ExitRateVector":
        return cls(np.zeros(n_exits), 1.0)

    @classmethod
    def from_marginals(cls, r_exit) -> "ExitRateVector":
        """Exit fractions only; the remainder reaches the final classifier."""
        r = np.asarray(r_exit, dtype=float)
        return cls(r, max(0.0, 1.0 - float(r.sum())))


@dataclass(frozen=True)
class SdfGraph:
    nodes: tuple[str, ...]
    node_kind: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    live: tuple[bool, ...]
    n_backbone: int
    n_backbone_edges: int
    exit_attach: tuple[int, ...]
    # deepest backbone index any sample can execute
    stop_limit: int

    @property
    def n_exits(self) -> int:
        return len(self.exit_attach)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def live_exits(self) -> list[int]:
        nbe = self.n_backbone_edges
        return [k for k in range(self.n_exits) if self.live[nbe + k]]


def build_graph(net: NetworkSpec, design: DesignPoint) -> SdfGraph:
    check_design(net, design)
    ids = net.node_ids
    if len(set(ids)) != len(ids):
        raise NetworkError("duplicate node ids")
    nb = net.n_backbone
    kinds = ["backbone"] * (nb - 1) + ["final-classifier"] + ["exit"] * net.n_exits
    bb_edges = net.backbone_edges()
    attach = []
    for k, e in enumerate(net.candidate_exits):
        a = net.node_index(e.attach_after)
        if a >= nb:
            raise NetworkError(f"exit {e.id!r}: unknown attach point {e.attach_after!r}")
        attach.append(a)
    exit_edges = [(a, nb + k) for k, a in enumerate(attach)]
    if design.terminal_exit is None:
        stop_limit = nb - 1
    else:
        stop_limit = attach[design.terminal_exit]
    live = [True] * len(bb_edges) + [
        bool(design.p_exit[k]) and attach[k] <= stop_limit for k in range(net.n_exits)
    ]
    return SdfGraph(
        nodes=tuple(ids),
        node_kind=tuple(kinds),
        edges=tuple(bb_edges + exit_edges),
        live=tuple(live),
        n_backbone=nb,
        n_backbone_edges=len(bb_edges),
        exit_attach=tuple(attach),
        stop_limit=stop_limit,
    )


def _dense(x) -> np.ndarray:
    return x.toarray() if sp.issparse(x) else np.asarray(x)


@dataclass(frozen=True)
class TopologyMatrix:
    C: np.ndarray | sp.csr_array
    R: np.ndarray | sp.csr_array
    n_backbone: int
    n_backbone_edges: int
    nodes: tuple[str, ...] = ()

    @property
    def shape(self) -> tuple[int, int]:
        return self.C.shape

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.C)

    @property
    def gamma(self):
        if self.is_sparse:
            return sp.csr_array(self.C.multiply(self.R))
        return self.C * self.R

    def dense(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        C, R = _dense(self.C), _dense(self.R)
        return C, R, C * R

    def blocks(self, which: str = "gamma") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Split into (B, O, E): backbone block, its zero companion, exit rows."""
        C, R, G = self.dense()
        M = {"gamma": G, "C": C, "R": R}[which]
        nbr, nb = self.n_backbone_edges, self.n_backbone
        return M[:nbr, :nb], M[:nbr, nb:], M[nbr:, :]

    @staticmethod
    def assemble(B: np.ndarray, E: np.ndarray) -> np.ndarray:
        nbr = B.shape[0]
        return np.vstack([np.hstack([B, np.zeros((nbr, E.shape[1] - B.shape[1]), B.dtype)]), E])

    def check(self) -> None:
        C, R, _ = self.dense()
        if not np.isin(C, (-1, 0, 1)).all():
            raise SdfError("C entries must be in {-1, 0, 1}")
        if ((C == 1).sum(axis=1) > 1).any() or ((C == -1).sum(axis=1) > 1).any():
            raise SdfError("each row of C needs at most one producer and one consumer")
        if (R < 0).any() or (R > 1).any():
            raise SdfError("R entries must lie in [0, 1]")
        if not np.all(R[C == -1] == 1.0):
            raise SdfError("consumption rates must be exactly 1")
        _, O, _ = self.blocks("C")
        if O.any():
            raise SdfError("backbone rows touch exit columns")


def survival(
    n_backbone: int, r_layer: np.ndarray, r_final: float, live_pos, stop_limit: int
) -> np.ndarray:
    """Fraction of samples reaching each backbone node.

    ``r_layer[i]`` is the marginal stop fraction at backbone position ``i``
    and ``live_pos`` the positions carrying an instantiated exit.
    """
    live_pos = sorted(live_pos)
    reach = np.empty(n_backbone)
    for i in range(n_backbone):
        if i > stop_limit:
            reach[i] = 0.0
        elif not live_pos or live_pos[0] >= i:
            reach[i] = 1.0
        else:
            # suffix sum keeps exact zeros where nothing stops deeper
            reach[i] = min(r_final + float(r_layer[i:].sum()), 1.0)
    return reach


def backbone_rates(edges, reach: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Backbone block of R: conditional survival on production, 1 on consumption."""
    R = np.zeros(shape)
    for row, (src, dst) in enumerate(edges):
        R[row, src] = reach[dst] / reach[src] if reach[src] > 0 else 0.0
        R[row, dst] = 1.0
    return R


def build_matrices(graph: SdfGraph, rates: ExitRateVector) -> TopologyMatrix:
    r = rates.r_exit
    if len(r) != graph.n_exits:
        raise SdfError(f"expected {graph.n_exits} exit rates, got {len(r)}")
    if (r < 0).any() or rates.r_final < 0:
        raise SdfError("exit rates must be non-negative")
    if rates.total > 1 + 1e-9:
        raise SdfError(f"exit rates sum to {rates.total} > 1")
    live = set(graph.live_exits())
    for k in range(graph.n_exits):
        if k not in live and r[k] != 0:
            raise SdfError(f"non-instantiated exit {k} has nonzero rate {r[k]}")
    if graph.stop_limit < graph.n_backbone - 1 and rates.r_final != 0:
        raise SdfError("truncated design cannot route samples to the final classifier")

    nb, nbe = graph.n_backbone, graph.n_backbone_edges
    r_layer = np.zeros(nb)
    for k in live:
        r_layer[graph.exit_attach[k]] = r[k]
    reach = survival(nb, r_layer, rates.r_final, [graph.exit_attach[k] for k in live], graph.stop_limit)
    n_e, n_v = len(graph.edges), graph.n_nodes
    C = np.zeros((n_e, n_v), dtype=np.int8)
    R = np.zeros((n_e, n_v))
    R[:nbe, :nb] = backbone_rates(graph.edges[:nbe], reach, (nbe, nb))
    for row, (src, dst) in enumerate(graph.edges):
        if row < nbe:
            C[row, src], C[row, dst] = 1, -1
        else:
            # exit heads see every sample reaching their attach point
            R[row, src] = R[row, dst] = 1.0
            if graph.live[row]:
                C[row, src], C[row, dst] = 1, -1
    if n_v > DENSE_LIMIT:
        return TopologyMatrix(sp.csr_array(C), sp.csr_array(R), graph.n_backbone, nbe, graph.nodes)
    return TopologyMatrix(C, R, graph.n_backbone, nbe, graph.nodes)


@dataclass(frozen=True)
class RateVector:
    q: np.ndarray
    residual: float

    def __post_init__(self):
        self.q.setflags(write=False)

    def __len__(self):
        return len(self.q)


def _edge_list(C) -> list[tuple[int, int, int]]:
    """(row, producer, consumer) for every live row of C."""
    coo = sp.coo_array(C) if not sp.issparse(C) else C.tocoo()
    prod, cons = {}, {}
    for i, j, v in zip(coo.row, coo.col, coo.data):
        if v == 1:
            prod[int(i)] = int(j)
        elif v == -1:
            cons[int(i)] = int(j)
    rows = sorted(set(prod) | set(cons))
    out = []
    for i in rows:
        if i not in prod or i not in cons:
            raise SdfError(f"edge row {i} lacks a producer or a consumer")
        out.append((i, prod[i], cons[i]))
    return out


def propagate_rates(topo: TopologyMatrix, tol: float = RESIDUAL_TOL) -> RateVector:
    """Forward-propagate execution rates, then verify ``Gamma q = 0``."""
    G = topo.gamma
    Gd = G.tocsr() if sp.issparse(G) else G
    Rd = topo.R.tocsr() if sp.issparse(topo.R) else topo.R
    n_v = topo.shape[1]
    incoming: dict[int, list[tuple[int, int]]] = {}
    for row, p, c in _edge_list(topo.C):
        if p >= c:
            raise SdfError(f"edge row {row} points backwards ({p} -> {c})")
        incoming.setdefault(c, []).append((row, p))
    q = np.zeros(n_v)
    q[0] = 1.0
    for j in range(1, n_v):
        ins = incoming.get(j)
        if not ins:
            continue
        vals = [Gd[row, p] * q[p] / Rd[row, j] for row, p in ins]
        if max(vals) - min(vals) > tol:
            raise SdfError(f"inconsistent rates at join node {j}: {vals}")
        q[j] = vals[0]
    if (q < -tol).any() or (q > 1 + tol).any():
        raise SdfError("execution rates left [0, 1]")
    res = float(np.abs(G @ q).max()) if topo.shape[0] else 0.0
    if res > tol:
        raise SdfError(f"residual |Gamma q| = {res:.3e} exceeds {tol}")
    return RateVector(q, res)


def design_rates(net: NetworkSpec, design: DesignPoint, rates: ExitRateVector) -> tuple[TopologyMatrix, RateVector]:
    topo = build_matrices(build_graph(net, design), rates)
    return topo, propagate_rates(topo)


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def export_sdf(topo: TopologyMatrix, q: RateVector, out_dir: str | Path, header: str | None = None) -> list[Path]:
    """Write gamma.csv, C.csv, R.csv (one row per edge) and q.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    C, R, G = topo.dense()
    nodes = list(topo.nodes) or [str(i) for i in range(topo.shape[1])]
    labels = []
    for row in range(C.shape[0]):
        src = np.flatnonzero(C[row] == 1)
        dst = np.flatnonzero(C[row] == -1)
        labels.append(f"{nodes[src[0]]}->{nodes[dst[0]]}" if len(src) and len(dst) else f"e{row + 1}:dead")
    written = []
    for name, M, fmt in (("gamma", G, _fmt), ("C", C, lambda v: str(int(v))), ("R", R, _fmt)):
        path = out / f"{name}.csv"
        with path.open("w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(["edge"] + nodes)
            for lab, row in zip(labels, M):
                w.writerow([lab] + [fmt(v) for v in row])
        written.append(path)
    path = out / "q.csv"
    with path.open("w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["q"])
        for v in q.q:
            w.writerow([_fmt(v)])
    written.append(path)
    return written
