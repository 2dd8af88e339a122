"""Design tuning as algebraic operations on (C, R).

``exitrepos`` masks rows of the all-exits block with ``diag(p_exit)`` and
leaves the backbone block of C untouched; ``conftune`` keeps C and only
refreshes R. Both refresh the backbone production rates from memoised exit
rates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import scipy.sparse as sp

from .calibration import CalibrationTrace, evaluate
from .network import DEFAULT_THRESHOLDS, DesignPoint, NetworkError, NetworkSpec, in_space
from .sdf import (
    DENSE_LIMIT,
    ExitRateVector,
    TopologyMatrix,
    backbone_rates,
    build_graph,
    build_matrices,
    survival,
)


@dataclass(frozen=True)
class ExitRepos:
    p_exit: tuple[int, ...]

    @property
    def n_exit(self) -> int:
        return sum(self.p_exit)


@dataclass(frozen=True)
class ConfTune:
    c_thr: float


Transformation = Union[ExitRepos, ConfTune]


@dataclass(frozen=True)
class SdfState:
    design: DesignPoint
    topo: TopologyMatrix
    rates: ExitRateVector


class TransformEngine:
    """Applies transformations for one network / calibration trace binding."""

    def __init__(
        self,
        net: NetworkSpec,
        trace: CalibrationTrace,
        thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
        adjacency_prior: bool = False,
    ):
        trace.check_bound(net)
        self.net = net
        self.trace = trace
        self.thresholds = tuple(sorted(float(t) for t in thresholds))
        self.adjacency_prior = adjacency_prior
        full = build_graph(net, DesignPoint((1,) * net.n_exits, self.thresholds[-1]))
        topo = build_matrices(full, ExitRateVector.no_exit(net.n_exits))
        C, _, _ = topo.dense()
        nbe, nb = full.n_backbone_edges, net.n_backbone
        self._bb_edges = full.edges[:nbe]
        self.B_C = C[:nbe, :nb].copy()
        self.E_C_all = C[nbe:, :].copy()
        self.E_R = np.abs(self.E_C_all).astype(float)
        # depth rank of every candidate exit, for the adjacency rule
        self.rank = {k: r for r, k in enumerate(net.exit_depth_order)}
        for a in (self.B_C, self.E_C_all, self.E_R):
            a.setflags(write=False)

    # -- construction -------------------------------------------------

    def from_scratch(self, design: DesignPoint) -> SdfState:
        rates = evaluate(self.trace, self.net, design).exit_rates
        return SdfState(design, build_matrices(build_graph(self.net, design), rates), rates)

    def overprovisioned(self, c_thr: float | None = None) -> SdfState:
        c = self.thresholds[-1] if c_thr is None else c_thr
        return self.from_scratch(DesignPoint((1,) * self.net.n_exits, c))

    # -- transformations ----------------------------------------------

    def violates_prior(self, p_exit: Sequence[int]) -> bool:
        ranks = sorted(self.rank[k] for k, b in enumerate(p_exit) if b)
        return any(b - a == 1 for a, b in zip(ranks, ranks[1:]))

    def apply(self, state: SdfState, t: Transformation) -> SdfState:
        design = state.design
        nbe, nb = self.B_C.shape
        C, _, _ = state.topo.dense()
        if isinstance(t, ExitRepos):
            p = tuple(int(b) for b in t.p_exit)
            if len(p) != self.net.n_exits:
                raise NetworkError(f"p_exit must have length {self.net.n_exits}")
            if self.adjacency_prior and self.violates_prior(p):
                raise NetworkError(f"p_exit {p} places exits in adjacent positions")
            E_sel = np.diag(np.array(p, dtype=np.int8))
            E_C = (E_sel @ self.E_C_all).astype(np.int8)
            C = TopologyMatrix.assemble(self.B_C, E_C)
            design = DesignPoint(p, design.c_thr)
        elif isinstance(t, ConfTune):
            if float(t.c_thr) not in self.thresholds:
                raise NetworkError(f"c_thr {t.c_thr} is not on the grid {self.thresholds}")
            E_C = C[nbe:, :]
            design = DesignPoint(design.p_exit, t.c_thr)
        else:
            raise TypeError(f"unknown transformation {t!r}")

        rates = evaluate(self.trace, self.net, design).exit_rates
        r_layer = E_C[:, :nb].T @ rates.r_exit
        live_pos = np.flatnonzero((E_C[:, :nb] == 1).any(axis=0))
        reach = survival(nb, r_layer, rates.r_final, live_pos, nb - 1)
        B_R = backbone_rates(self._bb_edges, reach, (nbe, nb))
        R = TopologyMatrix.assemble(B_R, self.E_R)
        nodes = tuple(self.net.node_ids)
        if C.shape[1] > DENSE_LIMIT:
            topo = TopologyMatrix(sp.csr_array(C), sp.csr_array(R), nb, nbe, nodes)
        else:
            topo = TopologyMatrix(C, R, nb, nbe, nodes)
        return SdfState(design, topo, rates)

    # -- neighbourhood ------------------------------------------------

    def neighbours(self, design: DesignPoint, prior: bool | None = None) -> list[DesignPoint]:
        """Designs one bit-flip or one threshold-grid step away, in a fixed order."""
        prior = self.adjacency_prior if prior is None else prior
        out: list[DesignPoint] = []
        seen = {design}
        p = list(design.p_exit)
        live_ranks = {self.rank[k] for k, b in enumerate(p) if b}
        for k in range(len(p)):
            q = p.copy()
            q[k] ^= 1
            r = self.rank[k]
            if q[k] and prior and (r - 1 in live_ranks or r + 1 in live_ranks):
                continue
            out.append(DesignPoint(tuple(q), design.c_thr))
        i = self.thresholds.index(design.c_thr)
        for j in (i - 1, i + 1):
            if 0 <= j < len(self.thresholds):
                out.append(DesignPoint(design.p_exit, self.thresholds[j]))
        result = []
        for d in out:
            if d not in seen and in_space(d, self.thresholds):
                seen.add(d)
                result.append(d)
        return result
