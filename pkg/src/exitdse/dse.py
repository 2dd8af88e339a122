"""Objective, Pareto bookkeeping and the search strategies over the design space."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .calibration import CalibrationTrace, evaluate
from .network import (
    DEFAULT_THRESHOLDS,
    DesignPoint,
    NetworkSpec,
    enumerate_designs,
    in_space,
    iter_designs,
)
from .perf import (
    DesignMetrics,
    DeviceProfile,
    deployed_memory,
    expected_latency,
    worst_case_latency,
)
from .sdf import build_graph, build_matrices, propagate_rates
from .transforms import TransformEngine

log = logging.getLogger(__name__)

NEG_INF = float("-inf")


class SearchError(RuntimeError):
    pass


@dataclass(frozen=True)
class Objective:
    w_lat: float
    a_max: float
    l_max: float
    eps_ms: float | None = None
    m_max: int | None = None
    latency_mode: str = "expected"

    def __post_init__(self):
        if self.w_lat <= 0:
            raise ValueError("w_lat must be positive")
        if self.a_max <= 0 or self.l_max <= 0:
            raise ValueError("reference accuracy and latency must be positive")
        if self.latency_mode not in ("expected", "worst-case"):
            raise ValueError(f"unknown latency mode {self.latency_mode!r}")

    @classmethod
    def reference(
        cls,
        net: NetworkSpec,
        trace: CalibrationTrace,
        profile: DeviceProfile,
        w_lat: float = 1.0,
        **constraints,
    ) -> "Objective":
        """Normalise by the original network: final-classifier accuracy, no-exit latency."""
        a_max = float(trace.correct[:, -1].mean())
        plain = DesignPoint((0,) * net.n_exits, 1.0)
        l_max = _metrics(net, trace, profile, plain).expected_latency_ms
        return cls(w_lat, a_max, l_max, **constraints)

    def with_weight(self, w_lat: float) -> "Objective":
        return Objective(w_lat, self.a_max, self.l_max, self.eps_ms, self.m_max, self.latency_mode)

    def constrained_latency(self, m: DesignMetrics) -> float:
        return m.expected_latency_ms if self.latency_mode == "expected" else m.worst_case_latency_ms

    def violation(self, m: DesignMetrics) -> float:
        v = 0.0
        if self.eps_ms is not None:
            v += max(0.0, self.constrained_latency(m) - self.eps_ms) / self.eps_ms
        if self.m_max is not None:
            v += max(0.0, m.memory_bytes - self.m_max) / max(self.m_max, 1)
        return v

    def feasible(self, m: DesignMetrics) -> bool:
        return self.violation(m) == 0.0


def score(design: DesignPoint, obj: Objective, metrics: DesignMetrics) -> float:
    """Normalised accuracy minus log-damped latency cost; -inf when infeasible."""
    if not obj.feasible(metrics):
        return NEG_INF
    return metrics.accuracy / obj.a_max - obj.w_lat * math.log(
        metrics.expected_latency_ms / obj.l_max + 1.0
    )


def _metrics(net, trace, profile, design) -> DesignMetrics:
    res = evaluate(trace, net, design)
    q = propagate_rates(build_matrices(build_graph(net, design), res.exit_rates))
    return DesignMetrics(
        accuracy=res.accuracy,
        expected_latency_ms=expected_latency(profile, q),
        worst_case_latency_ms=worst_case_latency(profile, net, design),
        memory_bytes=deployed_memory(profile, net, design),
    )


def design_metrics(
    net: NetworkSpec, trace: CalibrationTrace, profile: DeviceProfile, design: DesignPoint
) -> DesignMetrics:
    """Accuracy by memoised lookup, latency and memory through the SDF model."""
    return _metrics(net, trace, profile, design)


class Evaluator:
    """Cached design evaluation; the cache may be shared between runs."""

    def __init__(self, net, trace, profile, obj: Objective, cache: dict | None = None):
        self.net, self.trace, self.profile, self.obj = net, trace, profile, obj
        self.cache = {} if cache is None else cache
        self.distinct: dict[DesignPoint, None] = {}

    def metrics(self, design: DesignPoint) -> DesignMetrics:
        m = self.cache.get(design)
        if m is None:
            m = self.cache[design] = _metrics(self.net, self.trace, self.profile, design)
        self.distinct[design] = None
        return m

    def __call__(self, design: DesignPoint) -> tuple[DesignMetrics, float]:
        m = self.metrics(design)
        return m, score(design, self.obj, m)


def dominates(a: DesignMetrics, b: DesignMetrics) -> bool:
    """Accuracy up, expected latency down, memory down."""
    ge = (
        a.accuracy >= b.accuracy
        and a.expected_latency_ms <= b.expected_latency_ms
        and a.memory_bytes <= b.memory_bytes
    )
    return ge and a.as_tuple() != b.as_tuple()


class ParetoFront:
    def __init__(self, items: Iterable[tuple[DesignPoint, DesignMetrics]] = ()):
        self._items: list[tuple[DesignPoint, DesignMetrics]] = []
        for d, m in items:
            self.add(d, m)

    def add(self, design: DesignPoint, metrics: DesignMetrics) -> bool:
        for d, m in self._items:
            if d == design or dominates(m, metrics) or m.as_tuple() == metrics.as_tuple():
                return False
        self._items = [(d, m) for d, m in self._items if not dominates(metrics, m)]
        self._items.append((design, metrics))
        return True

    def merge(self, other: "ParetoFront") -> "ParetoFront":
        out = ParetoFront(self._items)
        for d, m in other:
            out.add(d, m)
        return out

    @property
    def members(self) -> list[tuple[DesignPoint, DesignMetrics]]:
        return sorted(
            self._items,
            key=lambda dm: (dm[1].expected_latency_ms, -dm[1].accuracy, dm[1].memory_bytes, dm[0].bits, dm[0].c_thr),
        )

    def __iter__(self):
        return iter(self.members)

    def __len__(self):
        return len(self._items)

    def __contains__(self, design: DesignPoint) -> bool:
        return any(d == design for d, _ in self._items)

    def is_non_dominated(self) -> bool:
        ms = [m for _, m in self._items]
        return not any(dominates(a, b) for a in ms for b in ms)

    def covers(self, other: "ParetoFront") -> bool:
        """Every member of ``other`` is matched or dominated by a member of self."""
        return self.coverage(other) == 1.0

    def coverage(self, other: "ParetoFront") -> float:
        """Fraction of ``other`` weakly dominated by some member of self (set coverage)."""
        if not len(other):
            return 1.0
        mine = [m for _, m in self._items]
        hit = sum(
            any(dominates(a, b) or a.as_tuple() == b.as_tuple() for a in mine) for _, b in other
        )
        return hit / len(other)

    def outperforms(self, other: "ParetoFront") -> bool:
        """Self covers a larger share of ``other`` than ``other`` covers of self."""
        return self.coverage(other) > other.coverage(self)


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_pareto(front: ParetoFront, obj: Objective, path: str | Path, comment: str | None = None) -> None:
    rows = [(d, m, score(d, obj, m)) for d, m in front]
    write_design_rows(rows, path, comment)


def write_design_rows(rows, path: str | Path, comment: str | None = None) -> None:
    with Path(path).open("w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["p_exit", "c_thr", "accuracy", "exp_latency_ms", "wc_latency_ms", "mem_bytes", "score"])
        for d, m, s in rows:
            w.writerow(
                [
                    d.bits,
                    repr(d.c_thr),
                    _fmt(m.accuracy),
                    _fmt(m.expected_latency_ms),
                    _fmt(m.worst_case_latency_ms),
                    m.memory_bytes,
                    _fmt(s) if math.isfinite(s) else "-inf",
                ]
            )


@dataclass
class SearchResult:
    best: DesignPoint
    metrics: DesignMetrics
    score: float
    front: ParetoFront
    feasible: bool
    n_evaluations: int
    log: list[dict] = field(default_factory=list)
    evaluated: list[DesignPoint] = field(default_factory=list)


class _Tracker:
    """Best feasible design, least-violating fallback and the running front."""

    def __init__(self, obj: Objective):
        self.obj = obj
        self.front = ParetoFront()
        self.best: tuple | None = None
        self.least_bad: tuple | None = None

    def see(self, design: DesignPoint, m: DesignMetrics, s: float) -> None:
        if math.isfinite(s):
            self.front.add(design, m)
            key = (s, -m.memory_bytes)
            if self.best is None or key > self.best[0]:
                self.best = (key, design, m, s)
        else:
            v = self.obj.violation(m)
            if self.least_bad is None or v < self.least_bad[0]:
                self.least_bad = (v, design, m, s)

    def result(self, n_eval: int, log_rows, evaluated) -> SearchResult:
        if self.best is not None:
            _, d, m, s = self.best
            return SearchResult(d, m, s, self.front, True, n_eval, log_rows, evaluated)
        if self.least_bad is None:
            raise SearchError("nothing was evaluated")
        _, d, m, s = self.least_bad
        return SearchResult(d, m, s, self.front, False, n_eval, log_rows, evaluated)


def brute_force(
    net: NetworkSpec,
    trace: CalibrationTrace,
    profile: DeviceProfile,
    obj: Objective,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    cap: int = 1 << 16,
    jobs: int = 1,
    cache: dict | None = None,
) -> SearchResult:
    """Exhaustive enumeration of the design space."""
    size = enumerate_designs(net, thresholds)
    if size > cap:
        raise SearchError(f"design space has {size} points, above the brute-force cap {cap}")
    ev = Evaluator(net, trace, profile, obj, cache)
    designs = list(iter_designs(net, thresholds))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(ev, designs))
    else:
        results = [ev(d) for d in designs]
    tracker = _Tracker(obj)
    for d, (m, s) in zip(designs, results):
        tracker.see(d, m, s)
    return tracker.result(len(designs), [], designs)


@dataclass(frozen=True)
class SaConfig:
    t0: float | None = None  # None: calibrate for the target acceptance
    cooling: float = 0.95
    iters_per_temp: int = 50
    t_min: float = 1e-4
    seed: int = 0
    time_budget_s: float | None = None
    max_evaluations: int | None = None
    adjacency_prior: bool = True
    refine: bool = True
    refine_sweeps: int = 3
    restarts: int = 0
    exhaust: bool = False
    calib_samples: int = 100
    target_acceptance: float = 0.8

    def __post_init__(self):
        if not 0 < self.cooling < 1:
            raise ValueError("cooling factor must lie in (0, 1)")
        if self.iters_per_temp < 1 or self.calib_samples < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.t_min <= 0:
            raise ValueError("minimum temperature must be positive")


def _random_design(engine: TransformEngine, rng: np.random.Generator, prior: bool) -> DesignPoint:
    net, grid = engine.net, engine.thresholds
    while True:
        p = [0] * net.n_exits
        last = -2
        for k in net.exit_depth_order:
            r = engine.rank[k]
            if rng.random() < 0.5 and not (prior and r == last + 1):
                p[k] = 1
                last = r
        d = DesignPoint(tuple(p), grid[int(rng.integers(len(grid)))])
        if in_space(d, grid):
            return d


def _accept(delta: float, cur: float, cand: float, temp: float, rng) -> bool:
    if not math.isfinite(cur):
        return True
    if not math.isfinite(cand):
        return False
    if delta >= 0:
        return True
    return rng.random() < math.exp(delta / temp)


def _calibrate_t0(ev: Evaluator, engine, rng, cfg: SaConfig) -> float:
    # calibration may spend at most half of an evaluation cap
    cap = None if cfg.max_evaluations is None else max(1, cfg.max_evaluations // 2)
    drops = []
    for _ in range(cfg.calib_samples):
        if cap is not None and len(ev.distinct) >= cap:
            break
        s = _random_design(engine, rng, cfg.adjacency_prior)
        nbrs = engine.neighbours(s)
        if not nbrs:
            continue
        n = nbrs[int(rng.integers(len(nbrs)))]
        d = ev(n)[1] - ev(s)[1]
        if math.isfinite(d) and d < 0:
            drops.append(d)
    if not drops:
        return 1.0
    return float(np.mean(drops)) / math.log(cfg.target_acceptance)


def _exit_moves(engine: TransformEngine, design: DesignPoint, k: int) -> list[DesignPoint]:
    """Shift exit ``k`` to a free neighbouring slot, add a neighbour, or drop it."""
    order = engine.net.exit_depth_order
    r = engine.rank[k]
    p = list(design.p_exit)
    out = []
    for nr in (r - 1, r + 1):
        if 0 <= nr < len(order) and not p[order[nr]]:
            add = p.copy()
            add[order[nr]] = 1
            shift = add.copy()
            shift[k] = 0
            out += [shift, add]
    drop = p.copy()
    drop[k] = 0
    out.append(drop)
    return [DesignPoint(tuple(q), design.c_thr) for q in out]


def _refine(ev: Evaluator, engine: TransformEngine, start: DesignPoint, tracker: _Tracker, cfg, log_rows):
    """Per-exit steepest ascent around the chosen exits, adjacency allowed."""
    cur = start
    cur_s = ev(cur)[1]
    for sweep in range(cfg.refine_sweeps):
        improved = False
        for k in sorted(cur.live_exits, key=engine.rank.get):
            if not cur.p_exit[k]:
                continue
            best, best_s = None, cur_s
            for d in _exit_moves(engine, cur, k):
                if not in_space(d, engine.thresholds):
                    continue
                m, s = ev(d)
                tracker.see(d, m, s)
                log_rows.append({"phase": "refine", "sweep": sweep, "design": d.bits, "c_thr": d.c_thr,
                                 "score": s if math.isfinite(s) else None})
                if s > best_s:
                    best, best_s = d, s
            if best is not None:
                cur, cur_s, improved = best, best_s, True
        if not improved:
            break
    return cur


def optimize(
    net: NetworkSpec,
    trace: CalibrationTrace,
    profile: DeviceProfile,
    obj: Objective,
    cfg: SaConfig = SaConfig(),
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    cache: dict | None = None,
) -> SearchResult:
    """Simulated annealing over the transformation neighbourhood."""
    engine = TransformEngine(net, trace, thresholds, cfg.adjacency_prior)
    ev = Evaluator(net, trace, profile, obj, cache)
    rng = np.random.default_rng(cfg.seed)
    tracker = _Tracker(obj)
    log_rows: list[dict] = []
    space = enumerate_designs(net, thresholds)
    started = time.monotonic()

    def out_of_budget() -> bool:
        if cfg.max_evaluations is not None and len(ev.distinct) >= cfg.max_evaluations:
            return True
        return cfg.time_budget_s is not None and time.monotonic() - started > cfg.time_budget_s

    def see(d):
        m, s = ev(d)
        tracker.see(d, m, s)
        return s

    t0 = cfg.t0 if cfg.t0 is not None else _calibrate_t0(ev, engine, rng, cfg)
    for d in list(ev.distinct):
        see(d)
    log.debug("initial temperature %.4g", t0)
    it = 0
    chain = 0
    start = _random_design(engine, rng, cfg.adjacency_prior)
    while True:
        cur = start
        cur_s = see(cur)
        temp = t0
        while temp > cfg.t_min and not out_of_budget():
            for _ in range(cfg.iters_per_temp):
                nbrs = engine.neighbours(cur)
                if not nbrs:
                    break
                cand = nbrs[int(rng.integers(len(nbrs)))]
                cand_s = see(cand)
                delta = cand_s - cur_s if math.isfinite(cand_s) and math.isfinite(cur_s) else 0.0
                acc = _accept(delta, cur_s, cand_s, temp, rng)
                log_rows.append({"phase": "anneal", "chain": chain, "iteration": it, "temperature": temp,
                                 "design": cand.bits, "c_thr": cand.c_thr,
                                 "score": cand_s if math.isfinite(cand_s) else None, "accepted": acc})
                it += 1
                if acc:
                    cur, cur_s = cand, cand_s
                if out_of_budget():
                    break
            temp *= cfg.cooling
        chain += 1
        more = chain <= cfg.restarts or (cfg.exhaust and len(ev.distinct) < space)
        if not more or out_of_budget():
            break
        if cfg.exhaust and chain > cfg.restarts:
            unseen = [d for d in iter_designs(net, thresholds) if d not in ev.distinct]
            start = unseen[int(rng.integers(len(unseen)))]
        else:
            start = _random_design(engine, rng, cfg.adjacency_prior)

    if cfg.refine and tracker.best is not None:
        _refine(ev, engine, tracker.best[1], tracker, cfg, log_rows)
    return tracker.result(len(ev.distinct), log_rows, list(ev.distinct))


def random_search(
    net: NetworkSpec,
    trace: CalibrationTrace,
    profile: DeviceProfile,
    obj: Objective,
    budget: int,
    seed: int = 0,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    cache: dict | None = None,
) -> SearchResult:
    """Uniform sampling with replacement; ``budget`` counts draws, repeats included."""
    designs = list(iter_designs(net, thresholds))
    rng = np.random.default_rng(seed)
    ev = Evaluator(net, trace, profile, obj, cache)
    tracker = _Tracker(obj)
    for i in rng.integers(len(designs), size=budget):
        d = designs[int(i)]
        m, s = ev(d)
        tracker.see(d, m, s)
    return tracker.result(len(ev.distinct), [], list(ev.distinct))


@dataclass(frozen=True)
class WlatRow:
    w_lat: float
    design: DesignPoint
    metrics: DesignMetrics
    score: float


@dataclass(frozen=True)
class WlatTuning:
    chosen: float
    knee_latency_ms: float
    rows: list[WlatRow]


KNEE_GAIN = 0.005  # half an accuracy point


def select_knee(rows: Sequence[WlatRow]) -> tuple[float, float]:
    """Pick the weight at the knee of the accuracy/latency table.

    Walk from the largest weight (fastest design) toward smaller ones and
    stop at the first design whose next slower step gains less than half
    an accuracy point; then take the most accurate design no slower than it.
    """
    by_w = sorted(rows, key=lambda r: -r.w_lat)
    knee = by_w[-1].metrics.expected_latency_ms
    for cur, nxt in zip(by_w, by_w[1:]):
        if nxt.metrics.accuracy - cur.metrics.accuracy < KNEE_GAIN:
            knee = cur.metrics.expected_latency_ms
            break
    ok = [r for r in by_w if r.metrics.expected_latency_ms <= knee]
    best = max(ok, key=lambda r: (r.metrics.accuracy, -r.metrics.expected_latency_ms, r.w_lat))
    return best.w_lat, knee


def tune_wlat(
    net: NetworkSpec,
    trace: CalibrationTrace,
    profile: DeviceProfile,
    grid: Sequence[float],
    base: Objective | None = None,
    cfg: SaConfig = SaConfig(),
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    method: str = "sa",
) -> WlatTuning:
    if not grid:
        raise ValueError("latency-weight grid is empty")
    base = base or Objective.reference(net, trace, profile)
    cache: dict = {}
    rows = []
    for w in sorted(grid):
        obj = base.with_weight(w)
        if method == "brute":
            res = brute_force(net, trace, profile, obj, thresholds, cache=cache)
        else:
            res = optimize(net, trace, profile, obj, cfg, thresholds, cache=cache)
        rows.append(WlatRow(w, res.best, res.metrics, res.score))
    chosen, knee = select_knee(rows)
    return WlatTuning(chosen, knee, rows)
