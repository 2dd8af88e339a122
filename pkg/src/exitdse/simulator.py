"""Per-sample replay of the exit policy, budget truncation and synthetic traces.

The replay here deliberately avoids the vectorised evaluator and the matrix
model so it can serve as an oracle for both.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .calibration import CalibrationTrace
from .network import DesignPoint, NetworkSpec, check_design
from .perf import DesignMetrics, DeviceProfile, deployed_memory, worst_case_latency
from .sdf import ExitRateVector


@dataclass(frozen=True)
class SampleOutcome:
    sample_id: int
    stop_pos: int
    classifier: int  # trace column of the classifier whose label was used
    correct: bool
    latency_ms: float
    fallback: bool


@dataclass(frozen=True)
class SimResult:
    outcomes: list[SampleOutcome]
    metrics: DesignMetrics
    exit_rates: ExitRateVector
    node_rates: np.ndarray


def _classifiers(net: NetworkSpec, design: DesignPoint) -> list[tuple[int, int, int | None]]:
    """(trace column, backbone position, head node) for each live classifier by depth."""
    nb = net.n_backbone
    if design.terminal_exit is None:
        limit = nb - 1
    else:
        limit = net.node_index(net.candidate_exits[design.terminal_exit].attach_after)
    out = []
    for k, e in enumerate(net.candidate_exits):
        pos = net.node_index(e.attach_after)
        if design.p_exit[k] and pos <= limit:
            out.append((k, pos, nb + k))
    out.sort(key=lambda c: c[1])
    if design.terminal_exit is None:
        out.append((net.n_exits, nb - 1, None))
    return out


def simulate(
    net: NetworkSpec, design: DesignPoint, trace: CalibrationTrace, profile: DeviceProfile
) -> SimResult:
    check_design(net, design)
    if trace.n_classifiers != net.n_exits + 1:
        raise ValueError("trace is bound to a different network")
    if len(profile) != net.n_nodes:
        raise ValueError("profile is bound to a different network")
    clfs = _classifiers(net, design)
    lat = [float(v) for v in profile.latency_ms]
    thr = design.c_thr
    outcomes = []
    stops = [0] * trace.n_classifiers
    n_correct = 0
    executed_count = [0] * net.n_nodes
    for s in range(trace.n_samples):
        conf = trace.conf[s]
        stop = None
        for col, pos, _ in clfs:
            if conf[col] >= thr:
                stop, chosen = (col, pos), col
                break
        fallback = stop is None
        if fallback:
            chosen, best = None, -1.0
            for col, _, _ in clfs:
                if conf[col] > best:
                    chosen, best = col, conf[col]
            stop = clfs[-1][:2]
        col, pos = stop
        nodes = list(range(pos + 1)) + [h for _, p, h in clfs if h is not None and p <= pos]
        for v in nodes:
            executed_count[v] += 1
        ok = bool(trace.correct[s, chosen])
        n_correct += ok
        stops[col] += 1
        outcomes.append(
            SampleOutcome(int(trace.sample_ids[s]), pos, chosen, ok, sum(lat[v] for v in nodes), fallback)
        )
    n = trace.n_samples
    lats = [o.latency_ms for o in outcomes]
    metrics = DesignMetrics(
        accuracy=n_correct / n,
        expected_latency_ms=sum(lats) / n,
        worst_case_latency_ms=max(lats),
        memory_bytes=deployed_memory(profile, net, design),
    )
    rates = ExitRateVector(np.array(stops[:-1]) / n, stops[-1] / n)
    return SimResult(outcomes, metrics, rates, np.array(executed_count) / n)


def write_outcomes(result: SimResult, net: NetworkSpec, path: str | Path, comment: str | None = None) -> None:
    names = [e.id for e in net.candidate_exits] + [net.backbone[-1].id]
    with Path(path).open("w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["sample_id", "stop_pos", "classifier", "correct", "latency_ms"])
        for o in result.outcomes:
            w.writerow([o.sample_id, o.stop_pos, names[o.classifier], int(o.correct), f"{o.latency_ms:.9g}"])


@dataclass(frozen=True)
class Infeasible:
    """No classifier fits the latency budget."""

    budget_ms: float
    cheapest_ms: float

    def __bool__(self):
        return False


def truncate_for_budget(
    net: NetworkSpec, design: DesignPoint, profile: DeviceProfile, budget_ms: float
) -> DesignPoint | Infeasible:
    """Keep the deepest classifier whose never-exit latency fits ``budget_ms``."""
    if budget_ms <= 0:
        raise ValueError("budget must be positive")
    clfs = _classifiers(net, design)
    candidates = []
    for i, (col, _, _) in enumerate(clfs):
        if i == len(clfs) - 1 and design.terminal_exit is None:
            candidates.append(design)
        else:
            kept = {c for c, _, _ in clfs[: i + 1]}
            p = tuple(int(k in kept) for k in range(net.n_exits))
            candidates.append(DesignPoint(p, design.c_thr, col))
    # same arithmetic as the worst-case check callers will make
    costs = [worst_case_latency(profile, net, d) for d in candidates]
    fits = [i for i, c in enumerate(costs) if c <= budget_ms]
    if not fits:
        return Infeasible(budget_ms, costs[0])
    return candidates[fits[-1]]


@dataclass
class TraceGenSpec:
    """Parameters of the synthetic calibration-trace generator.

    Curves are indexed like trace columns: candidate exits in declaration
    order, then the final classifier. ``None`` picks a default curve that
    rises with attach depth.
    """

    n_samples: int = 2000
    conf_mean: list[float] | None = None
    accuracy: list[float] | None = None
    concentration: float = 6.0
    # logistic slope linking a sample's confidence to its correctness
    correlation: float = 0.8
    # share of per-sample difficulty common to all classifiers
    difficulty_coupling: float = 0.7
    monotone: bool = True
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "TraceGenSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown trace-spec fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "TraceGenSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _depth_fraction(net: NetworkSpec) -> np.ndarray:
    nb = net.n_backbone
    f = [(net.attach_index(k) + 1) / nb for k in range(net.n_exits)]
    return np.array(f + [1.0])


def _curve(values, default: np.ndarray, n: int, name: str) -> np.ndarray:
    c = np.array(default if values is None else values, dtype=float)
    if c.shape != (n,):
        raise ValueError(f"{name} curve needs {n} entries, got {c.shape}")
    if (c < 0).any() or (c > 1).any():
        raise ValueError(f"{name} curve must lie in [0, 1]")
    return c


def generate_trace(spec: TraceGenSpec, net: NetworkSpec) -> CalibrationTrace:
    """Sample a trace from Beta-distributed confidences and a logistic correctness link."""
    k = net.n_exits + 1
    depth = _depth_fraction(net)
    mu = _curve(spec.conf_mean, 0.35 + 0.6 * depth, k, "conf_mean")
    acc = _curve(spec.accuracy, 0.3 + 0.55 * depth, k, "accuracy")
    if spec.monotone:
        order = np.argsort(depth, kind="stable")
        mu[order] = np.maximum.accumulate(mu[order])
        acc[order] = np.maximum.accumulate(acc[order])
    if not 0 <= spec.difficulty_coupling <= 1:
        raise ValueError("difficulty_coupling must lie in [0, 1]")
    rng = np.random.default_rng(spec.seed)
    n = spec.n_samples
    shared = rng.standard_normal((n, 1))
    own = rng.standard_normal((n, k))
    a = math.sqrt(spec.difficulty_coupling)
    u = stats.norm.cdf(a * shared + math.sqrt(1 - a * a) * own)
    conf = np.empty((n, k))
    correct = np.empty((n, k), dtype=bool)
    draws = rng.random((n, k))
    kappa = spec.concentration
    for j in range(k):
        m = mu[j]
        if m <= 0 or m >= 1:
            conf[:, j] = m
            z = np.zeros(n)
        else:
            dist = stats.beta(m * kappa, (1 - m) * kappa)
            conf[:, j] = dist.ppf(u[:, j])
            z = (conf[:, j] - m) / dist.std()
        if acc[j] >= 1:
            p = np.ones(n)
        elif acc[j] <= 0:
            p = np.zeros(n)
        else:
            logit = math.log(acc[j] / (1 - acc[j]))
            p = 1 / (1 + np.exp(-(logit + spec.correlation * z)))
        correct[:, j] = draws[:, j] < p
    return CalibrationTrace(np.clip(conf, 0, 1), correct)
