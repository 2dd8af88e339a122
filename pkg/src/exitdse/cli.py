"""Command-line entry point: ``exitdse <subcommand> [flags]``.

Exit status is 0 on success, 1 when the problem is infeasible and 2 on any
input error (with a single diagnostic line on stderr). Every run writes
``manifest.json`` into ``--out-dir``; all other artifacts carry the manifest
hash so they can be traced back to the exact inputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import __version__
from .calibration import TraceError, load_trace, store_trace
from .calibration import evaluate as evaluate_trace
from .dse import (
    Objective,
    SaConfig,
    SearchError,
    brute_force,
    design_metrics,
    optimize,
    score,
    tune_wlat,
    write_design_rows,
    write_pareto,
)
from .network import DEFAULT_THRESHOLDS, NetworkError, check_design, load_design, load_network
from .perf import ProfileError, load_profile
from .sdf import SdfError, design_rates, export_sdf
from .simulator import TraceGenSpec, generate_trace, simulate, truncate_for_budget, write_outcomes

log = logging.getLogger("exitdse")

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT = 0, 1, 2
DEFAULT_SEED = 0


class InputError(Exception):
    """Bad flag or input file; reported on one line with exit status 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def g9(x: float) -> float:
    return float(f"{x:.9g}")


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _csv_floats(text: str, flag: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"{flag}: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise InputError(f"{flag}: empty list")
    return vals


# -- argument surface -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    io = argparse.ArgumentParser(add_help=False)
    io.add_argument("--network", help="network JSON")
    io.add_argument("--trace", help="calibration trace CSV")
    io.add_argument("--profile", help="device profile CSV")
    io.add_argument("--device", help="device column to read from a multi-device profile")
    io.add_argument("--out-dir", default=".", help="directory for artifacts (default: .)")
    io.add_argument("--seed", type=int, help=f"random seed (default: {DEFAULT_SEED})")
    io.add_argument("--jobs", type=int, default=1, help="worker cap for exhaustive evaluation")
    io.add_argument("--no-plots", action="store_true", help="skip PNG figures")

    objective = argparse.ArgumentParser(add_help=False)
    objective.add_argument("--wlat", type=float, default=1.0, help="latency weight")
    objective.add_argument("--wlat-grid", help="comma-separated weights; picks one at the trade-off knee")
    objective.add_argument("--eps-ms", type=float, help="latency upper bound")
    objective.add_argument("--mem-max-bytes", type=int, help="memory cap")
    objective.add_argument("--latency-mode", choices=("expected", "worst-case"), default="expected")
    objective.add_argument(
        "--thresholds",
        default=",".join(str(t) for t in DEFAULT_THRESHOLDS),
        help="confidence-threshold grid (default: %(default)s)",
    )

    p = _Parser(prog="exitdse", description="Design-space exploration for early-exit networks.")
    p.add_argument("--version", action="version", version=f"exitdse {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    o = sub.add_parser("optimize", parents=[io, objective], help="simulated-annealing search")
    o.add_argument("--iters", type=int, default=SaConfig.iters_per_temp, help="iterations per temperature")
    o.add_argument("--restarts", type=int, default=0)
    o.add_argument("--no-adjacency-prior", action="store_true")

    sub.add_parser("enumerate", parents=[io, objective], help="exhaustive evaluation of the design space")

    e = sub.add_parser("evaluate", parents=[io, objective], help="metrics of one design")
    e.add_argument("--design", help="design JSON (best.json is accepted)")

    s = sub.add_parser("simulate", parents=[io], help="per-sample replay of one design")
    s.add_argument("--design", help="design JSON")
    s.add_argument("--budget-ms", type=float, help="run-time latency budget; truncates the design")

    g = sub.add_parser("gen-trace", parents=[io], help="synthetic calibration trace")
    g.add_argument("--trace-spec", help="TraceGenSpec JSON")
    g.add_argument("--samples", type=int, help="override the sample count")

    x = sub.add_parser("export-sdf", parents=[io], help="write C, R, Gamma and q for one design")
    x.add_argument("--design", help="design JSON")
    return p


REQUIRED = {
    "optimize": ("network", "trace", "profile"),
    "enumerate": ("network", "trace", "profile"),
    "evaluate": ("network", "trace", "profile", "design"),
    "simulate": ("network", "trace", "profile", "design"),
    "gen-trace": ("network",),
    "export-sdf": ("network", "trace", "design"),
}


# -- manifest ---------------------------------------------------------------


class Run:
    """Inputs, manifest and artifact writers for one invocation."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out_dir)
        self.inputs: dict[str, dict] = {}
        self.params: dict = {}
        self.outputs: list[str] = []
        self.hash = ""
        self.seed = DEFAULT_SEED if args.seed is None else args.seed

    def add_input(self, role: str, path: str) -> Path:
        p = Path(path)
        if not p.is_file():
            raise InputError(f"--{role}: no such file {path!r}")
        self.inputs[role] = {"file": p.name, "sha256": sha256_file(p)}
        return p

    def seal(self, **params) -> str:
        self.params.update(params)
        body = {
            "tool": "exitdse",
            "version": __version__,
            "command": self.args.command,
            "inputs": self.inputs,
            "parameters": self.params,
            "seed": self.seed,
        }
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        self.hash = hashlib.sha256(text.encode()).hexdigest()
        self.body = body
        self.out.mkdir(parents=True, exist_ok=True)
        return self.hash

    @property
    def tag(self) -> str:
        return f"manifest sha256={self.hash}"

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def write_json(self, name: str, data: dict) -> Path:
        p = self.path(name)
        p.write_text(json.dumps({"manifest_sha256": self.hash, **data}, indent=2, sort_keys=True) + "\n")
        return p

    def finish(self) -> None:
        manifest = {**self.body, "manifest_sha256": self.hash, "outputs": sorted(self.outputs)}
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _metrics_dict(m) -> dict:
    return {
        "accuracy": g9(m.accuracy),
        "exp_latency_ms": g9(m.expected_latency_ms),
        "wc_latency_ms": g9(m.worst_case_latency_ms),
        "mem_bytes": int(m.memory_bytes),
    }


def _score_value(s: float):
    return g9(s) if math.isfinite(s) else "-inf"


def _load_common(run: Run, need_profile: bool = True):
    a = run.args
    net = load_network(run.add_input("network", a.network))
    trace = load_trace(run.add_input("trace", a.trace), net.n_exits + 1) if a.trace else None
    profile = None
    if need_profile:
        profile = load_profile(run.add_input("profile", a.profile), net, a.device)
    return net, trace, profile


def _thresholds(a) -> tuple[float, ...]:
    grid = _csv_floats(a.thresholds, "--thresholds")
    if any(not 0 <= t <= 1 for t in grid) or len(set(grid)) != len(grid):
        raise InputError("--thresholds: values must be distinct and lie in [0, 1]")
    return tuple(sorted(grid))


def _objective(a, net, trace, profile, w: float) -> Objective:
    if a.eps_ms is not None and a.eps_ms <= 0:
        raise InputError("--eps-ms: must be positive")
    if a.mem_max_bytes is not None and a.mem_max_bytes <= 0:
        raise InputError("--mem-max-bytes: must be positive")
    if w <= 0:
        raise InputError("--wlat: must be positive")
    return Objective.reference(
        net, trace, profile, w_lat=w, eps_ms=a.eps_ms, m_max=a.mem_max_bytes, latency_mode=a.latency_mode
    )


def _objective_params(a, thresholds) -> dict:
    return {
        "wlat": a.wlat,
        "wlat_grid": _csv_floats(a.wlat_grid, "--wlat-grid") if a.wlat_grid else None,
        "eps_ms": a.eps_ms,
        "mem_max_bytes": a.mem_max_bytes,
        "latency_mode": a.latency_mode,
        "thresholds": [repr(t) for t in thresholds],
        "device": a.device,
    }


def _result_json(run: Run, net, obj, res) -> None:
    run.write_json(
        "best.json",
        {
            "network": net.name,
            "design": res.best.to_dict(net.name),
            "metrics": _metrics_dict(res.metrics),
            "score": _score_value(res.score),
            "feasible": res.feasible,
            "objective": {"w_lat": obj.w_lat, "a_max": g9(obj.a_max), "l_max_ms": g9(obj.l_max)},
            "n_evaluations": res.n_evaluations,
        },
    )


def _report(rows: list[tuple[str, object]]) -> None:
    for k, v in rows:
        print(f"{k}\t{v}")


# -- subcommands ------------------------------------------------------------


def cmd_optimize(run: Run) -> int:
    a = run.args
    net, trace, profile = _load_common(run)
    thresholds = _thresholds(a)
    if a.iters < 1:
        raise InputError("--iters: must be >= 1")
    grid = _csv_floats(a.wlat_grid, "--wlat-grid") if a.wlat_grid else None
    cfg = SaConfig(seed=run.seed, iters_per_temp=a.iters, adjacency_prior=not a.no_adjacency_prior,
                   restarts=a.restarts)
    run.seal(
        **_objective_params(a, thresholds),
        iters=a.iters,
        restarts=a.restarts,
        adjacency_prior=cfg.adjacency_prior,
    )
    w = a.wlat
    tuning = None
    if grid:
        base = _objective(a, net, trace, profile, grid[0])
        tuning = tune_wlat(net, trace, profile, grid, base, cfg, thresholds)
        w = tuning.chosen
        log.info("latency weight %g chosen at knee %.4g ms", w, tuning.knee_latency_ms)
    obj = _objective(a, net, trace, profile, w)
    res = optimize(net, trace, profile, obj, cfg, thresholds)

    _result_json(run, net, obj, res)
    write_pareto(res.front, obj, run.path("pareto.csv"), run.tag)
    with run.path("search_log.jsonl").open("w") as fh:
        fh.write(json.dumps({"manifest_sha256": run.hash}) + "\n")
        for row in res.log:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    if tuning is not None:
        with run.path("wlat.csv").open("w", newline="") as fh:
            fh.write(f"# {run.tag}\n")
            wr = csv.writer(fh)
            wr.writerow(["w_lat", "p_exit", "c_thr", "accuracy", "exp_latency_ms", "score", "chosen"])
            for r in tuning.rows:
                wr.writerow([repr(r.w_lat), r.design.bits, repr(r.design.c_thr), f"{r.metrics.accuracy:.9g}",
                             f"{r.metrics.expected_latency_ms:.9g}",
                             f"{r.score:.9g}" if math.isfinite(r.score) else "-inf", int(r.w_lat == w)])
    if not a.no_plots:
        from . import plotting

        cache = [(d, design_metrics(net, trace, profile, d)) for d in res.evaluated]
        plotting.plot_pareto(cache, res.front, res.best, run.path("pareto.png"), run.tag)
        plotting.plot_search_trace(res.log, run.path("search_trace.png"), run.tag)
        if tuning is not None:
            plotting.plot_wlat_tradeoff(tuning, run.path("wlat_tradeoff.png"), run.tag)
    run.finish()
    _report([
        ("design", res.best.bits), ("c_thr", repr(res.best.c_thr)), ("w_lat", w),
        ("score", _score_value(res.score)), ("accuracy", g9(res.metrics.accuracy)),
        ("exp_latency_ms", g9(res.metrics.expected_latency_ms)), ("front_size", len(res.front)),
        ("evaluations", res.n_evaluations), ("feasible", int(res.feasible)),
    ])
    if not res.feasible:
        print(f"exitdse: infeasible; least-violating design {res.best.bits} c={res.best.c_thr!r}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_enumerate(run: Run) -> int:
    a = run.args
    net, trace, profile = _load_common(run)
    thresholds = _thresholds(a)
    if a.jobs < 1:
        raise InputError("--jobs: must be >= 1")
    run.seal(**_objective_params(a, thresholds))
    obj = _objective(a, net, trace, profile, a.wlat)
    cache: dict = {}
    res = brute_force(net, trace, profile, obj, thresholds, jobs=a.jobs, cache=cache)
    rows = [(d, cache[d], score(d, obj, cache[d])) for d in res.evaluated]
    write_design_rows(rows, run.path("designs.csv"), run.tag)
    write_pareto(res.front, obj, run.path("pareto.csv"), run.tag)
    _result_json(run, net, obj, res)
    if not a.no_plots:
        from . import plotting

        plotting.plot_pareto([(d, m) for d, m, _ in rows], res.front, res.best, run.path("pareto.png"), run.tag)
    run.finish()
    _report([
        ("designs", len(rows)), ("feasible_designs", sum(math.isfinite(s) for *_, s in rows)),
        ("design", res.best.bits), ("c_thr", repr(res.best.c_thr)), ("score", _score_value(res.score)),
        ("front_size", len(res.front)),
    ])
    return EXIT_OK if res.feasible else EXIT_INFEASIBLE


def cmd_evaluate(run: Run) -> int:
    a = run.args
    net, trace, profile = _load_common(run)
    design = load_design(run.add_input("design", a.design))
    check_design(net, design)
    thresholds = _thresholds(a)
    run.seal(**_objective_params(a, thresholds))
    obj = _objective(a, net, trace, profile, a.wlat)
    m = design_metrics(net, trace, profile, design)
    s = score(design, obj, m)
    rates = evaluate_trace(trace, net, design)
    run.write_json(
        "metrics.json",
        {
            "network": net.name,
            "design": design.to_dict(net.name),
            "metrics": _metrics_dict(m),
            "score": _score_value(s),
            "feasible": obj.feasible(m),
            "exit_rates": [g9(r) for r in rates.exit_rates.r_exit],
            "final_rate": g9(rates.exit_rates.r_final),
        },
    )
    run.finish()
    _report([("design", design.bits), ("c_thr", repr(design.c_thr)), ("score", _score_value(s)),
             *[(k, v) for k, v in _metrics_dict(m).items()]])
    return EXIT_OK if obj.feasible(m) else EXIT_INFEASIBLE


def cmd_simulate(run: Run) -> int:
    a = run.args
    net, trace, profile = _load_common(run)
    design = load_design(run.add_input("design", a.design))
    check_design(net, design)
    if a.budget_ms is not None and a.budget_ms <= 0:
        raise InputError("--budget-ms: must be positive")
    run.seal(budget_ms=a.budget_ms, device=a.device)
    ran = design
    if a.budget_ms is not None:
        ran = truncate_for_budget(net, design, profile, a.budget_ms)
        if not ran:
            run.write_json("metrics.json", {"network": net.name, "design": design.to_dict(net.name),
                                            "infeasible": True, "budget_ms": a.budget_ms,
                                            "cheapest_ms": g9(ran.cheapest_ms)})
            run.finish()
            print(f"exitdse: budget {a.budget_ms:g} ms is below the cheapest classifier "
                  f"({ran.cheapest_ms:.9g} ms)", file=sys.stderr)
            return EXIT_INFEASIBLE
    res = simulate(net, ran, trace, profile)
    write_outcomes(res, net, run.path("outcomes.csv"), run.tag)
    run.write_json(
        "metrics.json",
        {
            "network": net.name,
            "design": design.to_dict(net.name),
            "executed_design": ran.to_dict(net.name),
            "budget_ms": a.budget_ms,
            "metrics": _metrics_dict(res.metrics),
            "fallback_fraction": g9(sum(o.fallback for o in res.outcomes) / len(res.outcomes)),
        },
    )
    run.finish()
    term = net.candidate_exits[ran.terminal_exit].id if ran.terminal_exit is not None else net.backbone[-1].id
    _report([("design", ran.bits), ("terminal", term), *[(k, v) for k, v in _metrics_dict(res.metrics).items()]])
    return EXIT_OK


def cmd_gen_trace(run: Run) -> int:
    a = run.args
    net = load_network(run.add_input("network", a.network))
    if a.trace_spec:
        spec = TraceGenSpec.load(run.add_input("trace_spec", a.trace_spec))
    else:
        spec = TraceGenSpec()
    if a.seed is not None:
        spec.seed = a.seed
    run.seed = spec.seed
    if a.samples is not None:
        if a.samples < 1:
            raise InputError("--samples: must be >= 1")
        spec.n_samples = a.samples
    run.seal(trace_spec=json.loads(spec.to_json()))
    trace = generate_trace(spec, net)
    store_trace(trace, run.path("trace.csv"), run.tag)
    run.finish()
    _report([("samples", trace.n_samples), ("classifiers", trace.n_classifiers),
             ("final_accuracy", g9(trace.correct[:, -1].mean()))])
    return EXIT_OK


def cmd_export_sdf(run: Run) -> int:
    a = run.args
    net, trace, _ = _load_common(run, need_profile=False)
    design = load_design(run.add_input("design", a.design))
    check_design(net, design)
    run.seal()
    rates = evaluate_trace(trace, net, design).exit_rates
    topo, q = design_rates(net, design, rates)
    for p in export_sdf(topo, q, run.out, run.tag):
        run.outputs.append(p.name)
    run.finish()
    _report([("nodes", topo.shape[1]), ("edges", topo.shape[0]), ("residual", f"{q.residual:.3g}")])
    return EXIT_OK


COMMANDS = {
    "optimize": cmd_optimize,
    "enumerate": cmd_enumerate,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
    "gen-trace": cmd_gen_trace,
    "export-sdf": cmd_export_sdf,
}


def _setup_logging() -> None:
    level = os.environ.get("EXITDSE_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise InputError("a subcommand is required (" + ", ".join(COMMANDS) + ")")
        for field in REQUIRED[args.command]:
            if getattr(args, field.replace("-", "_")) is None:
                raise InputError(f"--{field.replace('_', '-')}: required for {args.command}")
        return COMMANDS[args.command](Run(args))
    except InputError as exc:
        print(f"exitdse: error: {exc}", file=sys.stderr)
    except (NetworkError, TraceError, ProfileError, SdfError, SearchError, ValueError) as exc:
        print(f"exitdse: error: {str(exc).splitlines()[0]}", file=sys.stderr)
    except OSError as exc:
        print(f"exitdse: error: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
