"""Memoised calibration data and lookup-based design evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .network import DesignPoint, NetworkSpec, check_design
from .sdf import ExitRateVector


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationTrace:
    """Per-sample top-1 confidence and correctness at every classifier.

    Columns are the candidate exits in declaration order followed by the
    final classifier. Confidences are quantised to 6 decimals so the CSV
    form round-trips exactly.
    """

    conf: np.ndarray
    correct: np.ndarray
    sample_ids: np.ndarray | None = None

    def __post_init__(self):
        conf = np.round(np.asarray(self.conf, dtype=np.float64), 6)
        correct = np.asarray(self.correct).astype(bool)
        if conf.ndim != 2 or conf.shape != correct.shape:
            raise TraceError(f"conf {conf.shape} and correct {correct.shape} must be equal 2-D shapes")
        if conf.shape[0] == 0:
            raise TraceError("trace has no samples")
        if conf.shape[1] < 2:
            raise TraceError("trace needs at least one exit plus the final classifier")
        if np.isnan(conf).any() or (conf < 0).any() or (conf > 1).any():
            raise TraceError("confidence out of range [0, 1]")
        ids = np.arange(conf.shape[0]) if self.sample_ids is None else np.asarray(self.sample_ids, dtype=np.int64)
        for a in (conf, correct, ids):
            a.setflags(write=False)
        object.__setattr__(self, "conf", conf)
        object.__setattr__(self, "correct", correct)
        object.__setattr__(self, "sample_ids", ids)

    @property
    def n_samples(self) -> int:
        return self.conf.shape[0]

    @property
    def n_classifiers(self) -> int:
        return self.conf.shape[1]

    @property
    def n_exits(self) -> int:
        return self.n_classifiers - 1

    def check_bound(self, net: NetworkSpec) -> None:
        if self.n_exits != net.n_exits:
            raise TraceError(
                f"trace has {self.n_classifiers} classifiers, network {net.name!r} needs {net.n_exits + 1}"
            )

    def standalone_accuracy(self) -> np.ndarray:
        return self.correct.mean(axis=0)

    def raw_element_count(self) -> int:
        return 2 * self.n_samples * self.n_classifiers


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    exit_rates: ExitRateVector
    fallback_fraction: float
    stop: np.ndarray
    chosen: np.ndarray


def scan_order(net: NetworkSpec, design: DesignPoint) -> list[int]:
    """Classifier columns a sample visits, shallowest first.

    Exit columns are ``0..N-1``; the final classifier is column ``N`` and is
    dropped when the design is truncated at an intermediate exit.
    """
    limit = net.terminal if design.terminal_exit is None else net.attach_index(design.terminal_exit)
    cols = [k for k in net.exit_depth_order if design.p_exit[k] and net.attach_index(k) <= limit]
    if design.terminal_exit is None:
        cols.append(net.n_exits)
    return cols


def evaluate(trace: CalibrationTrace, net: NetworkSpec, design: DesignPoint) -> EvalResult:
    check_design(net, design)
    trace.check_bound(net)
    if not 0.0 <= design.c_thr <= 1.0:
        raise TraceError(f"c_thr {design.c_thr} outside [0, 1]")
    cols = scan_order(net, design)
    n = trace.n_samples
    conf = trace.conf[:, cols]
    passed = conf >= design.c_thr
    hit = passed.any(axis=1)
    first = passed.argmax(axis=1)
    # argmax returns the earliest maximum, i.e. ties break shallow
    fallback = conf.argmax(axis=1)
    chosen_pos = np.where(hit, first, fallback)
    stop_pos = np.where(hit, first, len(cols) - 1)
    cols_arr = np.asarray(cols)
    chosen = cols_arr[chosen_pos]
    stop = cols_arr[stop_pos]
    n_correct = int(trace.correct[np.arange(n), chosen].sum())
    counts = np.bincount(stop, minlength=trace.n_classifiers)
    r_exit = counts[:-1] / n
    r_final = counts[-1] / n
    return EvalResult(
        accuracy=n_correct / n,
        exit_rates=ExitRateVector(r_exit, r_final),
        fallback_fraction=int((~hit).sum()) / n,
        stop=stop,
        chosen=chosen,
    )


def _header(n_classifiers: int) -> list[str]:
    cols = ["sample_id"]
    for i in range(1, n_classifiers + 1):
        cols += [f"conf_{i}", f"correct_{i}"]
    return cols


def store_trace(trace: CalibrationTrace, path: str | Path, comment: str | None = None) -> None:
    with Path(path).open("w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(_header(trace.n_classifiers))
        for sid, cr, ok in zip(trace.sample_ids, trace.conf, trace.correct):
            row = [str(int(sid))]
            for c, k in zip(cr, ok):
                row += [f"{c:.6f}", "1" if k else "0"]
            w.writerow(row)


def load_trace(path: str | Path, n_classifiers: int | None = None) -> CalibrationTrace:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader, None)
        if header is None:
            raise TraceError(f"{path}: empty trace file")
        if len(header) < 5 or (len(header) - 1) % 2 or header != _header((len(header) - 1) // 2):
            raise TraceError(f"{path}: bad header {header[:5]}...")
        k = (len(header) - 1) // 2
        if n_classifiers is not None and k != n_classifiers:
            raise TraceError(f"{path}: {k} classifiers, expected {n_classifiers}")
        ids, conf, correct = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise TraceError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                ids.append(int(row[0]))
                conf.append([float(v) for v in row[1::2]])
                flags = row[2::2]
                if any(f not in ("0", "1") for f in flags):
                    raise ValueError("correct flags must be 0/1")
                correct.append([f == "1" for f in flags])
            except ValueError as exc:
                raise TraceError(f"{path}:{lineno}: malformed row ({exc})") from None
    if not ids:
        raise TraceError(f"{path}: trace has no samples")
    return CalibrationTrace(np.array(conf), np.array(correct), np.array(ids))


@dataclass(frozen=True)
class ThresholdBitmaps:
    """Per-threshold pass/correct bitmaps over the candidate exits.

    This is the storage layout whose size the memory accounting refers to;
    the working evaluator uses the raw trace.
    """

    thresholds: tuple[float, ...]
    passed: np.ndarray  # (N_conf, |D|, N) bool
    correct: np.ndarray  # (N_conf, |D|, N) bool

    @classmethod
    def from_trace(cls, trace: CalibrationTrace, thresholds: Sequence[float]) -> "ThresholdBitmaps":
        conf = trace.conf[:, :-1]
        thr = np.asarray(thresholds, dtype=float)[:, None, None]
        passed = conf[None] >= thr
        correct = np.broadcast_to(trace.correct[None, :, :-1], passed.shape).copy()
        return cls(tuple(float(t) for t in thresholds), passed, correct)

    @property
    def element_count(self) -> int:
        return int(self.passed.size + self.correct.size)

    def packed_nbytes(self) -> int:
        return int(np.packbits(self.passed).nbytes + np.packbits(self.correct).nbytes)


def memo_element_count(n_samples: int, n_exits: int, n_conf: int) -> int:
    return 2 * n_samples * n_exits * n_conf
