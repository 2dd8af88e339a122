"""Analytical latency and memory model over a profiled device."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import DesignPoint, NetworkSpec, check_design
from .sdf import RateVector


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceProfile:
    """Per-node mean latency (ms) and weight footprint (bytes), in matrix node order."""

    device: str
    latency_ms: np.ndarray
    mem_bytes: np.ndarray

    def __post_init__(self):
        l = np.asarray(self.latency_ms, dtype=float)
        m = np.asarray(self.mem_bytes, dtype=np.int64)
        if l.shape != m.shape or l.ndim != 1:
            raise ProfileError("latency and memory vectors must be 1-D and equally long")
        if (l < 0).any() or np.isnan(l).any():
            raise ProfileError("negative latency in profile")
        if (m < 0).any():
            raise ProfileError("negative memory footprint in profile")
        l.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "latency_ms", l)
        object.__setattr__(self, "mem_bytes", m)

    def __len__(self):
        return len(self.latency_ms)

    def scaled(self, factor: float) -> "DeviceProfile":
        return DeviceProfile(self.device, self.latency_ms * factor, self.mem_bytes)

    @classmethod
    def uniform(cls, net: NetworkSpec, latency: float = 1.0, mem: int = 10, device: str = "unit") -> "DeviceProfile":
        return cls(device, np.full(net.n_nodes, latency), np.full(net.n_nodes, mem))


@dataclass(frozen=True)
class DesignMetrics:
    accuracy: float
    expected_latency_ms: float
    worst_case_latency_ms: float
    memory_bytes: int

    def as_tuple(self) -> tuple[float, float, int]:
        return (self.accuracy, self.expected_latency_ms, self.memory_bytes)


def _check(profile: DeviceProfile, q) -> np.ndarray:
    qv = q.q if isinstance(q, RateVector) else np.asarray(q, dtype=float)
    if qv.shape != profile.latency_ms.shape:
        raise ProfileError(f"rate vector has {qv.shape[0]} nodes, profile has {len(profile)}")
    return qv


def expected_latency(profile: DeviceProfile, q) -> float:
    return float(_check(profile, q) @ profile.latency_ms)


def memory_footprint(profile: DeviceProfile, q) -> int:
    """Weights of the nodes with a nonzero execution rate."""
    return int(profile.mem_bytes[_check(profile, q) > 0].sum())


def worst_case_nodes(net: NetworkSpec, design: DesignPoint) -> list[int]:
    """Nodes executed by a sample that is never accepted early."""
    check_design(net, design)
    limit = net.terminal if design.terminal_exit is None else net.attach_index(design.terminal_exit)
    nodes = list(range(limit + 1))
    nodes += [
        net.n_backbone + k
        for k in range(net.n_exits)
        if design.p_exit[k] and net.attach_index(k) <= limit
    ]
    return nodes


def worst_case_latency(profile: DeviceProfile, net: NetworkSpec, design: DesignPoint) -> float:
    if len(profile) != net.n_nodes:
        raise ProfileError(f"profile has {len(profile)} nodes, network needs {net.n_nodes}")
    return float(profile.latency_ms[worst_case_nodes(net, design)].sum())


def deployed_memory(profile: DeviceProfile, net: NetworkSpec, design: DesignPoint) -> int:
    """Weights that must be resident for ``design``.

    Every node on the worst-case path is deployed, even when no calibration
    sample happens to reach it: the last classifier stays live for inputs the
    earlier exits reject. Equals ``memory_footprint`` whenever each deployed
    node has a nonzero rate, and unlike it never shrinks when an exit is added.
    """
    if len(profile) != net.n_nodes:
        raise ProfileError(f"profile has {len(profile)} nodes, network needs {net.n_nodes}")
    return int(profile.mem_bytes[worst_case_nodes(net, design)].sum())


def load_profile(path: str | Path, net: NetworkSpec, device: str | None = None) -> DeviceProfile:
    """Read a profile CSV and reorder it to the network's node order.

    Single-device files use ``node_id,latency_ms,mem_bytes``. Multi-device
    files carry ``latency_ms:<device>`` / ``mem_bytes:<device>`` column pairs
    and need ``device`` to pick one.
    """
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        fields = reader.fieldnames or []
        if "node_id" not in fields:
            raise ProfileError(f"{path}: missing node_id column")
        if "latency_ms" in fields and "mem_bytes" in fields:
            lat_col, mem_col, name = "latency_ms", "mem_bytes", device or Path(path).stem
        else:
            devices = [f.split(":", 1)[1] for f in fields if f.startswith("latency_ms:")]
            if device is None:
                if len(devices) != 1:
                    raise ProfileError(f"{path}: choose a device from {devices}")
                device = devices[0]
            if device not in devices or f"mem_bytes:{device}" not in fields:
                raise ProfileError(f"{path}: no columns for device {device!r} (have {devices})")
            lat_col, mem_col, name = f"latency_ms:{device}", f"mem_bytes:{device}", device
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            try:
                rows[row["node_id"]] = (float(row[lat_col]), int(row[mem_col]))
            except (TypeError, ValueError) as exc:
                raise ProfileError(f"{path}:{lineno}: malformed row ({exc})") from None
    missing = [n for n in net.node_ids if n not in rows]
    if missing:
        raise ProfileError(f"{path}: missing node {missing[0]!r}")
    extra = sorted(set(rows) - set(net.node_ids))
    if extra:
        raise ProfileError(f"{path}: node {extra[0]!r} is not in network {net.name!r}")
    lat = [rows[n][0] for n in net.node_ids]
    mem = [rows[n][1] for n in net.node_ids]
    if any(v < 0 for v in lat):
        raise ProfileError(f"{path}: negative latency")
    return DeviceProfile(name, np.array(lat), np.array(mem))


def store_profile(profile: DeviceProfile, net: NetworkSpec, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "latency_ms", "mem_bytes"])
        for nid, l, m in zip(net.node_ids, profile.latency_ms, profile.mem_bytes):
            w.writerow([nid, repr(float(l)), int(m)])
