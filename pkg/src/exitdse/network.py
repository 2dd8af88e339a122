"""Overprovisioned network description and the design-point tuple."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

DEFAULT_THRESHOLDS = (0.4, 0.6, 0.8)


class NetworkError(ValueError):
    """Raised for malformed network or design descriptions."""


@dataclass(frozen=True)
class LayerDecl:
    id: str
    preds: tuple[str, ...] = ()
    label: str = ""


@dataclass(frozen=True)
class ExitDecl:
    id: str
    attach_after: str


@dataclass(frozen=True)
class NetworkSpec:
    """Backbone layers plus candidate exits.

    Node indices follow declaration order: backbone layers first, then
    candidate exits. Backbone layers must be declared in topological order,
    so the declaration index doubles as the execution order. The last
    backbone layer is the final classifier.
    """

    name: str
    backbone: tuple[LayerDecl, ...]
    candidate_exits: tuple[ExitDecl, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _validate(self)
        index = {layer.id: i for i, layer in enumerate(self.backbone)}
        nb = len(self.backbone)
        index.update({e.id: nb + k for k, e in enumerate(self.candidate_exits)})
        object.__setattr__(self, "_index", index)

    @property
    def n_backbone(self) -> int:
        return len(self.backbone)

    @property
    def n_exits(self) -> int:
        return len(self.candidate_exits)

    @property
    def n_nodes(self) -> int:
        return self.n_backbone + self.n_exits

    @property
    def node_ids(self) -> list[str]:
        return [layer.id for layer in self.backbone] + [e.id for e in self.candidate_exits]

    @property
    def terminal(self) -> int:
        return self.n_backbone - 1

    def node_index(self, node_id: str) -> int:
        try:
            return self._index[node_id]
        except KeyError:
            raise NetworkError(f"unknown node id {node_id!r}") from None

    def attach_index(self, k: int) -> int:
        """Backbone index the k-th candidate exit hangs off."""
        return self._index[self.candidate_exits[k].attach_after]

    @property
    def exit_depth_order(self) -> list[int]:
        """Candidate exit indices sorted by the depth of their attach point."""
        return sorted(range(self.n_exits), key=self.attach_index)

    def backbone_edges(self) -> list[tuple[int, int]]:
        edges = []
        for j, layer in enumerate(self.backbone):
            for p in layer.preds:
                edges.append((self._index[p], j))
        return edges

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "backbone": [
                {"id": l.id, "preds": list(l.preds), **({"label": l.label} if l.label else {})}
                for l in self.backbone
            ],
            "candidate_exits": [
                {"id": e.id, "attach_after": e.attach_after} for e in self.candidate_exits
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkSpec":
        try:
            name = data["name"]
            backbone = tuple(
                LayerDecl(str(l["id"]), tuple(str(p) for p in l.get("preds", [])), str(l.get("label", "")))
                for l in data["backbone"]
            )
            exits = tuple(
                ExitDecl(str(e["id"]), str(e["attach_after"])) for e in data["candidate_exits"]
            )
        except (KeyError, TypeError) as exc:
            raise NetworkError(f"network schema violation: missing field {exc}") from None
        if not isinstance(name, str):
            raise NetworkError("network schema violation: 'name' must be a string")
        return cls(name, backbone, exits)

    @classmethod
    def chain(cls, name: str, n_backbone: int, attach: Sequence[int]) -> "NetworkSpec":
        """Chain backbone ``L1..Ln`` with exits after the given 0-based layers."""
        backbone = tuple(
            LayerDecl(f"L{i + 1}", (f"L{i}",) if i else ()) for i in range(n_backbone)
        )
        exits = tuple(ExitDecl(f"E{k + 1}", f"L{a + 1}") for k, a in enumerate(attach))
        return cls(name, backbone, exits)


def _validate(net: NetworkSpec) -> None:
    if not net.backbone:
        raise NetworkError("backbone is empty")
    seen: dict[str, int] = {}
    for i, layer in enumerate(net.backbone):
        if layer.id in seen:
            raise NetworkError(f"duplicate id {layer.id!r}")
        for p in layer.preds:
            if p not in seen:
                raise NetworkError(
                    f"layer {layer.id!r}: predecessor {p!r} is not a previously declared layer"
                )
        if i == 0 and layer.preds:
            raise NetworkError("first backbone layer must be the input (no predecessors)")
        if i > 0 and not layer.preds:
            raise NetworkError(f"layer {layer.id!r}: only the first layer may be a source")
        seen[layer.id] = i
    has_succ = {p for layer in net.backbone for p in layer.preds}
    sinks = [l.id for l in net.backbone if l.id not in has_succ]
    if len(sinks) != 1:
        raise NetworkError(f"backbone must have exactly one terminal layer, found {sinks}")
    terminal = sinks[0]
    if not net.candidate_exits:
        raise NetworkError("at least one candidate exit is required")
    attached: set[str] = set()
    for e in net.candidate_exits:
        if e.id in seen:
            raise NetworkError(f"duplicate id {e.id!r}")
        if e.attach_after not in seen:
            raise NetworkError(f"exit {e.id!r}: unknown attach point {e.attach_after!r}")
        if e.attach_after == terminal:
            raise NetworkError(f"exit {e.id!r} is attached to the terminal layer")
        if e.attach_after in attached:
            raise NetworkError(f"exit {e.id!r}: attach point {e.attach_after!r} already used")
        attached.add(e.attach_after)
        seen[e.id] = -1


def load_network(path: str | Path) -> NetworkSpec:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise NetworkError("network schema violation: top level must be an object")
    return NetworkSpec.from_dict(data)


def save_network(net: NetworkSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(net.to_dict(), indent=2) + "\n")


@dataclass(frozen=True)
class DesignPoint:
    """One early-exit configuration.

    ``p_exit`` is indexed by candidate-exit declaration order. ``terminal_exit``
    is set only by run-time budget truncation: the named exit then acts as the
    last classifier and everything deeper is dropped.
    """

    p_exit: tuple[int, ...]
    c_thr: float
    terminal_exit: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "p_exit", tuple(int(b) for b in self.p_exit))
        object.__setattr__(self, "c_thr", float(self.c_thr))
        if any(b not in (0, 1) for b in self.p_exit):
            raise NetworkError("p_exit must be binary")
        if not 0.0 <= self.c_thr <= 1.0:
            raise NetworkError(f"c_thr {self.c_thr} outside [0, 1]")
        if self.terminal_exit is not None and not self.p_exit[self.terminal_exit]:
            raise NetworkError("terminal exit must be instantiated")

    @property
    def n_exit(self) -> int:
        return sum(self.p_exit)

    @property
    def live_exits(self) -> list[int]:
        return [k for k, b in enumerate(self.p_exit) if b]

    @property
    def bits(self) -> str:
        return "".join(str(b) for b in self.p_exit)

    def to_dict(self, network: str = "") -> dict:
        out = {"network": network, "p_exit": list(self.p_exit), "c_thr": repr(self.c_thr)}
        if self.terminal_exit is not None:
            out["terminal_exit"] = self.terminal_exit
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DesignPoint":
        try:
            return cls(tuple(data["p_exit"]), float(data["c_thr"]), data.get("terminal_exit"))
        except (KeyError, TypeError, ValueError) as exc:
            raise NetworkError(f"design schema violation: {exc}") from None


def check_design(net: NetworkSpec, design: DesignPoint) -> None:
    if len(design.p_exit) != net.n_exits:
        raise NetworkError(
            f"p_exit has length {len(design.p_exit)}, network {net.name!r} has {net.n_exits} candidate exits"
        )


def load_design(path: str | Path) -> DesignPoint:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(data, dict) and "design" in data:
        data = data["design"]
    return DesignPoint.from_dict(data)


def enumerate_designs(net: NetworkSpec, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> int:
    return len(thresholds) * 2**net.n_exits - 1


def in_space(design: DesignPoint, thresholds: Sequence[float]) -> bool:
    """Membership in the searchable design space.

    The space holds every (p_exit, c_thr) pair on the grid except the
    no-exit design at the lowest threshold, which keeps its size at
    ``N_conf * 2**N - 1``. The no-exit design stays reachable through the
    other grid values.
    """
    if design.terminal_exit is not None or design.c_thr not in thresholds:
        return False
    return design.n_exit > 0 or design.c_thr != min(thresholds)


def iter_designs(net: NetworkSpec, thresholds: Sequence[float] = DEFAULT_THRESHOLDS):
    """Yield the whole design space in a fixed order (threshold-major)."""
    n = net.n_exits
    for c in sorted(thresholds):
        for code in range(2**n):
            d = DesignPoint(tuple((code >> (n - 1 - i)) & 1 for i in range(n)), c)
            if in_space(d, thresholds):
                yield d
