"""Small built-in instances: the seven-layer worked example and a synthetic benchmark."""

from __future__ import annotations

import numpy as np

from .calibration import CalibrationTrace
from .network import NetworkSpec
from .perf import DeviceProfile
from .simulator import TraceGenSpec, generate_trace


def worked_network() -> NetworkSpec:
    """Five-layer chain, two candidate exits.

    The dead exit (after L4) is declared first so that it occupies node 6
    and edge row 5; the live exit after L2 is node 7.
    """
    return NetworkSpec.from_dict(
        {
            "name": "worked",
            "backbone": [
                {"id": f"L{i}", "preds": [f"L{i - 1}"] if i > 1 else []} for i in range(1, 6)
            ],
            "candidate_exits": [
                {"id": "exit2", "attach_after": "L4"},
                {"id": "exit1", "attach_after": "L2"},
            ],
        }
    )


def worked_trace() -> CalibrationTrace:
    """Five samples; four clear 0.85 at exit 1."""
    conf = np.array([[0.3, 0.9, 0.95]] * 4 + [[0.3, 0.7, 0.95]])
    correct = np.array([[0, 1, 1], [0, 1, 1], [0, 0, 1], [0, 1, 1], [0, 0, 1]], dtype=bool)
    return CalibrationTrace(conf, correct)


def synthetic_benchmark(
    n_exits: int = 10, n_samples: int = 2000, seed: int = 0
) -> tuple[NetworkSpec, CalibrationTrace, DeviceProfile]:
    """Chain of ``n_exits + 1`` layers with an exit after every interior layer."""
    net = NetworkSpec.chain(f"synthetic{n_exits}", n_exits + 1, range(n_exits))
    rng = np.random.default_rng(seed)
    layer_ms = rng.uniform(1.0, 3.0, net.n_backbone)
    head_ms = rng.uniform(0.05, 0.4, n_exits)
    mem = np.concatenate(
        [rng.integers(200_000, 2_000_000, net.n_backbone), rng.integers(20_000, 200_000, n_exits)]
    )
    profile = DeviceProfile("synthetic", np.concatenate([layer_ms, head_ms]), mem)
    trace = generate_trace(TraceGenSpec(n_samples=n_samples, seed=seed), net)
    return net, trace, profile
