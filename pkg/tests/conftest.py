from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from skillscope.telemetry import (
    ClassLabel,
    Device,
    Edge,
    GazeSample,
    InputEvent,
    SessionMeta,
    synchronize,
)


def make_events(specs):
    """InputEvents from (t_ms, code, edge) tuples, device inferred."""
    out = []
    for t, code, edge in specs:
        dev = Device.MOUSE if code.startswith("MOUSE") else Device.KEYBOARD
        out.append(InputEvent(t, dev, code, Edge[edge]))
    return out


def make_gaze(specs):
    """GazeSamples from (t_ms, x, y, valid) tuples."""
    return [GazeSample(t, x, y, bool(v)) for t, x, y, v in specs]


def dense_gaze(duration_ms, x=0.5, y=0.5, period_ms=50):
    return [GazeSample(t, x, y, True) for t in range(0, duration_ms, period_ms)]


def make_timeline(event_specs, duration_ms, gaze=None, tick_ms=10,
                  player_id="p0", label=ClassLabel.PRO):
    meta = SessionMeta(player_id, label, duration_ms)
    if gaze is None:
        gaze = dense_gaze(duration_ms)
    return synchronize(make_events(event_specs), gaze, meta, tick_ms)


def random_session_events(rng, duration_ms, codes=("W", "A", "S", "D", "CTRL", "MOUSE1"),
                          mean_rate_hz=2.0, noise=0.0):
    """Sorted random event list; ``noise`` adds stray DOWN/UP transitions."""
    raw = []
    for code in codes:
        n = rng.poisson(mean_rate_hz * duration_ms / 1000.0)
        times = np.sort(rng.integers(0, duration_ms, size=2 * n))
        for i in range(0, len(times) - 1, 2):
            raw.append((int(times[i]), code, "DOWN"))
            raw.append((int(times[i + 1]), code, "UP"))
        for _ in range(rng.poisson(noise)):
            t = int(rng.integers(0, duration_ms))
            edge = "DOWN" if rng.random() < 0.5 else "UP"
            raw.append((t, code, edge))
    raw.sort(key=lambda e: e[0])
    return make_events(raw)


def random_gaze(rng, duration_ms, period_ms=4, dropout=0.05):
    out = []
    for t in range(0, duration_ms, period_ms):
        valid = rng.random() >= dropout
        out.append(GazeSample(t, float(rng.random()), float(rng.random()), valid))
    return out


@pytest.fixture(scope="session")
def small_cohort_dir(tmp_path_factory):
    """Two players per class (cross-validation needs a second PRO), 600 s
    sessions; shared by CLI tests."""
    from skillscope.synthgen import CohortSpec, generate_cohort
    from skillscope.telemetry import ClassLabel

    out = tmp_path_factory.mktemp("cohort")
    counts = {ClassLabel.PRO: 2, ClassLabel.HIGH_AMATEUR: 2,
              ClassLabel.LOW_AMATEUR: 2, ClassLabel.NEWBIE: 2}
    generate_cohort(CohortSpec(counts=counts, duration_s=600.0, seed=11), out)
    return out
