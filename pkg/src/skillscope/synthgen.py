"""Deterministic synthetic-cohort generator.

Each control of an archetype is an alternating renewal process (exponential
gaps, log-normal holds) emitted as DOWN/UP events; combo maneuvers overlay
simultaneous A+CTRL+MOUSE1 holds; gaze follows a mean-reverting process
around screen center sampled at 250 Hz and clipped to the unit square.
Everything is a pure function of (parameters, seed) at the byte level.

The archetype tables below are hand-calibrated synthetic constants, not
measurements: they are tuned so cohort-level feature orderings between
skill classes come out as intended (pros click more, move with shorter
key holds, fixate closer to center) while mean MOUSE1 hold lengths stay
deliberately close across classes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np
from scipy.signal import lfilter

from ._io import atomic_write_text, ensure_dir
from .errors import InvalidDurationError
from .telemetry import (
    GAZE_LOG_HEADER,
    INPUT_LOG_HEADER,
    MANIFEST_HEADER,
    ClassLabel,
    Device,
)

GAZE_HZ = 250
GAZE_DT_MS = 1000 // GAZE_HZ

CONTROL_ORDER = ("W", "A", "S", "D", "CTRL", "MOUSE1")
COMBO_CONTROLS = ("A", "CTRL", "MOUSE1")

# stream ids: 0..5 per-control, then combo, then gaze
_COMBO_STREAM = len(CONTROL_ORDER)
_GAZE_STREAM = _COMBO_STREAM + 1

MIN_COHORT_DURATION_S = 300.0  # shortest session one default feature window fits


@dataclass(frozen=True)
class ControlProcess:
    press_rate: float         # presses per second
    hold_median_s: float
    hold_dispersion: float    # log-normal sigma

    def __post_init__(self):
        if self.press_rate < 0:
            raise ValueError("press_rate must be >= 0")
        if self.hold_median_s <= 0 or self.hold_dispersion < 0:
            raise ValueError("bad hold distribution parameters")
        if self.press_rate > 0 and self.press_rate * self.mean_hold_s >= 1.0:
            raise ValueError(
                f"duty cycle {self.press_rate * self.mean_hold_s:.3f} >= 1, "
                "no room for gaps")

    @property
    def mean_hold_s(self) -> float:
        return self.hold_median_s * math.exp(self.hold_dispersion**2 / 2.0)


@dataclass(frozen=True)
class Archetype:
    name: ClassLabel
    controls: Mapping[str, ControlProcess]
    combo_rate_per_min: float
    combo_hold_median_s: float
    combo_hold_dispersion: float
    gaze_sigma: float
    gaze_reversion_per_s: float

    def __post_init__(self):
        for code in self.controls:
            if code not in CONTROL_ORDER:
                raise ValueError(f"unknown control {code!r}")
        if self.combo_rate_per_min < 0:
            raise ValueError("combo_rate_per_min must be >= 0")
        if self.combo_hold_median_s <= 0 or self.combo_hold_dispersion < 0:
            raise ValueError("bad combo hold distribution")
        if not 0.0 < self.gaze_sigma <= 0.3:
            raise ValueError("gaze_sigma must be in (0, 0.3]")
        if self.gaze_reversion_per_s <= 0:
            raise ValueError("gaze_reversion_per_s must be positive")


def _archetype(name, w, a, s, d, ctrl, mouse1, combo_per_min, gaze_sigma):
    mouse = ControlProcess(*mouse1)
    return Archetype(
        name=name,
        controls=MappingProxyType({
            "W": ControlProcess(*w),
            "A": ControlProcess(*a),
            "S": ControlProcess(*s),
            "D": ControlProcess(*d),
            "CTRL": ControlProcess(*ctrl),
            "MOUSE1": mouse,
        }),
        combo_rate_per_min=combo_per_min,
        combo_hold_median_s=mouse.hold_median_s,
        combo_hold_dispersion=mouse.hold_dispersion,
        gaze_sigma=gaze_sigma,
        gaze_reversion_per_s=2.0,
    )


# (press_rate /s, hold median s, hold dispersion) per control
ARCHETYPES: Mapping[ClassLabel, Archetype] = MappingProxyType({
    ClassLabel.PRO: _archetype(
        ClassLabel.PRO,
        w=(1.513, 0.35, 0.5), a=(0.577, 0.16, 0.4), s=(0.141, 0.25, 0.5),
        d=(0.577, 0.16, 0.4), ctrl=(0.185, 0.30, 0.4),
        mouse1=(1.017, 0.1555, 0.45),
        combo_per_min=6.0, gaze_sigma=0.07),
    ClassLabel.HIGH_AMATEUR: _archetype(
        ClassLabel.HIGH_AMATEUR,
        w=(0.471, 0.90, 0.5), a=(0.378, 0.22, 0.4), s=(0.196, 0.45, 0.5),
        d=(0.378, 0.22, 0.4), ctrl=(0.158, 0.35, 0.4),
        mouse1=(0.847, 0.16, 0.45),
        combo_per_min=1.2, gaze_sigma=0.11),
    ClassLabel.LOW_AMATEUR: _archetype(
        ClassLabel.LOW_AMATEUR,
        w=(0.384, 1.15, 0.5), a=(0.213, 0.26, 0.4), s=(0.235, 0.60, 0.5),
        d=(0.213, 0.26, 0.4), ctrl=(0.092, 0.40, 0.4),
        mouse1=(0.621, 0.16, 0.45),
        combo_per_min=0.3, gaze_sigma=0.15),
    ClassLabel.NEWBIE: _archetype(
        ClassLabel.NEWBIE,
        w=(0.126, 1.70, 0.55), a=(0.062, 0.30, 0.4), s=(0.032, 0.80, 0.55),
        d=(0.062, 0.30, 0.4), ctrl=(0.023, 0.40, 0.4),
        mouse1=(0.395, 0.16, 0.45),
        combo_per_min=0.05, gaze_sigma=0.21),
})

DEFAULT_COUNTS: Mapping[ClassLabel, int] = MappingProxyType({
    ClassLabel.PRO: 4,
    ClassLabel.HIGH_AMATEUR: 11,
    ClassLabel.LOW_AMATEUR: 7,
    ClassLabel.NEWBIE: 6,
})


@dataclass(frozen=True)
class CohortSpec:
    counts: Mapping[ClassLabel, int] = DEFAULT_COUNTS
    duration_s: float = 1800.0
    seed: int = 0

    def __post_init__(self):
        for label in ClassLabel:
            if self.counts.get(label, 0) < 0:
                raise ValueError(f"negative count for {label.value}")
        if self.duration_s < MIN_COHORT_DURATION_S:
            raise InvalidDurationError(
                f"cohort sessions must last >= {MIN_COHORT_DURATION_S:g} s "
                f"(one default feature window), got {self.duration_s:g}")


def _stream(seed: int, stream_id: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream_id,))
    return np.random.Generator(np.random.PCG64(ss))


def _renewal_intervals(gen: np.random.Generator, rate: float, median: float,
                       dispersion: float, duration_s: float) -> list[tuple[float, float]]:
    """(start, end) press intervals of one alternating renewal process."""
    if rate <= 0.0:
        return []
    mean_hold = median * math.exp(dispersion**2 / 2.0)
    mean_gap = 1.0 / rate - mean_hold
    out: list[tuple[float, float]] = []
    t = 0.0
    while t < duration_s:
        n = max(16, int((duration_s - t) * rate * 1.5))
        gaps = gen.exponential(mean_gap, n)
        holds = gen.lognormal(math.log(median), dispersion, n)
        ends = t + np.cumsum(gaps + holds)
        starts = ends - holds
        for s, e in zip(starts, ends):
            if s >= duration_s:
                break
            out.append((float(s), float(e)))
        t = float(ends[-1])
    return out


def _combo_intervals(gen: np.random.Generator, rate_per_min: float,
                     median: float, dispersion: float,
                     duration_s: float) -> list[tuple[float, float]]:
    """Poisson combo arrivals with log-normal hold lengths."""
    if rate_per_min <= 0.0:
        return []
    mean_gap = 60.0 / rate_per_min
    out: list[tuple[float, float]] = []
    t = 0.0
    while t < duration_s:
        n = max(16, int((duration_s - t) / mean_gap * 1.5))
        starts = t + np.cumsum(gen.exponential(mean_gap, n))
        holds = gen.lognormal(math.log(median), dispersion, n)
        for s, h in zip(starts, holds):
            if s >= duration_s:
                break
            out.append((float(s), float(s + h)))
        t = float(starts[-1])
    return out


def _merge_ms(intervals: list[tuple[float, float]],
              duration_ms: int) -> list[tuple[int, int]]:
    """Round to ms, clip to the session, and merge touching/overlapping
    intervals so the emitted DOWN/UP stream alternates strictly."""
    rounded = []
    for s, e in intervals:
        d = int(round(s * 1000.0))
        u = min(int(round(e * 1000.0)), duration_ms)
        if d < duration_ms and u > d:
            rounded.append((d, u))
    rounded.sort()
    merged: list[tuple[int, int]] = []
    for d, u in rounded:
        if merged and d <= merged[-1][1]:
            if u > merged[-1][1]:
                merged[-1] = (merged[-1][0], u)
        else:
            merged.append((d, u))
    return merged


def generate_session(archetype: Archetype, duration_s: float,
                     seed: int) -> tuple[str, str]:
    """Input and gaze log texts for one synthetic session."""
    if duration_s <= 0:
        raise InvalidDurationError(f"duration must be positive, got {duration_s:g}")
    duration_ms = int(round(duration_s * 1000.0))
    if duration_ms <= 0:
        raise InvalidDurationError("duration rounds to zero milliseconds")

    per_control: dict[str, list[tuple[float, float]]] = {c: [] for c in CONTROL_ORDER}
    for i, code in enumerate(CONTROL_ORDER):
        proc = archetype.controls.get(code)
        if proc is None:
            continue
        gen = _stream(seed, i)
        per_control[code] = _renewal_intervals(
            gen, proc.press_rate, proc.hold_median_s, proc.hold_dispersion,
            duration_s)
    combos = _combo_intervals(
        _stream(seed, _COMBO_STREAM), archetype.combo_rate_per_min,
        archetype.combo_hold_median_s, archetype.combo_hold_dispersion,
        duration_s)
    for code in COMBO_CONTROLS:
        per_control[code].extend(combos)

    events: list[tuple[int, str, str, str]] = []
    for code in CONTROL_ORDER:
        device = (Device.MOUSE if code.startswith("MOUSE") else Device.KEYBOARD).value
        for d, u in _merge_ms(per_control[code], duration_ms):
            events.append((d, device, code, "DOWN"))
            events.append((u, device, code, "UP"))
    events.sort(key=lambda ev: ev[0])
    input_lines = [INPUT_LOG_HEADER]
    input_lines.extend(f"{t},{dev},{code},{edge}" for t, dev, code, edge in events)

    gaze_lines = [GAZE_LOG_HEADER]
    n = (duration_ms - 1) // GAZE_DT_MS + 1
    gen = _stream(seed, _GAZE_STREAM)
    rho = math.exp(-archetype.gaze_reversion_per_s * GAZE_DT_MS / 1000.0)
    innov = archetype.gaze_sigma * math.sqrt(1.0 - rho * rho)
    coords = []
    for _ in range(2):
        z = gen.standard_normal(n)
        e = np.empty(n)
        e[0] = z[0] * archetype.gaze_sigma
        e[1:] = z[1:] * innov
        dev = lfilter([1.0], [1.0, -rho], e)
        coords.append(np.clip(0.5 + dev, 0.0, 1.0))
    xs, ys = coords
    t_ms = np.arange(n) * GAZE_DT_MS
    gaze_lines.extend(
        f"{t},{x:.6f},{y:.6f},1" for t, x, y in zip(t_ms, xs, ys))
    return "\n".join(input_lines) + "\n", "\n".join(gaze_lines) + "\n"


@dataclass(frozen=True)
class GeneratedCohort:
    manifest_path: Path
    player_ids: tuple[str, ...]


def generate_cohort(spec: CohortSpec, out_dir: str | Path) -> GeneratedCohort:
    """Write one session per synthetic player plus the cohort manifest.

    Per-session randomness derives from (spec.seed, player index), so any
    generation order produces identical bytes.
    """
    out = ensure_dir(out_dir)
    duration_ms = int(round(spec.duration_s * 1000.0))
    manifest_lines = [MANIFEST_HEADER]
    player_ids: list[str] = []
    player_index = 0
    for label in (ClassLabel.PRO, ClassLabel.HIGH_AMATEUR,
                  ClassLabel.LOW_AMATEUR, ClassLabel.NEWBIE):
        for i in range(spec.counts.get(label, 0)):
            pid = f"{label.value.lower()}_{i:02d}"
            session_seed = int(np.random.SeedSequence(
                entropy=spec.seed, spawn_key=(player_index,)
            ).generate_state(1, np.uint64)[0])
            input_text, gaze_text = generate_session(
                ARCHETYPES[label], spec.duration_s, session_seed)
            input_name = f"{pid}_input.csv"
            gaze_name = f"{pid}_gaze.csv"
            atomic_write_text(out / input_name, input_text)
            atomic_write_text(out / gaze_name, gaze_text)
            manifest_lines.append(
                f"{pid},{label.value},{input_name},{gaze_name},{duration_ms}")
            player_ids.append(pid)
            player_index += 1
    manifest_path = out / "manifest.csv"
    atomic_write_text(manifest_path, "\n".join(manifest_lines) + "\n")
    return GeneratedCohort(manifest_path, tuple(player_ids))
