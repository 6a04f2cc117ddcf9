"""Raw telemetry model: input/gaze log parsing and reconstruction of a
synchronized uniform-tick timeline of control state and gaze position.

The master tick is 10 ms (the key logger's native period); denser gaze data
is downsampled by linear interpolation at tick midpoints. All coordinates
are normalized to the unit square with screen center at (0.5, 0.5).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import read_text
from .errors import (
    CoordOutOfRangeError,
    EmptySessionError,
    MalformedLineError,
    NonMonotonicTimeError,
)

DEFAULT_TICK_MS = 10

INPUT_LOG_HEADER = "t_ms,device,code,edge"
GAZE_LOG_HEADER = "t_ms,x,y,valid"
MANIFEST_HEADER = "player_id,class,input_log,gaze_log,duration_ms"


class Device(enum.Enum):
    KEYBOARD = "KB"
    MOUSE = "MOUSE"


class Edge(enum.Enum):
    DOWN = "DOWN"
    UP = "UP"


class ClassLabel(enum.Enum):
    PRO = "PRO"
    HIGH_AMATEUR = "HIGH_AMATEUR"
    LOW_AMATEUR = "LOW_AMATEUR"
    NEWBIE = "NEWBIE"


class BinaryLabel(enum.Enum):
    PRO = "PRO"
    NONPRO = "NONPRO"


@dataclass(frozen=True)
class InputEvent:
    t_ms: int
    device: Device
    code: str
    edge: Edge


@dataclass(frozen=True)
class GazeSample:
    t_ms: int
    x: float
    y: float
    valid: bool


@dataclass(frozen=True)
class SessionMeta:
    player_id: str
    class_label: ClassLabel
    duration_ms: int

    @property
    def binary_label(self) -> BinaryLabel:
        if self.class_label is ClassLabel.PRO:
            return BinaryLabel.PRO
        return BinaryLabel.NONPRO


@dataclass(frozen=True)
class TickState:
    """Synchronized state over one tick interval.

    ``gaze_valid`` false means the coordinates carry the last valid value
    and must be excluded from gaze statistics.
    """

    held: frozenset[str]
    gaze_x: float
    gaze_y: float
    gaze_valid: bool


class SessionTimeline:
    """Uniform-tick view of one session.

    Tick i covers [i*tick_ms, (i+1)*tick_ms). State is stored column-wise in
    numpy arrays; ``tick(i)`` materializes a TickState view on demand.
    """

    def __init__(self, meta: SessionMeta, tick_ms: int, controls: tuple[str, ...],
                 held: np.ndarray, gaze_x: np.ndarray, gaze_y: np.ndarray,
                 gaze_valid: np.ndarray, warnings: int = 0):
        self.meta = meta
        self.tick_ms = tick_ms
        self.controls = controls
        self._control_index = {c: i for i, c in enumerate(controls)}
        self.held = held
        self.gaze_x = gaze_x
        self.gaze_y = gaze_y
        self.gaze_valid = gaze_valid
        self.warnings = warnings

    @property
    def n_ticks(self) -> int:
        return self.held.shape[0]

    @property
    def duration_s(self) -> float:
        return self.n_ticks * self.tick_ms / 1000.0

    def __len__(self) -> int:
        return self.n_ticks

    def held_mask(self, code: str) -> np.ndarray:
        """Boolean per-tick held mask for one control; all-false if the
        control never appeared in the session."""
        idx = self._control_index.get(code)
        if idx is None:
            return np.zeros(self.n_ticks, dtype=bool)
        return self.held[:, idx]

    def tick(self, i: int) -> TickState:
        if not 0 <= i < self.n_ticks:
            raise IndexError(f"tick {i} out of range [0, {self.n_ticks})")
        codes = frozenset(c for c, j in self._control_index.items() if self.held[i, j])
        return TickState(codes, float(self.gaze_x[i]), float(self.gaze_y[i]),
                         bool(self.gaze_valid[i]))


def _split_csv_line(line: str, n_fields: int, lineno: int, source: str | None):
    parts = line.split(",")
    if len(parts) != n_fields:
        raise MalformedLineError(
            f"expected {n_fields} comma-separated fields, got {len(parts)}",
            source=source, line=lineno)
    return parts


def parse_input_log(text: str, source: str | None = None) -> list[InputEvent]:
    """Parse an input log (header ``t_ms,device,code,edge``)."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != INPUT_LOG_HEADER:
        raise MalformedLineError(
            f"expected header {INPUT_LOG_HEADER!r}", source=source, line=1)
    devices = {d.value: d for d in Device}
    edges = {e.value: e for e in Edge}
    events: list[InputEvent] = []
    prev_t = -1
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        raw_t, raw_dev, code, raw_edge = _split_csv_line(line, 4, lineno, source)
        try:
            t = int(raw_t)
        except ValueError:
            raise MalformedLineError(f"bad timestamp {raw_t!r}",
                                     source=source, line=lineno) from None
        if t < 0:
            raise MalformedLineError(f"negative timestamp {t}",
                                     source=source, line=lineno)
        if raw_dev not in devices:
            raise MalformedLineError(f"unknown device {raw_dev!r}",
                                     source=source, line=lineno)
        if not code:
            raise MalformedLineError("empty control code", source=source, line=lineno)
        if raw_edge not in edges:
            raise MalformedLineError(f"unknown edge {raw_edge!r}",
                                     source=source, line=lineno)
        if t < prev_t:
            raise NonMonotonicTimeError(
                f"timestamp {t} decreases (previous {prev_t})",
                source=source, line=lineno)
        prev_t = t
        events.append(InputEvent(t, devices[raw_dev], code, edges[raw_edge]))
    return events


def parse_gaze_log(text: str, source: str | None = None,
                   resolution: tuple[int, int] | None = None) -> list[GazeSample]:
    """Parse a gaze log (header ``t_ms,x,y,valid``).

    ``resolution`` = (width, height) declares pixel-space coordinates, which
    are divided through to the unit square.
    """
    lines = text.splitlines()
    if not lines or lines[0].strip() != GAZE_LOG_HEADER:
        raise MalformedLineError(
            f"expected header {GAZE_LOG_HEADER!r}", source=source, line=1)
    samples: list[GazeSample] = []
    prev_t = -1
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        raw_t, raw_x, raw_y, raw_valid = _split_csv_line(line, 4, lineno, source)
        try:
            t = int(raw_t)
            x = float(raw_x)
            y = float(raw_y)
        except ValueError:
            raise MalformedLineError(f"bad numeric field in {line!r}",
                                     source=source, line=lineno) from None
        if t < 0:
            raise MalformedLineError(f"negative timestamp {t}",
                                     source=source, line=lineno)
        if raw_valid not in ("0", "1"):
            raise MalformedLineError(f"valid flag must be 0 or 1, got {raw_valid!r}",
                                     source=source, line=lineno)
        if t < prev_t:
            raise NonMonotonicTimeError(
                f"timestamp {t} decreases (previous {prev_t})",
                source=source, line=lineno)
        prev_t = t
        valid = raw_valid == "1"
        if resolution is not None:
            x /= resolution[0]
            y /= resolution[1]
        if valid and not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise CoordOutOfRangeError(
                f"valid sample at ({x:g}, {y:g}) outside the unit square",
                source=source, line=lineno)
        samples.append(GazeSample(t, x, y, valid))
    return samples


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def synchronize(events: list[InputEvent], gaze: list[GazeSample],
                meta: SessionMeta, tick_ms: int = DEFAULT_TICK_MS) -> SessionTimeline:
    """Reconstruct the per-tick timeline from sorted event and gaze logs.

    A control is held at tick i when some press interval [t_down, t_up)
    contains i*tick_ms. Controls still down at session end are closed at
    duration_ms. Duplicate DOWNs and spurious UPs are ignored and counted
    in the ``warnings`` tally.
    """
    if tick_ms <= 0:
        raise ValueError(f"tick_ms must be positive, got {tick_ms}")
    n_ticks = meta.duration_ms // tick_ms
    if n_ticks <= 0:
        raise EmptySessionError(
            f"session {meta.player_id!r}: duration {meta.duration_ms} ms is "
            f"shorter than one {tick_ms} ms tick")

    controls: list[str] = []
    seen: dict[str, int] = {}
    for ev in events:
        if ev.code not in seen:
            seen[ev.code] = len(controls)
            controls.append(ev.code)

    held = np.zeros((n_ticks, len(controls)), dtype=bool)
    warnings = 0
    per_control: dict[str, list[InputEvent]] = {c: [] for c in controls}
    for ev in events:
        per_control[ev.code].append(ev)
    for code, evs in per_control.items():
        col = seen[code]
        down_t: int | None = None
        for ev in evs:
            if ev.edge is Edge.DOWN:
                if down_t is None:
                    down_t = ev.t_ms
                else:
                    warnings += 1
            else:
                if down_t is None:
                    warnings += 1
                else:
                    _mark_held(held, col, down_t, ev.t_ms, tick_ms, n_ticks)
                    down_t = None
        if down_t is not None:
            _mark_held(held, col, down_t, meta.duration_ms, tick_ms, n_ticks)

    gaze_x, gaze_y, gaze_valid = _interpolate_gaze(gaze, n_ticks, tick_ms)
    return SessionTimeline(meta, tick_ms, tuple(controls), held,
                           gaze_x, gaze_y, gaze_valid, warnings)


def _mark_held(held: np.ndarray, col: int, down_ms: int, up_ms: int,
               tick_ms: int, n_ticks: int) -> None:
    # tick i is inside [down, up) iff down <= i*tick < up
    lo = _ceil_div(down_ms, tick_ms)
    hi = min(_ceil_div(up_ms, tick_ms), n_ticks)
    if hi > lo:
        held[max(lo, 0):hi, col] = True


def _interpolate_gaze(gaze: list[GazeSample], n_ticks: int, tick_ms: int):
    """Per-tick gaze at tick midpoints.

    A tick is gaze-valid only when both immediately bracketing raw samples
    are valid, so interpolation never spans a dropout. Invalid ticks carry
    the last valid coordinates (the first valid ones before any exist).
    """
    mids = np.arange(n_ticks, dtype=np.float64) * tick_ms + tick_ms / 2.0
    if not gaze:
        center = np.full(n_ticks, 0.5)
        return center, center.copy(), np.zeros(n_ticks, dtype=bool)

    t = np.array([s.t_ms for s in gaze], dtype=np.float64)
    x = np.array([s.x for s in gaze], dtype=np.float64)
    y = np.array([s.y for s in gaze], dtype=np.float64)
    valid = np.array([s.valid for s in gaze], dtype=bool)

    prev = np.searchsorted(t, mids, side="right") - 1
    nxt = np.searchsorted(t, mids, side="left")
    in_range = (prev >= 0) & (nxt < len(gaze))
    tick_valid = in_range.copy()
    tick_valid[in_range] &= valid[prev[in_range]] & valid[nxt[in_range]]

    vt = t[valid]
    if vt.size == 0:
        center = np.full(n_ticks, 0.5)
        return center, center.copy(), np.zeros(n_ticks, dtype=bool)
    vx = x[valid]
    vy = y[valid]
    gx = np.interp(mids, vt, vx)
    gy = np.interp(mids, vt, vy)
    last = np.searchsorted(vt, mids, side="right") - 1
    last = np.clip(last, 0, vt.size - 1)
    gx = np.where(tick_valid, gx, vx[last])
    gy = np.where(tick_valid, gy, vy[last])
    return gx, gy, tick_valid


def timeline_to_logs(timeline: SessionTimeline) -> tuple[str, str]:
    """Reconstruct log texts (input, gaze) that resynchronize to the same
    held-set sequence at the same tick."""
    events: list[tuple[int, int, str, str]] = []
    for ci, code in enumerate(timeline.controls):
        col = timeline.held[:, ci].astype(np.int8)
        delta = np.diff(col)
        starts = list(np.nonzero(delta == 1)[0] + 1)
        ends = list(np.nonzero(delta == -1)[0] + 1)
        if col.size and col[0]:
            starts.insert(0, 0)
        if col.size and col[-1]:
            ends.append(col.size)
        for s, e in zip(starts, ends):
            events.append((s * timeline.tick_ms, ci, code, Edge.DOWN.value))
            events.append((e * timeline.tick_ms, ci, code, Edge.UP.value))
    lines = [INPUT_LOG_HEADER]
    for t, ci, code, edge in sorted(events, key=lambda e: e[0]):
        device = Device.MOUSE.value if code.startswith("MOUSE") else Device.KEYBOARD.value
        lines.append(f"{t},{device},{code},{edge}")
    input_text = "\n".join(lines) + "\n"

    glines = [GAZE_LOG_HEADER]
    half = timeline.tick_ms / 2.0
    for i in range(timeline.n_ticks):
        t = int(round(i * timeline.tick_ms + half))
        flag = 1 if timeline.gaze_valid[i] else 0
        glines.append(f"{t},{timeline.gaze_x[i]:.6f},{timeline.gaze_y[i]:.6f},{flag}")
    gaze_text = "\n".join(glines) + "\n"
    return input_text, gaze_text


@dataclass(frozen=True)
class ManifestEntry:
    meta: SessionMeta
    input_log: Path
    gaze_log: Path


def parse_manifest(text: str, base_dir: Path, source: str | None = None) -> list[ManifestEntry]:
    """Parse a cohort manifest; log paths are resolved relative to base_dir."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise MalformedLineError(
            f"expected header {MANIFEST_HEADER!r}", source=source, line=1)
    labels = {c.value: c for c in ClassLabel}
    entries: list[ManifestEntry] = []
    seen_players: set[str] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        pid, raw_cls, in_path, gz_path, raw_dur = _split_csv_line(line, 5, lineno, source)
        if not pid:
            raise MalformedLineError("empty player_id", source=source, line=lineno)
        if pid in seen_players:
            raise MalformedLineError(f"duplicate player_id {pid!r}",
                                     source=source, line=lineno)
        seen_players.add(pid)
        if raw_cls not in labels:
            raise MalformedLineError(f"unknown class {raw_cls!r}",
                                     source=source, line=lineno)
        try:
            duration = int(raw_dur)
        except ValueError:
            raise MalformedLineError(f"bad duration {raw_dur!r}",
                                     source=source, line=lineno) from None
        if duration <= 0:
            raise MalformedLineError(f"duration must be positive, got {duration}",
                                     source=source, line=lineno)
        meta = SessionMeta(pid, labels[raw_cls], duration)
        entries.append(ManifestEntry(meta, base_dir / in_path, base_dir / gz_path))
    return entries


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    return parse_manifest(read_text(path), path.parent, source=str(path))


def load_session(entry: ManifestEntry, tick_ms: int = DEFAULT_TICK_MS,
                 resolution: tuple[int, int] | None = None) -> SessionTimeline:
    events = parse_input_log(read_text(entry.input_log), source=str(entry.input_log))
    gaze = parse_gaze_log(read_text(entry.gaze_log), source=str(entry.gaze_log),
                          resolution=resolution)
    return synchronize(events, gaze, entry.meta, tick_ms)


def load_cohort(manifest_path: str | Path, tick_ms: int = DEFAULT_TICK_MS,
                resolution: tuple[int, int] | None = None) -> list[SessionTimeline]:
    return [load_session(e, tick_ms, resolution) for e in load_manifest(manifest_path)]
