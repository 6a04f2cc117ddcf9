"""Nine biometric features over rolling windows of a session timeline.

Feature column order is frozen across the toolkit: CSV columns, model
feature_names, and importance vectors all use FEATURE_NAMES order.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_text, fmt_g9, read_text
from .errors import (
    ConstantColumnError,
    EmptyDatasetError,
    InsufficientGazeError,
    MalformedLineError,
    SessionTooShortError,
    WindowOutOfBoundsError,
)
from .telemetry import BinaryLabel, SessionTimeline

KEYBOARD_KEYS = ("W", "A", "S", "D", "CTRL")

FEATURE_NAMES = (
    "keys1_usage",
    "mouse1_usage",
    "mouse1_duration_s",
    "w_or_s_usage",
    "w_or_s_duration_s",
    "a_or_d_usage",
    "a_or_d_duration_s",
    "a_ctrl_mouse1_usage",
    "gaze_std",
)

FEATURES_CSV_HEADER = "player_id,label,window_start_s," + ",".join(FEATURE_NAMES)


class PredicateKind(enum.Enum):
    SINGLE = "single"
    AND = "and"
    OR = "or"
    EXACTLY_ONE_KEY = "exactly_one_key"


@dataclass(frozen=True)
class ControlPredicate:
    """Boolean condition over the set of currently held controls.

    AND means the listed controls are all held, possibly among others; OR
    means at least one of them is held; EXACTLY_ONE_KEY means exactly one
    of the keyboard keys W, A, S, D, CTRL is held (mouse buttons ignored).
    """

    kind: PredicateKind
    operands: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind is PredicateKind.SINGLE and len(self.operands) != 1:
            raise ValueError("SINGLE predicate takes exactly one operand")
        if self.kind in (PredicateKind.AND, PredicateKind.OR) and not self.operands:
            raise ValueError(f"{self.kind.value.upper()} predicate needs operands")
        if self.kind is PredicateKind.EXACTLY_ONE_KEY and self.operands:
            raise ValueError("EXACTLY_ONE_KEY takes no operands")

    @classmethod
    def single(cls, code: str) -> "ControlPredicate":
        return cls(PredicateKind.SINGLE, (code,))

    @classmethod
    def all_of(cls, *codes: str) -> "ControlPredicate":
        return cls(PredicateKind.AND, tuple(codes))

    @classmethod
    def any_of(cls, *codes: str) -> "ControlPredicate":
        return cls(PredicateKind.OR, tuple(codes))

    @classmethod
    def exactly_one_key(cls) -> "ControlPredicate":
        return cls(PredicateKind.EXACTLY_ONE_KEY)

    def holds(self, held: frozenset[str]) -> bool:
        """Evaluate on one tick's held set."""
        if self.kind is PredicateKind.SINGLE:
            return self.operands[0] in held
        if self.kind is PredicateKind.AND:
            return all(c in held for c in self.operands)
        if self.kind is PredicateKind.OR:
            return any(c in held for c in self.operands)
        return sum(1 for k in KEYBOARD_KEYS if k in held) == 1

    def mask(self, timeline: SessionTimeline) -> np.ndarray:
        """Vectorized per-tick evaluation over a whole timeline."""
        if self.kind is PredicateKind.SINGLE:
            return timeline.held_mask(self.operands[0]).copy()
        if self.kind is PredicateKind.AND:
            out = np.ones(timeline.n_ticks, dtype=bool)
            for c in self.operands:
                out &= timeline.held_mask(c)
            return out
        if self.kind is PredicateKind.OR:
            out = np.zeros(timeline.n_ticks, dtype=bool)
            for c in self.operands:
                out |= timeline.held_mask(c)
            return out
        count = np.zeros(timeline.n_ticks, dtype=np.int8)
        for k in KEYBOARD_KEYS:
            count += timeline.held_mask(k)
        return count == 1


PRED_KEYS1 = ControlPredicate.exactly_one_key()
PRED_MOUSE1 = ControlPredicate.single("MOUSE1")
PRED_W_OR_S = ControlPredicate.any_of("W", "S")
PRED_A_OR_D = ControlPredicate.any_of("A", "D")
PRED_A_CTRL_MOUSE1 = ControlPredicate.all_of("A", "CTRL", "MOUSE1")


@dataclass(frozen=True)
class WindowSpec:
    width_s: float = 300.0
    step_s: float = 30.0
    min_gaze_coverage: float = 0.5

    def __post_init__(self):
        if not 0 < self.step_s <= self.width_s:
            raise ValueError(
                f"need 0 < step_s <= width_s, got step {self.step_s} "
                f"width {self.width_s}")
        if not 0.0 <= self.min_gaze_coverage <= 1.0:
            raise ValueError("min_gaze_coverage must be in [0, 1]")


@dataclass(frozen=True)
class FeatureVector:
    player_id: str
    label: BinaryLabel
    window_start_s: float
    keys1_usage: float
    mouse1_usage: float
    mouse1_duration_s: float
    w_or_s_usage: float
    w_or_s_duration_s: float
    a_or_d_usage: float
    a_or_d_duration_s: float
    a_ctrl_mouse1_usage: float
    gaze_std: float

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in FEATURE_NAMES)


@dataclass
class FeatureDataset:
    rows: list[FeatureVector] = field(default_factory=list)
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def __len__(self) -> int:
        return len(self.rows)

    def matrix(self) -> np.ndarray:
        return np.array([r.values() for r in self.rows], dtype=np.float64).reshape(
            len(self.rows), len(self.feature_names))

    def is_pro(self) -> np.ndarray:
        return np.array([r.label is BinaryLabel.PRO for r in self.rows], dtype=bool)

    def player_ids(self) -> list[str]:
        return [r.player_id for r in self.rows]


def _window_ticks(timeline: SessionTimeline, start_s: float, width_s: float) -> tuple[int, int]:
    """Tick index range [lo, hi) for a window; the window must sit on the
    tick grid and inside the session."""
    if width_s <= 0:
        raise ValueError("window width must be positive")
    lo_f = start_s * 1000.0 / timeline.tick_ms
    n_f = width_s * 1000.0 / timeline.tick_ms
    lo = int(round(lo_f))
    n = int(round(n_f))
    if abs(lo_f - lo) > 1e-6 or abs(n_f - n) > 1e-6:
        raise ValueError(
            f"window [{start_s}, {start_s + width_s}) s does not align with "
            f"the {timeline.tick_ms} ms tick grid")
    hi = lo + n
    if lo < 0 or hi > timeline.n_ticks:
        raise WindowOutOfBoundsError(
            f"window [{start_s:g}, {start_s + width_s:g}) s outside session "
            f"of {timeline.duration_s:g} s")
    return lo, hi


def usage_fraction(timeline: SessionTimeline, start_s: float, width_s: float,
                   pred: ControlPredicate) -> float:
    """Fraction of window ticks on which the predicate holds."""
    lo, hi = _window_ticks(timeline, start_s, width_s)
    return float(np.mean(pred.mask(timeline)[lo:hi]))


def _run_lengths(mask: np.ndarray) -> np.ndarray:
    """Lengths (in ticks) of maximal true runs, in order."""
    if mask.size == 0:
        return np.zeros(0, dtype=np.int64)
    m = mask.astype(np.int8)
    delta = np.diff(m)
    starts = np.nonzero(delta == 1)[0] + 1
    ends = np.nonzero(delta == -1)[0] + 1
    if m[0]:
        starts = np.concatenate(([0], starts))
    if m[-1]:
        ends = np.concatenate((ends, [m.size]))
    return ends - starts


def mean_press_duration(timeline: SessionTimeline, start_s: float, width_s: float,
                        pred: ControlPredicate) -> float:
    """Mean length in seconds of maximal predicate runs, clipped to the
    window; 0.0 when the predicate never holds in the window."""
    lo, hi = _window_ticks(timeline, start_s, width_s)
    runs = _run_lengths(pred.mask(timeline)[lo:hi])
    if runs.size == 0:
        return 0.0
    return float(runs.mean() * timeline.tick_ms / 1000.0)


def gaze_coverage(timeline: SessionTimeline, start_s: float, width_s: float) -> float:
    lo, hi = _window_ticks(timeline, start_s, width_s)
    return float(np.mean(timeline.gaze_valid[lo:hi]))


def gaze_std(timeline: SessionTimeline, start_s: float, width_s: float,
             min_gaze_coverage: float = 0.5) -> float:
    """Mean Euclidean distance of gaze from screen center over gaze-valid
    ticks in the window."""
    lo, hi = _window_ticks(timeline, start_s, width_s)
    valid = timeline.gaze_valid[lo:hi]
    coverage = float(np.mean(valid)) if valid.size else 0.0
    if coverage < min_gaze_coverage:
        raise InsufficientGazeError(
            f"gaze coverage {coverage:.3f} below {min_gaze_coverage:g} in "
            f"window starting at {start_s:g} s")
    dx = timeline.gaze_x[lo:hi][valid] - 0.5
    dy = timeline.gaze_y[lo:hi][valid] - 0.5
    return float(np.mean(np.hypot(dx, dy)))


def window_starts(duration_s: float, spec: WindowSpec) -> list[float]:
    """Window start offsets {0, step, 2*step, ...} with start+width inside
    the session."""
    starts = []
    k = 0
    while True:
        start = k * spec.step_s
        if start + spec.width_s > duration_s + 1e-9:
            break
        starts.append(start)
        k += 1
    return starts


def extract_features(timeline: SessionTimeline,
                     spec: WindowSpec = WindowSpec()) -> list[FeatureVector]:
    """One FeatureVector per rolling window; windows below the gaze
    coverage threshold are dropped."""
    duration_s = timeline.duration_s
    if duration_s + 1e-9 < spec.width_s:
        raise SessionTooShortError(
            f"session {timeline.meta.player_id!r} lasts {duration_s:g} s, "
            f"shorter than one {spec.width_s:g} s window")

    masks = {
        "keys1": PRED_KEYS1.mask(timeline),
        "mouse1": PRED_MOUSE1.mask(timeline),
        "w_or_s": PRED_W_OR_S.mask(timeline),
        "a_or_d": PRED_A_OR_D.mask(timeline),
        "a_ctrl_mouse1": PRED_A_CTRL_MOUSE1.mask(timeline),
    }
    valid = timeline.gaze_valid
    dist = np.hypot(timeline.gaze_x - 0.5, timeline.gaze_y - 0.5)
    tick_s = timeline.tick_ms / 1000.0

    def mean_run(mask: np.ndarray) -> float:
        runs = _run_lengths(mask)
        return float(runs.mean() * tick_s) if runs.size else 0.0

    rows: list[FeatureVector] = []
    for start in window_starts(duration_s, spec):
        lo, hi = _window_ticks(timeline, start, spec.width_s)
        v = valid[lo:hi]
        coverage = float(v.mean())
        if coverage < spec.min_gaze_coverage:
            continue
        rows.append(FeatureVector(
            player_id=timeline.meta.player_id,
            label=timeline.meta.binary_label,
            window_start_s=start,
            keys1_usage=float(masks["keys1"][lo:hi].mean()),
            mouse1_usage=float(masks["mouse1"][lo:hi].mean()),
            mouse1_duration_s=mean_run(masks["mouse1"][lo:hi]),
            w_or_s_usage=float(masks["w_or_s"][lo:hi].mean()),
            w_or_s_duration_s=mean_run(masks["w_or_s"][lo:hi]),
            a_or_d_usage=float(masks["a_or_d"][lo:hi].mean()),
            a_or_d_duration_s=mean_run(masks["a_or_d"][lo:hi]),
            a_ctrl_mouse1_usage=float(masks["a_ctrl_mouse1"][lo:hi].mean()),
            gaze_std=float(dist[lo:hi][v].mean()),
        ))
    return rows


def extract_cohort_features(timelines: list[SessionTimeline],
                            spec: WindowSpec = WindowSpec()) -> FeatureDataset:
    rows: list[FeatureVector] = []
    for tl in timelines:
        rows.extend(extract_features(tl, spec))
    return FeatureDataset(rows)


def feature_correlations(dataset: FeatureDataset) -> np.ndarray:
    """Pearson correlation matrix of the nine feature columns."""
    m = dataset.matrix()
    if m.shape[0] < 2:
        raise EmptyDatasetError("correlations need at least 2 rows")
    stds = m.std(axis=0)
    for name, s in zip(dataset.feature_names, stds):
        if s == 0.0:
            raise ConstantColumnError(f"feature column {name!r} is constant")
    corr = np.corrcoef(m, rowvar=False)
    corr = np.clip((corr + corr.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def dataset_to_csv(dataset: FeatureDataset) -> str:
    lines = [FEATURES_CSV_HEADER]
    for r in dataset.rows:
        vals = ",".join(fmt_g9(v) for v in r.values())
        lines.append(f"{r.player_id},{r.label.value},{fmt_g9(r.window_start_s)},{vals}")
    return "\n".join(lines) + "\n"


def dataset_from_csv(text: str, source: str | None = None) -> FeatureDataset:
    lines = text.splitlines()
    if not lines or lines[0].strip() != FEATURES_CSV_HEADER:
        raise MalformedLineError("unexpected feature CSV header",
                                 source=source, line=1)
    labels = {b.value: b for b in BinaryLabel}
    rows: list[FeatureVector] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3 + len(FEATURE_NAMES):
            raise MalformedLineError(
                f"expected {3 + len(FEATURE_NAMES)} fields, got {len(parts)}",
                source=source, line=lineno)
        pid, raw_label, raw_start = parts[:3]
        if raw_label not in labels:
            raise MalformedLineError(f"unknown label {raw_label!r}",
                                     source=source, line=lineno)
        try:
            start = float(raw_start)
            feats = [float(v) for v in parts[3:]]
        except ValueError:
            raise MalformedLineError(f"bad numeric field in {line!r}",
                                     source=source, line=lineno) from None
        rows.append(FeatureVector(pid, labels[raw_label], start, *feats))
    return FeatureDataset(rows)


def write_dataset(dataset: FeatureDataset, path: str | Path) -> None:
    atomic_write_text(path, dataset_to_csv(dataset))


def read_dataset(path: str | Path) -> FeatureDataset:
    return dataset_from_csv(read_text(path), source=str(path))
