"""Mann-Whitney U testing of each feature between athlete (PRO) and player
(NONPRO) windows, with non-overlap subsampling to de-correlate samples.

The exact null distribution is computed by dynamic-programming counts and is
used only for tie-free samples with max(n, m) <= 20; otherwise the normal
approximation with tie-corrected variance and 0.5 continuity correction
applies.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from ._io import fmt_g9
from .errors import EmptySampleError, MissingClassError
from .features import FEATURE_NAMES, FeatureDataset, FeatureVector, WindowSpec
from .telemetry import BinaryLabel

EXACT_MAX_N = 20
DEFAULT_ALPHA = 0.01

SIGNIFICANCE_CSV_HEADER = "feature,u,p_value,p_raw,method,n_pro,n_nonpro,significant"


class Alternative(enum.Enum):
    TWO_SIDED = "two_sided"
    GREATER = "greater"   # second sample stochastically greater
    LESS = "less"         # second sample stochastically smaller


class Method(enum.Enum):
    EXACT = "exact"
    NORMAL_APPROX = "normal_approx"


@dataclass(frozen=True)
class UTestResult:
    u_statistic: float
    p_value: float
    alternative: Alternative
    method: Method
    n_a: int
    n_b: int


def _midranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1, ties receiving the average of their positions."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


_exact_counts_cache: dict[tuple[int, int], np.ndarray] = {}


def _exact_counts(n: int, m: int) -> np.ndarray:
    """counts[u] = number of rank arrangements of n A's among n+m slots with
    U_a = u. Recurrence on the largest pooled element: if it is an A it beats
    all m B's currently present, else it contributes nothing."""
    key = (n, m)
    cached = _exact_counts_cache.get(key)
    if cached is not None:
        return cached
    size = n * m + 1
    table = np.zeros((n + 1, m + 1, size), dtype=np.int64)
    table[0, :, 0] = 1
    table[:, 0, 0] = 1
    for a in range(1, n + 1):
        for b in range(1, m + 1):
            table[a, b, :] = table[a, b - 1, :]
            table[a, b, b:] += table[a - 1, b, :size - b]
    counts = table[n, m].copy()
    _exact_counts_cache[key] = counts
    return counts


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def mann_whitney_u(a, b, alternative: Alternative = Alternative.TWO_SIDED) -> UTestResult:
    """U statistic of the first sample and its p-value.

    GREATER tests whether the second sample is stochastically greater
    (small U_a is evidence), LESS the reverse, mirroring the directional
    phrasing "b greater than a".
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n_a, n_b = a.size, b.size
    if n_a == 0 or n_b == 0:
        raise EmptySampleError("both samples must be non-empty")

    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    u_a = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0)

    _, tie_counts = np.unique(pooled, return_counts=True)
    has_ties = bool(np.any(tie_counts > 1))

    if not has_ties and max(n_a, n_b) <= EXACT_MAX_N:
        method = Method.EXACT
        counts = _exact_counts(n_a, n_b)
        total = float(counts.sum())
        u_int = int(round(u_a))
        p_le = float(counts[:u_int + 1].sum()) / total
        p_ge = float(counts[u_int:].sum()) / total
    else:
        method = Method.NORMAL_APPROX
        n_tot = n_a + n_b
        mu = n_a * n_b / 2.0
        tie_term = float(np.sum(tie_counts**3 - tie_counts))
        var = n_a * n_b / 12.0 * ((n_tot + 1) - tie_term / (n_tot * (n_tot - 1)))
        if var <= 0.0:
            p_le = p_ge = 1.0
        else:
            sigma = math.sqrt(var)
            p_le = 1.0 - _norm_sf((u_a + 0.5 - mu) / sigma)
            p_ge = _norm_sf((u_a - 0.5 - mu) / sigma)

    if alternative is Alternative.GREATER:
        p = p_le
    elif alternative is Alternative.LESS:
        p = p_ge
    else:
        p = min(1.0, 2.0 * min(p_le, p_ge))
    p = min(max(p, 1e-300), 1.0)
    return UTestResult(u_a, p, alternative, method, n_a, n_b)


def non_overlapping_subsample(rows: list[FeatureVector],
                              spec: WindowSpec) -> list[FeatureVector]:
    """Keep windows whose start is a multiple of the window width, yielding
    disjoint adjacent windows per player."""
    width_ms = round(spec.width_s * 1000.0)
    out = []
    for r in rows:
        start_ms = round(r.window_start_s * 1000.0)
        if start_ms % width_ms == 0:
            out.append(r)
    return out


@dataclass(frozen=True)
class FeatureTest:
    feature: str
    result: UTestResult
    significant: bool


@dataclass
class SignificanceTable:
    alpha: float
    n_pro: int
    n_nonpro: int
    tests: list[FeatureTest]


def significance_table(dataset: FeatureDataset, spec: WindowSpec = WindowSpec(),
                       alpha: float = DEFAULT_ALPHA,
                       alternative: Alternative = Alternative.TWO_SIDED,
                       subsample: bool = True) -> SignificanceTable:
    """Mann-Whitney test of every feature, PRO sample first."""
    rows = non_overlapping_subsample(dataset.rows, spec) if subsample else dataset.rows
    pro = [r for r in rows if r.label is BinaryLabel.PRO]
    non = [r for r in rows if r.label is not BinaryLabel.PRO]
    if not pro or not non:
        missing = "PRO" if not pro else "NONPRO"
        raise MissingClassError(f"no {missing} rows after subsampling")
    pro_m = np.array([r.values() for r in pro], dtype=np.float64)
    non_m = np.array([r.values() for r in non], dtype=np.float64)
    tests = []
    for j, name in enumerate(dataset.feature_names):
        res = mann_whitney_u(pro_m[:, j], non_m[:, j], alternative)
        tests.append(FeatureTest(name, res, res.p_value < alpha))
    return SignificanceTable(alpha, len(pro), len(non), tests)


def format_p_value(p: float) -> str:
    """Display form used in reports: values below 0.001 print as <0.001."""
    if p < 0.001:
        return "<0.001"
    return format(p, ".3g")


def significance_to_csv(table: SignificanceTable) -> str:
    lines = [SIGNIFICANCE_CSV_HEADER]
    for t in table.tests:
        r = t.result
        lines.append(",".join([
            t.feature,
            fmt_g9(r.u_statistic),
            format_p_value(r.p_value),
            fmt_g9(r.p_value),
            r.method.value,
            str(r.n_a),
            str(r.n_b),
            "true" if t.significant else "false",
        ]))
    return "\n".join(lines) + "\n"
