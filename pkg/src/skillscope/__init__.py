"""Esports telemetry analytics toolkit.

Reconstructs synchronized input/gaze timelines from session logs, extracts
nine biometric features over rolling windows, tests their significance
between athletes and amateurs, classifies skill with extremely randomized
trees under leave-one-player-out cross-validation, and renders gaze
heatmaps. A seeded synthetic-cohort generator enables end-to-end runs
without human data.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import SkillscopeError
from .features import (
    FEATURE_NAMES,
    ControlPredicate,
    FeatureDataset,
    FeatureVector,
    WindowSpec,
    extract_cohort_features,
    extract_features,
    feature_correlations,
)
from .heatmap import DensityGrid, gaussian_smooth, hdr_thresholds, histogram2d, render
from .stats import (
    Alternative,
    SignificanceTable,
    UTestResult,
    mann_whitney_u,
    non_overlapping_subsample,
    significance_table,
)
from .synthgen import ARCHETYPES, Archetype, CohortSpec, generate_cohort, generate_session
from .telemetry import (
    BinaryLabel,
    ClassLabel,
    InputEvent,
    GazeSample,
    SessionMeta,
    SessionTimeline,
    TickState,
    load_cohort,
    parse_gaze_log,
    parse_input_log,
    synchronize,
)
from .trees import (
    CVResult,
    EvalReport,
    SkillModel,
    TreeParams,
    balance_by_sampling,
    default_grid,
    deserialize_model,
    evaluate,
    feature_importances,
    lopo_cv,
    predict,
    predict_proba,
    serialize_model,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
