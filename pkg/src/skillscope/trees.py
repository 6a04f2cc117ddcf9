"""Extremely Randomized Trees skill classifier: training, prediction,
leave-one-player-out cross-validation with grid search, class balancing,
evaluation metrics, and impurity-based feature importances.

Trees are grown with a single random candidate attribute per split by
default (the totally randomized case); thresholds are uniform draws
strictly between the node's observed min and max.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _growth
from ._io import fmt_g9
from .errors import (
    EmptyDatasetError,
    LengthMismatchError,
    MissingFeatureError,
    NoSplitsError,
    SchemaError,
    SingleClassError,
    SinglePlayerError,
)
from .features import FEATURE_NAMES, FeatureDataset, FeatureVector
from .telemetry import BinaryLabel

MODEL_FORMAT_VERSION = 1

GRID_N_TREES = (10, 50, 100, 500, 1000)
GRID_MAX_DEPTH = (1, 2, 3, 4, 5, 6, 7, 8)
GRID_BOOTSTRAP = (False, True)


@dataclass(frozen=True)
class TreeParams:
    n_trees: int
    max_depth: int
    bootstrap: bool
    k_attributes: int = 1
    min_split: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 10 <= self.n_trees <= 1000:
            raise ValueError(f"n_trees must be in [10, 1000], got {self.n_trees}")
        if not 1 <= self.max_depth <= 8:
            raise ValueError(f"max_depth must be in [1, 8], got {self.max_depth}")
        if not 1 <= self.k_attributes <= 9:
            raise ValueError(f"k_attributes must be in [1, 9], got {self.k_attributes}")
        if self.min_split < 2:
            raise ValueError(f"min_split must be >= 2, got {self.min_split}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a nonnegative 64-bit integer")


def default_grid(k_attributes: int = 1) -> list[TreeParams]:
    return [TreeParams(n_trees=t, max_depth=d, bootstrap=b, k_attributes=k_attributes)
            for t in GRID_N_TREES for d in GRID_MAX_DEPTH for b in GRID_BOOTSTRAP]


@dataclass
class SkillModel:
    """Packed tree ensemble.

    Node arrays are flat; tree t occupies [tree_offsets[t], tree_offsets[t+1])
    with absolute child indices. ``importance_raw`` holds per-feature
    fraction-weighted Gini decreases averaged over trees; it is None on
    deserialized models (the file format does not carry it).
    """

    params: TreeParams
    feature_names: tuple[str, ...]
    tree_offsets: np.ndarray
    node_feature: np.ndarray
    node_threshold: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    node_p_nonpro: np.ndarray
    node_p_pro: np.ndarray
    importance_raw: np.ndarray | None = None

    @property
    def n_trees(self) -> int:
        return self.tree_offsets.size - 1


def _tree_seed(root_seed: int, tree_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=root_seed, spawn_key=(tree_index,))
    return np.random.Generator(np.random.PCG64(ss))


def _derived_seed(root_seed: int, key: tuple[int, ...]) -> int:
    ss = np.random.SeedSequence(entropy=root_seed, spawn_key=key)
    return int(ss.generate_state(1, np.uint64)[0])


def _train_arrays(x: np.ndarray, y: np.ndarray, params: TreeParams,
                  feature_names: tuple[str, ...]) -> SkillModel:
    n = x.shape[0]
    if n == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    if n < params.min_split:
        raise EmptyDatasetError(
            f"need at least min_split={params.min_split} rows, got {n}")
    npos = int(y.sum())
    if npos == 0 or npos == n:
        raise SingleClassError("training data contains a single class")

    x = np.ascontiguousarray(x, dtype=np.float64)
    y64 = y.astype(np.int64)
    cap = _growth.max_nodes_for_depth(params.max_depth)
    buf_feature = np.empty(cap, dtype=np.int64)
    buf_threshold = np.empty(cap, dtype=np.float64)
    buf_left = np.empty(cap, dtype=np.int64)
    buf_right = np.empty(cap, dtype=np.int64)
    buf_p_nonpro = np.empty(cap, dtype=np.float64)
    buf_p_pro = np.empty(cap, dtype=np.float64)
    importance = np.zeros(x.shape[1], dtype=np.float64)

    feats, thrs, lefts, rights, pnon, ppro = [], [], [], [], [], []
    offsets = np.zeros(params.n_trees + 1, dtype=np.int64)
    for t in range(params.n_trees):
        gen = _tree_seed(params.seed, t)
        n_nodes = _growth.grow_tree(
            x, y64, gen, params.k_attributes, params.max_depth,
            params.min_split, params.bootstrap,
            buf_feature, buf_threshold, buf_left, buf_right,
            buf_p_nonpro, buf_p_pro, importance)
        offsets[t + 1] = offsets[t] + n_nodes
        feats.append(buf_feature[:n_nodes].copy())
        thrs.append(buf_threshold[:n_nodes].copy())
        lefts.append(buf_left[:n_nodes].copy())
        rights.append(buf_right[:n_nodes].copy())
        pnon.append(buf_p_nonpro[:n_nodes].copy())
        ppro.append(buf_p_pro[:n_nodes].copy())

    node_feature = np.concatenate(feats)
    node_threshold = np.concatenate(thrs)
    node_left = np.concatenate(lefts)
    node_right = np.concatenate(rights)
    for t in range(params.n_trees):
        seg = slice(offsets[t], offsets[t + 1])
        internal = node_feature[seg] != _growth.LEAF
        node_left[seg][internal] += offsets[t]
        node_right[seg][internal] += offsets[t]
    return SkillModel(
        params=params,
        feature_names=feature_names,
        tree_offsets=offsets,
        node_feature=node_feature,
        node_threshold=node_threshold,
        node_left=node_left,
        node_right=node_right,
        node_p_nonpro=np.concatenate(pnon),
        node_p_pro=np.concatenate(ppro),
        importance_raw=importance / params.n_trees,
    )


def train(dataset: FeatureDataset, params: TreeParams) -> SkillModel:
    """Grow the ensemble on the full dataset (no balancing applied here)."""
    return _train_arrays(dataset.matrix(), dataset.is_pro(), params,
                         tuple(dataset.feature_names))


def _as_matrix(model: SkillModel, vector) -> tuple[np.ndarray, bool]:
    if isinstance(vector, FeatureVector):
        arr = np.array([vector.values()], dtype=np.float64)
        return arr, True
    arr = np.asarray(vector, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != len(model.feature_names):
        raise MissingFeatureError(
            f"expected {len(model.feature_names)} features per row, "
            f"got shape {arr.shape}")
    return np.ascontiguousarray(arr), single


def predict_proba(model: SkillModel, vector):
    """PRO probability: mean of leaf PRO-probabilities across trees."""
    x, single = _as_matrix(model, vector)
    probs = _growth.predict_ensemble(
        x, model.tree_offsets, model.node_feature, model.node_threshold,
        model.node_left, model.node_right, model.node_p_pro)
    return float(probs[0]) if single else probs


def predict(model: SkillModel, vector, threshold: float = 0.5):
    """PRO iff probability >= threshold (ties go to the positive class)."""
    p = predict_proba(model, vector)
    if isinstance(p, float):
        return BinaryLabel.PRO if p >= threshold else BinaryLabel.NONPRO
    return [BinaryLabel.PRO if v >= threshold else BinaryLabel.NONPRO for v in p]


def _balance_indices(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices of the balanced multiset: all originals, then minority rows
    resampled with replacement until class counts are equal."""
    pos = np.nonzero(y)[0]
    neg = np.nonzero(~y)[0]
    if pos.size == 0 or neg.size == 0:
        raise SingleClassError("balancing needs both classes present")
    if pos.size == neg.size:
        return np.arange(y.size)
    minority = pos if pos.size < neg.size else neg
    deficit = abs(pos.size - neg.size)
    extra = minority[rng.integers(0, minority.size, size=deficit)]
    return np.concatenate([np.arange(y.size), extra])


def balance_by_sampling(rows: Sequence[FeatureVector], seed: int) -> list[FeatureVector]:
    """Equalize class counts by resampling the minority class; original rows
    are all retained and duplicates are exact copies."""
    y = np.array([r.label is BinaryLabel.PRO for r in rows], dtype=bool)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    idx = _balance_indices(y, rng)
    return [rows[i] for i in idx]


@dataclass(frozen=True)
class FoldRecord:
    player_id: str
    row_indices: tuple[int, ...]


@dataclass
class CVResult:
    best_params: TreeParams
    best_accuracy: float
    oof_probabilities: np.ndarray
    accuracies: list[tuple[TreeParams, float]] = field(default_factory=list)
    folds: list[FoldRecord] = field(default_factory=list)


def lopo_cv(dataset: FeatureDataset, grid: list[TreeParams] | None = None,
            seed: int = 0, threshold: float = 0.5) -> CVResult:
    """Leave-one-player-out grid search.

    One fold per player; balancing and training see only the other players'
    rows. Every row receives exactly one out-of-fold probability per grid
    point. Ties on accuracy prefer fewer trees, then shallower depth, then
    no bootstrap. Grid entries' own seed fields are ignored; per-fold seeds
    derive from the cv seed.
    """
    if grid is None:
        grid = default_grid()
    if not grid:
        raise ValueError("empty parameter grid")
    players: list[str] = []
    for pid in dataset.player_ids():
        if pid not in players:
            players.append(pid)
    if len(players) < 2:
        raise SinglePlayerError("leave-one-player-out needs >= 2 players")

    x = dataset.matrix()
    y = dataset.is_pro()
    pid_arr = np.array(dataset.player_ids())
    probs = np.full((len(grid), len(dataset)), np.nan)
    folds: list[FoldRecord] = []
    for fold_i, pid in enumerate(players):
        test_mask = pid_arr == pid
        test_idx = np.nonzero(test_mask)[0]
        folds.append(FoldRecord(pid, tuple(int(i) for i in test_idx)))
        x_tr = x[~test_mask]
        y_tr = y[~test_mask]
        bal_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(fold_i,)))
        bal_idx = _balance_indices(y_tr, bal_rng)
        x_bal = x_tr[bal_idx]
        y_bal = y_tr[bal_idx]
        x_test = np.ascontiguousarray(x[test_mask])
        for j, base in enumerate(grid):
            run = replace(base, seed=_derived_seed(seed, (fold_i, j)))
            model = _train_arrays(x_bal, y_bal, run, tuple(dataset.feature_names))
            probs[j, test_idx] = predict_proba(model, x_test)

    accs = ((probs >= threshold) == y[None, :]).mean(axis=1)
    order = sorted(
        range(len(grid)),
        key=lambda j: (-accs[j], grid[j].n_trees, grid[j].max_depth,
                       grid[j].bootstrap))
    best_j = order[0]
    best = replace(grid[best_j], seed=seed)
    return CVResult(
        best_params=best,
        best_accuracy=float(accs[best_j]),
        oof_probabilities=probs[best_j].copy(),
        accuracies=[(g, float(a)) for g, a in zip(grid, accs)],
        folds=folds,
    )


@dataclass
class EvalReport:
    tn: int
    fp: int
    fn: int
    tp: int
    accuracy: float
    precision_pro: float
    recall_pro: float
    f1_pro: float
    precision_nonpro: float
    recall_nonpro: float
    f1_nonpro: float
    roc_auc: float
    importances: np.ndarray | None = None

    @property
    def support_pro(self) -> int:
        return self.tp + self.fn

    @property
    def support_nonpro(self) -> int:
        return self.tn + self.fp


def _safe_div(num: float, den: float) -> float:
    return num / den if den else 0.0


def _rank_auc(y: np.ndarray, scores: np.ndarray) -> float:
    """P(random PRO score > random NONPRO score), ties counted half.

    Counted directly from sorted per-class scores, independently of any
    rank-based statistic elsewhere in the package.
    """
    pos = np.sort(scores[y])
    neg = np.sort(scores[~y])
    below = np.searchsorted(neg, pos, side="left")
    upto = np.searchsorted(neg, pos, side="right")
    wins = below.sum() + 0.5 * (upto - below).sum()
    return float(wins / (pos.size * neg.size))


def evaluate(labels, probabilities, threshold: float = 0.5,
             importances: np.ndarray | None = None) -> EvalReport:
    """Score probabilities against labels with PRO as the positive class."""
    y = np.array([lb is BinaryLabel.PRO if isinstance(lb, BinaryLabel) else bool(lb)
                  for lb in labels], dtype=bool)
    p = np.asarray(probabilities, dtype=np.float64)
    if y.size != p.size:
        raise LengthMismatchError(
            f"{y.size} labels vs {p.size} probabilities")
    if y.all() or not y.any():
        raise SingleClassError("evaluation needs both classes present")

    pred = p >= threshold
    tp = int(np.sum(pred & y))
    tn = int(np.sum(~pred & ~y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    precision_pro = _safe_div(tp, tp + fp)
    recall_pro = _safe_div(tp, tp + fn)
    precision_nonpro = _safe_div(tn, tn + fn)
    recall_nonpro = _safe_div(tn, tn + fp)
    return EvalReport(
        tn=tn, fp=fp, fn=fn, tp=tp,
        accuracy=(tp + tn) / y.size,
        precision_pro=precision_pro,
        recall_pro=recall_pro,
        f1_pro=_safe_div(2 * precision_pro * recall_pro,
                         precision_pro + recall_pro),
        precision_nonpro=precision_nonpro,
        recall_nonpro=recall_nonpro,
        f1_nonpro=_safe_div(2 * precision_nonpro * recall_nonpro,
                            precision_nonpro + recall_nonpro),
        roc_auc=_rank_auc(y, p),
        importances=importances,
    )


def feature_importances(model: SkillModel) -> np.ndarray:
    """Normalized fraction-weighted Gini decreases, summing to 1."""
    if model.importance_raw is None:
        raise ValueError(
            "importances are unavailable for deserialized models; retrain "
            "to recover them")
    total = float(model.importance_raw.sum())
    if total <= 0.0:
        raise NoSplitsError("ensemble contains no splits")
    return model.importance_raw / total


def confusion_from_counts(tn: int, fp: int, fn: int, tp: int) -> EvalReport:
    """EvalReport from a known confusion matrix, bypassing thresholds.

    AUC from a bare confusion matrix is not defined; balanced accuracy of
    the two recalls is reported in its place.
    """
    y = np.concatenate([np.ones(tp + fn, dtype=bool),
                        np.zeros(tn + fp, dtype=bool)])
    p = np.concatenate([np.ones(tp), np.zeros(fn),
                        np.zeros(tn), np.ones(fp)])
    report = evaluate(y, p)
    assert (report.tn, report.fp, report.fn, report.tp) == (tn, fp, fn, tp)
    return report


def report_to_csv(report: EvalReport,
                  feature_names: Sequence[str] = FEATURE_NAMES) -> str:
    """Metric, confusion, and importance blocks as CSV sections."""
    lines = [
        "class,precision,recall,f1_score,roc_auc,accuracy",
        ",".join(["NONPRO", fmt_g9(report.precision_nonpro),
                  fmt_g9(report.recall_nonpro), fmt_g9(report.f1_nonpro),
                  fmt_g9(report.roc_auc), fmt_g9(report.accuracy)]),
        ",".join(["PRO", fmt_g9(report.precision_pro),
                  fmt_g9(report.recall_pro), fmt_g9(report.f1_pro),
                  fmt_g9(report.roc_auc), fmt_g9(report.accuracy)]),
        "",
        "class,pred_nonpro,pred_pro,support",
        f"NONPRO,{report.tn},{report.fp},{report.support_nonpro}",
        f"PRO,{report.fn},{report.tp},{report.support_pro}",
    ]
    if report.importances is not None:
        lines.append("")
        lines.append("feature,importance")
        order = np.argsort(report.importances)[::-1]
        for j in order:
            lines.append(f"{feature_names[j]},{fmt_g9(report.importances[j])}")
    return "\n".join(lines) + "\n"


def serialize_model(model: SkillModel) -> str:
    """Canonical JSON form; serializing twice yields identical bytes."""
    trees = []
    for t in range(model.n_trees):
        lo = int(model.tree_offsets[t])
        hi = int(model.tree_offsets[t + 1])
        nodes = []
        for i in range(lo, hi):
            if model.node_feature[i] == _growth.LEAF:
                nodes.append({"leaf": [float(model.node_p_nonpro[i]),
                                       float(model.node_p_pro[i])]})
            else:
                nodes.append({
                    "feature": int(model.node_feature[i]),
                    "threshold": float(model.node_threshold[i]),
                    "left": int(model.node_left[i]) - lo,
                    "right": int(model.node_right[i]) - lo,
                })
        trees.append({"nodes": nodes})
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "params": {
            "n_trees": model.params.n_trees,
            "max_depth": model.params.max_depth,
            "bootstrap": model.params.bootstrap,
            "k_attributes": model.params.k_attributes,
            "min_split": model.params.min_split,
            "seed": model.params.seed,
        },
        "feature_names": list(model.feature_names),
        "trees": trees,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


_PARAM_FIELDS = {"n_trees", "max_depth", "bootstrap", "k_attributes",
                 "min_split", "seed"}


def deserialize_model(text: str) -> SkillModel:
    """Parse and validate a model document; importances are not carried by
    the format and stay unavailable on the result."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("model document must be an object")
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise SchemaError(
            f"unsupported model version {doc.get('version')!r}, "
            f"expected {MODEL_FORMAT_VERSION}")
    raw_params = doc.get("params")
    if not isinstance(raw_params, dict) or set(raw_params) != _PARAM_FIELDS:
        raise SchemaError("model params block malformed")
    try:
        params = TreeParams(**raw_params)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"bad model params: {exc}") from None
    names = doc.get("feature_names")
    if (not isinstance(names, list) or not names
            or not all(isinstance(s, str) for s in names)):
        raise SchemaError("model feature_names malformed")
    raw_trees = doc.get("trees")
    if not isinstance(raw_trees, list) or len(raw_trees) != params.n_trees:
        raise SchemaError("model trees block malformed or wrong length")

    feats, thrs, lefts, rights, pnon, ppro = [], [], [], [], [], []
    offsets = np.zeros(len(raw_trees) + 1, dtype=np.int64)
    for t, tree in enumerate(raw_trees):
        if not isinstance(tree, dict) or not isinstance(tree.get("nodes"), list):
            raise SchemaError(f"tree {t} malformed")
        nodes = tree["nodes"]
        if not nodes:
            raise SchemaError(f"tree {t} has no nodes")
        n = len(nodes)
        kids: list[tuple[int, int, int]] = []
        for i, node in enumerate(nodes):
            if not isinstance(node, dict):
                raise SchemaError(f"tree {t} node {i} malformed")
            if "leaf" in node:
                leaf = node["leaf"]
                if (set(node) != {"leaf"} or not isinstance(leaf, list)
                        or len(leaf) != 2):
                    raise SchemaError(f"tree {t} leaf {i} malformed")
                feats.append(_growth.LEAF)
                thrs.append(0.0)
                lefts.append(_growth.LEAF)
                rights.append(_growth.LEAF)
                pnon.append(float(leaf[0]))
                ppro.append(float(leaf[1]))
            else:
                if set(node) != {"feature", "threshold", "left", "right"}:
                    raise SchemaError(f"tree {t} node {i} malformed")
                f = node["feature"]
                left = node["left"]
                right = node["right"]
                if not (isinstance(f, int) and 0 <= f < len(names)):
                    raise SchemaError(f"tree {t} node {i}: bad feature index")
                # children must come after their parent, which also rules
                # out cycles
                if not (isinstance(left, int) and i < left < n
                        and isinstance(right, int) and i < right < n):
                    raise SchemaError(f"tree {t} node {i}: child out of range")
                kids.append((i, left, right))
                feats.append(f)
                thrs.append(float(node["threshold"]))
                lefts.append(left + offsets[t])
                rights.append(right + offsets[t])
                pnon.append(0.0)
                ppro.append(0.0)
        refs = np.zeros(n, dtype=np.int64)
        depth = np.zeros(n, dtype=np.int64)
        for i, left, right in kids:
            refs[left] += 1
            refs[right] += 1
            depth[left] = depth[i] + 1
            depth[right] = depth[i] + 1
        if refs[0] != 0 or not np.all(refs[1:] == 1):
            raise SchemaError(f"tree {t} nodes do not form a tree")
        if int(depth.max()) > params.max_depth:
            raise SchemaError(
                f"tree {t} deeper than declared max_depth {params.max_depth}")
        offsets[t + 1] = offsets[t] + n
    return SkillModel(
        params=params,
        feature_names=tuple(names),
        tree_offsets=offsets,
        node_feature=np.array(feats, dtype=np.int64),
        node_threshold=np.array(thrs, dtype=np.float64),
        node_left=np.array(lefts, dtype=np.int64),
        node_right=np.array(rights, dtype=np.int64),
        node_p_nonpro=np.array(pnon, dtype=np.float64),
        node_p_pro=np.array(ppro, dtype=np.float64),
        importance_raw=None,
    )
