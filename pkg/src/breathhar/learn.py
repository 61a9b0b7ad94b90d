"""Windowed feature extraction, from-scratch classifiers (kNN, decision tree,
random forest), stratified splitting/cross-validation, grid search, and
classification metrics.

Determinism contract: every fit is reproducible from (data, hyperparameters,
seed). Ties break toward the lowest label code (kNN votes, leaf majorities,
forest votes), the lowest feature index then lowest threshold (tree splits),
and the first candidate in declared order (grid search).
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .breath_analysis import detect_peaks
from .domain import ActivityLabel, ActivityProfile, LabeledSeries
from .dsp import EnvelopeConfig, WaveletBankConfig, filter_chain
from .errors import (
    ConfigurationError,
    FormatError,
    InsufficientDataError,
    ValidationError,
)

log = logging.getLogger(__name__)

FEATURE_NAMES = (
    "temp_mean", "temp_std", "temp_range",
    "hum_mean", "hum_std", "hum_range",
    "temp_rate_mean", "hum_rate_mean",
    "peak_count", "peak_spacing_mean", "envelope_mean",
)

MODEL_KINDS = ("knn", "decision_tree", "random_forest")

MODEL_FORMAT = "breathhar-model"
MODEL_VERSION = 1

# Feature-path filter defaults, sized for ~1 Hz mask data.
FEATURE_PREFILTER_HZ = 0.45
FEATURE_BAND = (0.1, 0.45)
FEATURE_ENVELOPE = EnvelopeConfig(max_breath_rate_hz=0.3, cutoff_multiplier=1.5)

MIN_PRESENT_FRACTION = 0.8
PEAK_DISTANCE_FRACTION = 0.5    # x breath period
PEAK_PROMINENCE_FRACTION = 0.25  # x windowed envelope std


@dataclass(frozen=True)
class FeatureVector:
    temp_mean: float
    temp_std: float
    temp_range: float
    hum_mean: float
    hum_std: float
    hum_range: float
    temp_rate_mean: float
    hum_rate_mean: float
    peak_count: float
    peak_spacing_mean: float
    envelope_mean: float
    label: Optional[ActivityLabel] = None
    window_id: str = ""

    def __post_init__(self):
        for name in FEATURE_NAMES:
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"feature {name} is not finite")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES], dtype=float)


def features_to_matrix(items: Sequence[FeatureVector], require_labels: bool = True):
    if not items:
        raise InsufficientDataError("no feature vectors supplied")
    X = np.vstack([fv.as_array() for fv in items])
    if not require_labels:
        return X, None
    if any(fv.label is None for fv in items):
        raise ValidationError("all feature vectors must carry a label")
    y = np.array([int(fv.label) for fv in items], dtype=int)
    return X, y


def _fill_missing(timestamps: np.ndarray, values: np.ndarray) -> np.ndarray:
    missing = ~np.isfinite(values)
    if not missing.any():
        return values
    present = np.flatnonzero(~missing)
    if present.size == 0:
        raise InsufficientDataError("channel is fully missing")
    out = np.array(values)
    out[missing] = np.interp(timestamps[missing], timestamps[present], values[present])
    return out


def _scale_unit(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def series_envelope(series: LabeledSeries,
                    prefilter_hz: float = FEATURE_PREFILTER_HZ,
                    band: tuple = FEATURE_BAND,
                    env_cfg: EnvelopeConfig = FEATURE_ENVELOPE) -> np.ndarray:
    """Breath envelope of the temperature channel on a unit scale.

    Missing values are interpolated first; the channel is min-max scaled so
    the envelope is expressed in scaled units regardless of activity. The
    first/last wavelet-support samples of the chain are low confidence, so
    the signal is extended by reflection and cropped back, keeping window
    features clean at the series boundaries.
    """
    from .dsp import bank_support_radius

    temp = _fill_missing(series.timestamps, series.temperature)
    scaled = _scale_unit(temp)
    bank = WaveletBankConfig(f_low_hz=band[0], f_high_hz=band[1],
                             sampling_hz=series.sampling_hz)
    pad = min(2 * bank_support_radius(bank) + 8, len(scaled) - 1)
    extended = np.concatenate([scaled[pad:0:-1], scaled, scaled[-2:-pad - 2:-1]])
    _, _, env = filter_chain(extended, series.sampling_hz, prefilter_hz, bank, env_cfg)
    return env[pad:pad + len(scaled)]


def extract_features(series: LabeledSeries, window_s: float = 30.0,
                     overlap: float = 0.5,
                     profile: Optional[ActivityProfile] = None) -> list[FeatureVector]:
    """Sliding-window statistical + breath features.

    Windows with less than 80% present samples in either channel are skipped.
    Rate features are mean first differences times the sampling rate; peak
    features come from the series envelope restricted to the window.
    """
    fs = series.sampling_hz
    win = int(round(window_s * fs))
    if win < 10:
        raise ValidationError(f"window of {window_s} s at {fs} Hz has {win} < 10 samples")
    if not (0.0 <= overlap <= 0.9):
        raise ValidationError(f"overlap must be in [0, 0.9], got {overlap}")
    n = len(series)
    if n < win:
        log.warning("series %s shorter than one window (%d < %d): no features",
                    series.subject_id, n, win)
        return []

    breath_period = profile.breath_period_s if profile is not None else 4.0
    min_dist_s = max(PEAK_DISTANCE_FRACTION * breath_period, 1.0 / fs)
    env = series_envelope(series)
    temp_filled = _fill_missing(series.timestamps, series.temperature)
    hum_filled = _fill_missing(series.timestamps, series.humidity)

    label_part = series.label.name.lower() if series.label is not None else "unlabeled"
    step = max(1, int(round(win * (1.0 - overlap))))
    # Peaks are detected on a margin-extended slice so crests sitting on a
    # window boundary are not lost, then filtered back to the window proper.
    margin = int(np.ceil(min_dist_s * fs))
    out: list[FeatureVector] = []
    for start in range(0, n - win + 1, step):
        sl = slice(start, start + win)
        t_raw = series.temperature[sl]
        h_raw = series.humidity[sl]
        present = min(np.isfinite(t_raw).mean(), np.isfinite(h_raw).mean())
        if present < MIN_PRESENT_FRACTION:
            continue
        t_win = temp_filled[sl]
        h_win = hum_filled[sl]
        env_win = env[sl]
        ext_lo = max(0, start - margin)
        ext = env[ext_lo:min(n, start + win + margin)]
        peaks = detect_peaks(ext, min_distance_s=min_dist_s,
                             min_prominence=PEAK_PROMINENCE_FRACTION * float(env_win.std()),
                             sampling_hz=fs, polarity="maxima")
        inside = peaks.indices[(peaks.indices >= start - ext_lo)
                               & (peaks.indices < start - ext_lo + win)]
        spacing_mean = float(np.diff(inside).mean() / fs) if len(inside) > 1 else 0.0
        t_span = float(t_win.max() - t_win.min())
        h_span = float(h_win.max() - h_win.min())
        out.append(FeatureVector(
            temp_mean=float(t_win.mean()),
            temp_std=float(t_win.std()) if t_span > 0 else 0.0,  # exact 0 for flat windows
            temp_range=t_span,
            hum_mean=float(h_win.mean()),
            hum_std=float(h_win.std()) if h_span > 0 else 0.0,
            hum_range=h_span,
            temp_rate_mean=float(np.diff(t_win).mean() * fs) if win > 1 else 0.0,
            hum_rate_mean=float(np.diff(h_win).mean() * fs) if win > 1 else 0.0,
            peak_count=float(len(inside)),
            peak_spacing_mean=spacing_mean,
            envelope_mean=float(env_win.mean()),
            label=series.label,
            window_id=f"{series.subject_id}:{label_part}:{start}",
        ))
    return out


# ---------------------------------------------------------------------------
# Feature scaling stored inside trained models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureScaling:
    name: str
    x_min: float
    x_max: float  # x_max == x_min marks a degenerate (constant) feature


def fit_feature_scaling(X: np.ndarray) -> tuple[FeatureScaling, ...]:
    return tuple(
        FeatureScaling(FEATURE_NAMES[j] if j < len(FEATURE_NAMES) else f"f{j}",
                       float(X[:, j].min()), float(X[:, j].max()))
        for j in range(X.shape[1])
    )


def apply_feature_scaling(X: np.ndarray, scaling: Sequence[FeatureScaling]) -> np.ndarray:
    if X.shape[1] != len(scaling):
        raise ValidationError(
            f"feature count {X.shape[1]} does not match model scaling ({len(scaling)})"
        )
    out = np.empty_like(X, dtype=float)
    for j, sc in enumerate(scaling):
        span = sc.x_max - sc.x_min
        if span <= 0:
            out[:, j] = 0.0  # constant feature carries no information
        else:
            out[:, j] = np.clip((X[:, j] - sc.x_min) / span, 0.0, 1.0)
    return out


@dataclass(frozen=True)
class TrainedModel:
    kind: str
    hyperparams: dict
    scaling: tuple
    payload: dict
    train_seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValidationError(f"unknown model kind {self.kind!r}")


def _query_array(x) -> np.ndarray:
    if isinstance(x, FeatureVector):
        return x.as_array()
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValidationError("query must be a single feature vector")
    return arr


# ---------------------------------------------------------------------------
# k-nearest neighbors
# ---------------------------------------------------------------------------

def knn_fit(train: Sequence[FeatureVector], k: int, seed: int = 0) -> TrainedModel:
    if not train:
        raise InsufficientDataError("untrained model: empty training set")
    if k < 1 or k > len(train):
        raise ValidationError(f"k must be in [1, {len(train)}], got {k}")
    X, y = features_to_matrix(train)
    scaling = fit_feature_scaling(X)
    Xs = apply_feature_scaling(X, scaling)
    return TrainedModel(
        kind="knn",
        hyperparams={"k": int(k)},
        scaling=scaling,
        payload={"X": Xs, "y": y},
        train_seed=seed,
    )


def _knn_vote(dist_row: np.ndarray, y: np.ndarray, k: int) -> int:
    order = np.argsort(dist_row, kind="stable")[:k]
    votes = np.bincount(y[order], minlength=len(ActivityLabel))
    top = votes.max()
    candidates = np.flatnonzero(votes == top)
    if len(candidates) == 1:
        return int(candidates[0])
    sums = np.array([dist_row[order][y[order] == c].sum() for c in candidates])
    return int(candidates[int(np.argmin(sums))])  # argmin keeps the lowest code on ties


def knn_predict_many(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    if model.kind != "knn":
        raise ValidationError(f"expected a knn model, got {model.kind}")
    Xs = apply_feature_scaling(np.atleast_2d(np.asarray(X, dtype=float)), model.scaling)
    train_X = model.payload["X"]
    train_y = model.payload["y"]
    k = model.hyperparams["k"]
    d2 = (
        np.sum(Xs * Xs, axis=1)[:, None]
        + np.sum(train_X * train_X, axis=1)[None, :]
        - 2.0 * Xs @ train_X.T
    )
    dist = np.sqrt(np.maximum(d2, 0.0))
    return np.array([_knn_vote(row, train_y, k) for row in dist], dtype=int)


def knn_predict(model: TrainedModel, x) -> ActivityLabel:
    """Majority vote among the k Euclidean-nearest training points; ties go to
    the smaller summed distance, then the lowest label code."""
    code = knn_predict_many(model, _query_array(x)[None, :])[0]
    return ActivityLabel(code)


# ---------------------------------------------------------------------------
# Decision tree
# ---------------------------------------------------------------------------

def _entropy_bits(counts: np.ndarray) -> np.ndarray:
    totals = counts.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(totals > 0, counts / totals, 0.0)
        logs = np.where(p > 0, np.log2(p, where=p > 0), 0.0)
    return -(p * logs).sum(axis=-1)


def _gini(counts: np.ndarray) -> np.ndarray:
    totals = counts.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(totals > 0, counts / totals, 0.0)
    return 1.0 - (p * p).sum(axis=-1)


_IMPURITY = {"entropy": _entropy_bits, "gini": _gini}


def entropy_bits(counts) -> float:
    """Shannon entropy in bits of a class-count vector."""
    return float(_entropy_bits(np.asarray(counts, dtype=float)))


def _best_split(X: np.ndarray, y: np.ndarray, feature_indices: np.ndarray, criterion: str):
    """Best (gain, feature, threshold) over candidate features, or None.

    Within a feature the first boundary achieving the max gain wins (lowest
    threshold); across features a strictly greater gain is required to
    replace, so the lowest feature index wins ties.
    """
    n = len(y)
    n_classes = len(ActivityLabel)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    parent_counts = onehot.sum(axis=0)
    impurity = _IMPURITY[criterion]
    parent_imp = float(impurity(parent_counts))

    best = None
    for j in feature_indices:
        v = X[:, j]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        boundaries = np.flatnonzero(vs[1:] > vs[:-1])
        if boundaries.size == 0:
            continue
        cum = onehot[order].cumsum(axis=0)
        left_counts = cum[boundaries]
        right_counts = parent_counts[None, :] - left_counts
        n_left = boundaries + 1
        n_right = n - n_left
        gains = parent_imp - (
            n_left * impurity(left_counts) + n_right * impurity(right_counts)
        ) / n
        b = int(np.argmax(gains))
        gain = float(gains[b])
        if best is None or gain > best[0] + 1e-15:
            threshold = 0.5 * (vs[boundaries[b]] + vs[boundaries[b] + 1])
            best = (gain, int(j), float(threshold))
    return best


def _majority(y: np.ndarray) -> int:
    counts = np.bincount(y, minlength=len(ActivityLabel))
    return int(np.argmax(counts))  # first max: lowest label code


def _grow_tree(X: np.ndarray, y: np.ndarray, depth: int, criterion: str,
               max_depth: Optional[int], min_split: int,
               n_sub_features: Optional[int], rng: Optional[np.random.Generator]) -> dict:
    counts = np.bincount(y, minlength=len(ActivityLabel))
    node_n = int(len(y))
    if (
        counts.max() == node_n
        or node_n < min_split
        or (max_depth is not None and depth >= max_depth)
    ):
        return {"leaf": True, "label": _majority(y), "n": node_n}
    d = X.shape[1]
    if n_sub_features is not None and n_sub_features < d:
        feats = np.sort(rng.choice(d, size=n_sub_features, replace=False))
    else:
        feats = np.arange(d)
    best = _best_split(X, y, feats, criterion)
    if best is None:
        return {"leaf": True, "label": _majority(y), "n": node_n}
    _, feature, threshold = best
    mask = X[:, feature] <= threshold
    left = _grow_tree(X[mask], y[mask], depth + 1, criterion, max_depth,
                      min_split, n_sub_features, rng)
    right = _grow_tree(X[~mask], y[~mask], depth + 1, criterion, max_depth,
                       min_split, n_sub_features, rng)
    return {"leaf": False, "feature": feature, "threshold": threshold,
            "left": left, "right": right, "n": node_n}


def _validate_tree_params(criterion: str, max_depth, min_split: int):
    if criterion not in _IMPURITY:
        raise ConfigurationError(f"criterion must be one of {sorted(_IMPURITY)}, got {criterion!r}")
    if max_depth is not None and max_depth < 1:
        raise ConfigurationError(f"max_depth must be >= 1 or None, got {max_depth}")
    if min_split < 2:
        raise ConfigurationError(f"min_split must be >= 2, got {min_split}")


def tree_fit(train: Sequence[FeatureVector], criterion: str = "entropy",
             max_depth: Optional[int] = None, min_split: int = 2,
             seed: int = 0) -> TrainedModel:
    """Greedy binary splits on single features maximizing impurity reduction."""
    _validate_tree_params(criterion, max_depth, min_split)
    if not train:
        raise InsufficientDataError("untrained model: empty training set")
    X, y = features_to_matrix(train)
    scaling = fit_feature_scaling(X)
    Xs = apply_feature_scaling(X, scaling)
    root = _grow_tree(Xs, y, 0, criterion, max_depth, min_split, None, None)
    return TrainedModel(
        kind="decision_tree",
        hyperparams={"criterion": criterion, "max_depth": max_depth, "min_split": int(min_split)},
        scaling=scaling,
        payload={"tree": root},
        train_seed=seed,
    )


def _tree_route(node: dict, x: np.ndarray) -> int:
    while not node["leaf"]:
        node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
    return int(node["label"])


def tree_predict_many(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    if model.kind != "decision_tree":
        raise ValidationError(f"expected a decision_tree model, got {model.kind}")
    Xs = apply_feature_scaling(np.atleast_2d(np.asarray(X, dtype=float)), model.scaling)
    return np.array([_tree_route(model.payload["tree"], row) for row in Xs], dtype=int)


def tree_predict(model: TrainedModel, x) -> ActivityLabel:
    return ActivityLabel(tree_predict_many(model, _query_array(x)[None, :])[0])


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------

def forest_fit(train: Sequence[FeatureVector], n_trees: int, seed: int = 0,
               criterion: str = "entropy", max_depth: Optional[int] = None,
               min_split: int = 2, bootstrap: bool = True,
               feature_subsample: bool = True) -> TrainedModel:
    """Bootstrap-sampled trees with per-split feature subsampling of ceil(sqrt(d))."""
    _validate_tree_params(criterion, max_depth, min_split)
    if n_trees < 1:
        raise ConfigurationError(f"n_trees must be >= 1, got {n_trees}")
    if not train:
        raise InsufficientDataError("untrained model: empty training set")
    X, y = features_to_matrix(train)
    scaling = fit_feature_scaling(X)
    Xs = apply_feature_scaling(X, scaling)
    n, d = Xs.shape
    n_sub = int(np.ceil(np.sqrt(d))) if feature_subsample else None
    trees = []
    for i in range(n_trees):
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        idx = rng.integers(0, n, n) if bootstrap else np.arange(n)
        trees.append(_grow_tree(Xs[idx], y[idx], 0, criterion, max_depth,
                                min_split, n_sub, rng))
    return TrainedModel(
        kind="random_forest",
        hyperparams={"n_trees": int(n_trees), "criterion": criterion,
                     "max_depth": max_depth, "min_split": int(min_split),
                     "bootstrap": bool(bootstrap),
                     "feature_subsample": bool(feature_subsample)},
        scaling=scaling,
        payload={"trees": trees},
        train_seed=seed,
    )


def forest_predict_many(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    if model.kind != "random_forest":
        raise ValidationError(f"expected a random_forest model, got {model.kind}")
    Xs = apply_feature_scaling(np.atleast_2d(np.asarray(X, dtype=float)), model.scaling)
    out = np.empty(len(Xs), dtype=int)
    for i, row in enumerate(Xs):
        votes = np.bincount(
            [_tree_route(tree, row) for tree in model.payload["trees"]],
            minlength=len(ActivityLabel),
        )
        out[i] = int(np.argmax(votes))  # first max: lowest label code
    return out


def forest_predict(model: TrainedModel, x) -> ActivityLabel:
    return ActivityLabel(forest_predict_many(model, _query_array(x)[None, :])[0])


# ---------------------------------------------------------------------------
# Generic fit/predict dispatch
# ---------------------------------------------------------------------------

def fit_model(kind: str, train: Sequence[FeatureVector], params: dict,
              seed: int = 0) -> TrainedModel:
    if kind == "knn":
        return knn_fit(train, k=params.get("k", 3), seed=seed)
    if kind == "decision_tree":
        return tree_fit(train, criterion=params.get("criterion", "entropy"),
                        max_depth=params.get("max_depth"),
                        min_split=params.get("min_split", 2), seed=seed)
    if kind == "random_forest":
        return forest_fit(train, n_trees=params.get("n_trees", 100), seed=seed,
                          criterion=params.get("criterion", "entropy"),
                          max_depth=params.get("max_depth"),
                          min_split=params.get("min_split", 2))
    raise ConfigurationError(f"unknown model kind {kind!r}")


_PREDICT_MANY = {
    "knn": knn_predict_many,
    "decision_tree": tree_predict_many,
    "random_forest": forest_predict_many,
}


def predict_many(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    return _PREDICT_MANY[model.kind](model, X)


def predict(model: TrainedModel, x) -> ActivityLabel:
    return ActivityLabel(predict_many(model, _query_array(x)[None, :])[0])


# ---------------------------------------------------------------------------
# Stratified splitting and cross-validation
# ---------------------------------------------------------------------------

def _indices_by_class(items: Sequence[FeatureVector]) -> dict[int, np.ndarray]:
    X, y = features_to_matrix(items)
    del X
    return {c: np.flatnonzero(y == c) for c in np.unique(y)}


def stratified_split(data: Sequence[FeatureVector], test_fraction: float = 0.2,
                     seed: int = 0):
    """Per-class split preserving proportions within one sample."""
    if not (0.0 < test_fraction < 1.0):
        raise ValidationError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    test_idx: list[int] = []
    for c, idx in sorted(_indices_by_class(data).items()):
        perm = rng.permutation(idx)
        n_test = int(round(len(idx) * test_fraction))
        test_idx.extend(int(i) for i in perm[:n_test])
    test_set = set(test_idx)
    train = [data[i] for i in range(len(data)) if i not in test_set]
    test = [data[i] for i in sorted(test_set)]
    return train, test


def stratified_kfold(data: Sequence[FeatureVector], k: int = 5, seed: int = 0):
    """k disjoint covering folds with per-class counts balanced within one.

    Returns a list of k index lists (the test folds).
    """
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    by_class = _indices_by_class(data)
    for c, idx in sorted(by_class.items()):
        if len(idx) < k:
            raise ValidationError(
                f"stratification error: class {ActivityLabel(c).display_name} has "
                f"{len(idx)} samples, fewer than {k} folds"
            )
    rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    folds: list[list[int]] = [[] for _ in range(k)]
    for c, idx in sorted(by_class.items()):
        perm = rng.permutation(idx)
        for j, sample in enumerate(perm):
            folds[j % k].append(int(sample))
    return [sorted(fold) for fold in folds]


def accuracy_score(actual: np.ndarray, predicted: np.ndarray) -> float:
    actual = np.asarray(actual)
    predicted = np.asarray(predicted)
    if actual.shape != predicted.shape or actual.size == 0:
        raise ValidationError("actual and predicted must be equal-length and non-empty")
    return float(np.mean(actual == predicted))


def cross_val_accuracy(kind: str, params: dict, data: Sequence[FeatureVector],
                       folds: int = 5, seed: int = 0):
    """Mean stratified k-fold accuracy plus the per-fold scores."""
    fold_indices = stratified_kfold(data, k=folds, seed=seed)
    scores = []
    for test_idx in fold_indices:
        test_set = set(test_idx)
        train_items = [data[i] for i in range(len(data)) if i not in test_set]
        test_items = [data[i] for i in test_idx]
        model = fit_model(kind, train_items, params, seed=seed)
        X_test, y_test = features_to_matrix(test_items)
        scores.append(accuracy_score(y_test, predict_many(model, X_test)))
    return float(np.mean(scores)), scores


def grid_search(train: Sequence[FeatureVector], model_kind: str, grid: dict,
                folds: int = 5, seed: int = 0):
    """Exhaustive sweep scored by mean stratified-CV accuracy.

    Ties resolve to the first candidate in declared grid order. Returns
    (best_params, score_table).
    """
    if folds < 2:
        raise ValidationError(f"folds must be >= 2, got {folds}")
    if not grid:
        raise ValidationError("empty hyperparameter grid")
    keys = list(grid.keys())
    table = []
    best_params = None
    best_score = -np.inf
    for combo in itertools.product(*(grid[key] for key in keys)):
        params = dict(zip(keys, combo))
        mean_acc, fold_accs = cross_val_accuracy(model_kind, params, train,
                                                 folds=folds, seed=seed)
        table.append({"params": params, "mean_accuracy": mean_acc,
                      "fold_accuracies": fold_accs})
        if mean_acc > best_score:
            best_score = mean_acc
            best_params = params
    return best_params, table


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    zero_division: bool = False


@dataclass(frozen=True)
class EvalReport:
    labels: tuple
    confusion: np.ndarray  # rows actual, columns predicted
    per_class: dict
    accuracy: float
    macro_avg: tuple      # (precision, recall, f1)
    weighted_avg: tuple   # (precision, recall, f1)
    method: str = ""      # e.g. "stratified-5-fold" or "holdout-0.2"

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "confusion": self.confusion.tolist(),
            "per_class": {
                name: {"precision": m.precision, "recall": m.recall, "f1": m.f1,
                       "support": m.support, "zero_division": m.zero_division}
                for name, m in self.per_class.items()
            },
            "accuracy": self.accuracy,
            "macro_avg": list(self.macro_avg),
            "weighted_avg": list(self.weighted_avg),
            "method": self.method,
        }


def confusion_from_labels(actual, predicted, n_classes: int = len(ActivityLabel)) -> np.ndarray:
    actual = np.asarray(actual, dtype=int)
    predicted = np.asarray(predicted, dtype=int)
    if actual.shape != predicted.shape:
        raise ValidationError("actual and predicted must have equal length")
    matrix = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(matrix, (actual, predicted), 1)
    return matrix


def evaluate(confusion, labels: Optional[Sequence[str]] = None,
             method: str = "") -> EvalReport:
    """Per-class precision/recall/F1 plus accuracy and macro/weighted averages.

    precision_c = M[c,c] / column_sum_c and recall_c = M[c,c] / row_sum_c;
    zero denominators report 0 with a flag.
    """
    m = np.asarray(confusion)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ValidationError("confusion matrix must be square")
    if np.any(m < 0) or not np.all(np.equal(np.mod(m, 1), 0)):
        raise ValidationError("confusion matrix must hold non-negative integers")
    m = m.astype(np.int64)
    total = int(m.sum())
    if total == 0:
        raise ValidationError("empty evaluation: all-zero confusion matrix")
    size = m.shape[0]
    if labels is None:
        if size == len(ActivityLabel):
            labels = [lab.display_name for lab in ActivityLabel]
        else:
            labels = [f"class_{i}" for i in range(size)]
    if len(labels) != size:
        raise ValidationError("labels length must match matrix size")

    per_class = {}
    precisions, recalls, f1s, supports = [], [], [], []
    for c in range(size):
        tp = int(m[c, c])
        col = int(m[:, c].sum())
        row = int(m[c, :].sum())
        flagged = col == 0 or row == 0
        precision = tp / col if col else 0.0
        recall = tp / row if row else 0.0
        if precision + recall > 0:
            f1 = 2.0 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
            flagged = True
        per_class[str(labels[c])] = ClassMetrics(precision, recall, f1, row, flagged)
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)
        supports.append(row)

    supports_arr = np.array(supports, dtype=float)
    weights = supports_arr / supports_arr.sum()
    return EvalReport(
        labels=tuple(str(lab) for lab in labels),
        confusion=m,
        per_class=per_class,
        accuracy=float(np.trace(m) / total),
        macro_avg=(float(np.mean(precisions)), float(np.mean(recalls)), float(np.mean(f1s))),
        weighted_avg=(
            float(np.dot(weights, precisions)),
            float(np.dot(weights, recalls)),
            float(np.dot(weights, f1s)),
        ),
        method=method,
    )


# ---------------------------------------------------------------------------
# Model archive (versioned, JSON, binary-agnostic)
# ---------------------------------------------------------------------------
# Layout: header (format + version), kind, hyperparams, train_seed,
# per-feature scaling, then the kind-specific payload.

def save_model(model: TrainedModel, path) -> None:
    payload = model.payload
    if model.kind == "knn":
        payload = {"X": payload["X"].tolist(), "y": payload["y"].tolist()}
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": model.kind,
        "hyperparams": model.hyperparams,
        "train_seed": model.train_seed,
        "scaling": [
            {"name": sc.name, "x_min": sc.x_min, "x_max": sc.x_max} for sc in model.scaling
        ],
        "payload": payload,
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_model(path) -> TrainedModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"not a model archive: {exc}") from exc
    if doc.get("format") != MODEL_FORMAT:
        raise FormatError(f"unexpected archive format {doc.get('format')!r}")
    if doc.get("version") != MODEL_VERSION:
        raise FormatError(f"unsupported archive version {doc.get('version')!r}")
    payload = doc["payload"]
    if doc["kind"] == "knn":
        payload = {"X": np.asarray(payload["X"], dtype=float),
                   "y": np.asarray(payload["y"], dtype=int)}
    return TrainedModel(
        kind=doc["kind"],
        hyperparams=doc["hyperparams"],
        scaling=tuple(FeatureScaling(s["name"], s["x_min"], s["x_max"])
                      for s in doc["scaling"]),
        payload=payload,
        train_seed=doc.get("train_seed", 0),
    )
