import math

import numpy as np
import pytest

from breathhar.domain import ActivityLabel, LabeledSeries, default_profiles
from breathhar.errors import ConfigurationError, InsufficientDataError, ValidationError
from breathhar.learn import (
    FEATURE_NAMES,
    FeatureVector,
    accuracy_score,
    confusion_from_labels,
    cross_val_accuracy,
    entropy_bits,
    evaluate,
    extract_features,
    features_to_matrix,
    forest_fit,
    forest_predict,
    grid_search,
    knn_fit,
    knn_predict,
    knn_predict_many,
    load_model,
    save_model,
    stratified_kfold,
    stratified_split,
    tree_fit,
    tree_predict,
    tree_predict_many,
)
from breathhar.synthgen import SynthConfig, synthesize_series

PROFILES = default_profiles()


def fv(values, label=None, window_id="w"):
    """FeatureVector from a short vector, padding the remaining features."""
    padded = list(values) + [0.0] * (len(FEATURE_NAMES) - len(values))
    return FeatureVector(label=label, window_id=window_id,
                         **dict(zip(FEATURE_NAMES, padded)))


def four_class_blobs(n_per_class=30, noise=0.05, seed=0):
    rng = np.random.default_rng(seed)
    centers = {
        ActivityLabel.RUNNING: (0.0, 0.0),
        ActivityLabel.WALKING: (1.0, 0.0),
        ActivityLabel.SITTING: (0.0, 1.0),
        ActivityLabel.SLEEPING: (1.0, 1.0),
    }
    items = []
    for label, (cx, cy) in centers.items():
        for i in range(n_per_class):
            items.append(fv([cx + rng.normal(0, noise), cy + rng.normal(0, noise)],
                            label=label, window_id=f"{label.name}:{i}"))
    return items


def constant_series(n=60, label=ActivityLabel.SITTING):
    return LabeledSeries(
        timestamps=np.arange(float(n)),
        temperature=np.full(n, 31.8),
        humidity=np.full(n, 68.9),
        aqi_raw=None,
        label=label,
        sampling_hz=1.0,
    )


class TestExtractFeatures:
    def test_constant_window_features(self):
        items = extract_features(constant_series(), 30.0, 0.5, PROFILES[ActivityLabel.SITTING])
        assert items
        for item in items:
            assert item.temp_std == 0.0
            assert item.temp_range == 0.0
            assert item.temp_rate_mean == 0.0
            assert item.peak_count == 0.0

    def test_sitting_window_peak_count_matches_breath_rate(self):
        # 30 s at 0.25 Hz: 7.5 cycles per window
        cfg = SynthConfig(seed=3, noise_std_temp=0.0, noise_std_hum=0.0, duration_s=600.0)
        series = synthesize_series(ActivityLabel.SITTING, cfg)
        items = extract_features(series, 30.0, 0.5, PROFILES[ActivityLabel.SITTING])
        assert {item.peak_count for item in items} <= {7.0, 8.0}

    def test_window_means_inside_published_bands(self):
        series = synthesize_series(ActivityLabel.RUNNING, SynthConfig(seed=42))
        items = extract_features(series, 30.0, 0.5, PROFILES[ActivityLabel.RUNNING])
        p = PROFILES[ActivityLabel.RUNNING]
        n = int(30.0 * series.sampling_hz)
        band_t = 3.0 * p.temp_std / math.sqrt(n)
        band_h = 3.0 * p.hum_std / math.sqrt(n)
        for item in items:
            assert abs(item.temp_mean - p.temp_mean) <= band_t
            assert abs(item.hum_mean - p.hum_mean) <= band_h

    def test_window_count_and_ids(self):
        series = synthesize_series(ActivityLabel.SITTING, SynthConfig(seed=1, duration_s=300.0))
        items = extract_features(series, 30.0, 0.5, PROFILES[ActivityLabel.SITTING])
        assert len(items) == (300 - 30) // 15 + 1
        assert len({item.window_id for item in items}) == len(items)

    def test_series_shorter_than_window_yields_empty(self):
        series = constant_series(n=20)
        assert extract_features(series, 30.0, 0.5, PROFILES[ActivityLabel.SITTING]) == []

    def test_windows_with_too_many_missing_skipped(self):
        n = 90
        temp = np.full(n, 31.8)
        temp[30:55] = np.nan  # 25 of 30 missing in the second window
        series = LabeledSeries(
            timestamps=np.arange(float(n)), temperature=temp,
            humidity=np.full(n, 68.9), aqi_raw=None,
            label=ActivityLabel.SITTING, sampling_hz=1.0,
        )
        items = extract_features(series, 30.0, 0.0, PROFILES[ActivityLabel.SITTING])
        starts = {item.window_id.rsplit(":", 1)[-1] for item in items}
        assert "30" not in starts

    def test_overlap_out_of_range_rejected(self):
        with pytest.raises(ValidationError):
            extract_features(constant_series(), 30.0, 0.95, PROFILES[ActivityLabel.SITTING])

    def test_all_features_finite(self):
        series = synthesize_series(ActivityLabel.WALKING, SynthConfig(seed=9, duration_s=300.0))
        for item in extract_features(series, 30.0, 0.5, PROFILES[ActivityLabel.WALKING]):
            assert np.all(np.isfinite(item.as_array()))


def brute_force_knn(train_X, train_y, query, k):
    """Independent oracle: exhaustive distances in pure Python."""
    dists = []
    for i in range(len(train_X)):
        d = math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(train_X[i], query)))
        dists.append((d, i))
    dists.sort(key=lambda pair: (pair[0], pair[1]))
    top = dists[:k]
    votes = {}
    for d, i in top:
        votes.setdefault(int(train_y[i]), []).append(d)
    best_count = max(len(v) for v in votes.values())
    candidates = [c for c, v in votes.items() if len(v) == best_count]
    if len(candidates) == 1:
        return candidates[0]
    sums = {c: sum(votes[c]) for c in candidates}
    min_sum = min(sums.values())
    return min(c for c, s in sums.items() if s == min_sum - 0.0 or s == min_sum)


class TestKnn:
    def test_k1_returns_exact_match_label(self):
        train = [fv([0.1, 0.2], ActivityLabel.WALKING), fv([0.9, 0.8], ActivityLabel.SITTING)]
        model = knn_fit(train, k=1)
        assert knn_predict(model, train[0]) is ActivityLabel.WALKING

    def test_majority_vote(self):
        train = [
            fv([0.0, 0.0], ActivityLabel.RUNNING),
            fv([0.1, 0.0], ActivityLabel.RUNNING),
            fv([0.2, 0.0], ActivityLabel.WALKING),
            fv([1.0, 1.0], ActivityLabel.SLEEPING),
        ]
        model = knn_fit(train, k=3)
        assert knn_predict(model, fv([0.05, 0.0])) is ActivityLabel.RUNNING

    def test_matches_brute_force_oracle(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            train = [fv(rng.uniform(0, 1, 4), ActivityLabel(int(rng.integers(0, 4))),
                        window_id=f"t{i}") for i in range(200)]
            model = knn_fit(train, k=3)
            X_train_scaled = model.payload["X"]
            y_train = model.payload["y"]
            queries = rng.uniform(0, 1, (50, 4))
            predicted = knn_predict_many(model, np.hstack([
                queries, np.zeros((50, len(FEATURE_NAMES) - 4))
            ]))
            from breathhar.learn import apply_feature_scaling
            q_scaled = apply_feature_scaling(
                np.hstack([queries, np.zeros((50, len(FEATURE_NAMES) - 4))]), model.scaling
            )
            for qi in range(50):
                oracle = brute_force_knn(X_train_scaled, y_train, q_scaled[qi], 3)
                assert int(predicted[qi]) == oracle, f"seed {seed} query {qi}"

    def test_empty_training_set_rejected(self):
        with pytest.raises(InsufficientDataError):
            knn_fit([], k=1)

    def test_k_larger_than_train_rejected(self):
        with pytest.raises(ValidationError):
            knn_fit([fv([0.0], ActivityLabel.RUNNING)], k=2)

    def test_shared_affine_transform_preserves_predictions(self):
        items = four_class_blobs(seed=3)
        rng = np.random.default_rng(4)
        queries = np.hstack([rng.uniform(0, 1, (20, 2)),
                             np.zeros((20, len(FEATURE_NAMES) - 2))])
        model = knn_fit(items, k=3)
        shifted = [fv(3.0 * item.as_array()[:2] + 11.0, item.label, item.window_id)
                   for item in items]
        model2 = knn_fit(shifted, k=3)
        q2 = np.array(queries)
        q2[:, :2] = 3.0 * q2[:, :2] + 11.0
        assert np.array_equal(knn_predict_many(model, queries),
                              knn_predict_many(model2, q2))


class TestDecisionTree:
    def test_pure_training_set_single_leaf(self):
        train = [fv([float(i), 0.0], ActivityLabel.SITTING, f"w{i}") for i in range(10)]
        model = tree_fit(train)
        assert model.payload["tree"]["leaf"]
        assert tree_predict(model, fv([99.0, 0.0])) is ActivityLabel.SITTING

    def test_1d_separable_threshold_and_accuracy(self):
        rng = np.random.default_rng(0)
        low = rng.uniform(0.0, 0.4, 30)
        high = rng.uniform(0.6, 1.0, 30)
        train = ([fv([v], ActivityLabel.RUNNING, f"lo{i}") for i, v in enumerate(low)]
                 + [fv([v], ActivityLabel.WALKING, f"hi{i}") for i, v in enumerate(high)])
        model = tree_fit(train)
        root = model.payload["tree"]
        assert not root["leaf"]
        # features are min-max scaled inside the model; map the threshold back
        scale = model.scaling[0]
        threshold_raw = root["threshold"] * (scale.x_max - scale.x_min) + scale.x_min
        assert 0.4 < threshold_raw < 0.6
        X, y = features_to_matrix(train)
        assert accuracy_score(y, tree_predict_many(model, X)) == 1.0

    def test_entropy_of_even_binary_split_is_one_bit(self):
        assert entropy_bits([10, 10, 0, 0]) == pytest.approx(1.0, abs=1e-12)

    def test_training_accuracy_one_on_consistent_data(self):
        items = four_class_blobs(n_per_class=20, noise=0.3, seed=5)
        model = tree_fit(items)  # unbounded depth
        X, y = features_to_matrix(items)
        assert accuracy_score(y, tree_predict_many(model, X)) == 1.0

    def test_max_depth_zero_rejected(self):
        with pytest.raises(ConfigurationError):
            tree_fit([fv([0.0], ActivityLabel.RUNNING)], max_depth=0)

    def test_bad_criterion_rejected(self):
        with pytest.raises(ConfigurationError):
            tree_fit([fv([0.0], ActivityLabel.RUNNING)], criterion="logloss")

    def test_gini_also_separates(self):
        items = four_class_blobs(seed=6)
        model = tree_fit(items, criterion="gini")
        X, y = features_to_matrix(items)
        assert accuracy_score(y, tree_predict_many(model, X)) == 1.0

    def test_deterministic(self):
        items = four_class_blobs(seed=7)
        a = tree_fit(items)
        b = tree_fit(items)
        assert a.payload == b.payload


class TestRandomForest:
    def test_degenerate_forest_equals_tree(self):
        items = four_class_blobs(seed=8)
        tree = tree_fit(items)
        forest = forest_fit(items, n_trees=1, seed=0, bootstrap=False,
                            feature_subsample=False)
        rng = np.random.default_rng(9)
        queries = np.hstack([rng.uniform(0, 1, (30, 2)),
                             np.zeros((30, len(FEATURE_NAMES) - 2))])
        assert np.array_equal(tree_predict_many(tree, queries),
                              np.asarray([int(forest_predict(forest, q)) for q in queries]))

    def test_same_seed_identical_predictions(self):
        items = four_class_blobs(n_per_class=15, noise=0.4, seed=10)
        rng = np.random.default_rng(11)
        queries = np.hstack([rng.uniform(0, 1, (20, 2)),
                             np.zeros((20, len(FEATURE_NAMES) - 2))])
        a = forest_fit(items, n_trees=7, seed=123)
        b = forest_fit(items, n_trees=7, seed=123)
        from breathhar.learn import forest_predict_many
        assert np.array_equal(forest_predict_many(a, queries),
                              forest_predict_many(b, queries))

    def test_forest_training_accuracy_at_least_tree_cv(self):
        items = four_class_blobs(n_per_class=25, noise=0.45, seed=12)
        X, y = features_to_matrix(items)
        forest = forest_fit(items, n_trees=15, seed=1)
        from breathhar.learn import forest_predict_many
        train_acc = accuracy_score(y, forest_predict_many(forest, X))
        cv_acc, _ = cross_val_accuracy("decision_tree", {}, items, folds=5, seed=1)
        assert train_acc >= cv_acc

    def test_n_trees_below_one_rejected(self):
        with pytest.raises(ConfigurationError):
            forest_fit([fv([0.0], ActivityLabel.RUNNING)], n_trees=0)


class TestStratifiedSplitting:
    def test_exact_stratification_100_samples(self):
        items = four_class_blobs(n_per_class=25, seed=13)
        train, test = stratified_split(items, test_fraction=0.2, seed=0)
        assert len(test) == 20 and len(train) == 80
        for label in ActivityLabel:
            assert sum(1 for item in test if item.label is label) == 5

    def test_folds_disjoint_and_covering(self):
        items = four_class_blobs(n_per_class=13, seed=14)
        folds = stratified_kfold(items, k=5, seed=0)
        flat = [i for fold in folds for i in fold]
        assert sorted(flat) == list(range(len(items)))

    def test_fold_class_balance_within_one(self):
        rng = np.random.default_rng(15)
        items = []
        for label, count in zip(ActivityLabel, (23, 17, 11, 29)):
            for i in range(count):
                items.append(fv(rng.uniform(0, 1, 2), label, f"{label.name}:{i}"))
        folds = stratified_kfold(items, k=5, seed=0)
        for label in ActivityLabel:
            per_fold = [sum(1 for i in fold if items[i].label is label) for fold in folds]
            assert max(per_fold) - min(per_fold) <= 1

    def test_class_smaller_than_folds_rejected(self):
        items = four_class_blobs(n_per_class=3, seed=16)
        with pytest.raises(ValidationError, match="stratification"):
            stratified_kfold(items, k=5, seed=0)

    def test_split_deterministic_per_seed(self):
        items = four_class_blobs(seed=17)
        a = stratified_split(items, 0.2, seed=4)
        b = stratified_split(items, 0.2, seed=4)
        assert [x.window_id for x in a[1]] == [x.window_id for x in b[1]]


class TestGridSearch:
    def test_single_candidate_selected(self):
        items = four_class_blobs(seed=18)
        best, table = grid_search(items, "knn", {"k": [3]}, folds=3, seed=0)
        assert best == {"k": 3}
        assert len(table) == 1

    def test_table_rows_equal_grid_product(self):
        items = four_class_blobs(seed=19)
        _, table = grid_search(items, "decision_tree",
                               {"criterion": ["entropy", "gini"], "max_depth": [2, 4, None]},
                               folds=3, seed=0)
        assert len(table) == 6

    def test_selection_reproducible(self):
        items = four_class_blobs(n_per_class=20, noise=0.4, seed=20)
        a, _ = grid_search(items, "knn", {"k": [1, 3, 5, 7]}, folds=5, seed=7)
        b, _ = grid_search(items, "knn", {"k": [1, 3, 5, 7]}, folds=5, seed=7)
        assert a == b


def hand_metrics(matrix):
    """Direct formula evaluation used as the metrics oracle."""
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    out = {"per_class": [], "accuracy": m.trace() / m.sum()}
    for c in range(n):
        col = m[:, c].sum()
        row = m[c, :].sum()
        p = m[c, c] / col if col else 0.0
        r = m[c, c] / row if row else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        out["per_class"].append((p, r, f1, int(row)))
    return out


class TestEvaluate:
    def test_identity_matrix_perfect_scores(self):
        report = evaluate(np.diag([10, 20, 30, 40]))
        assert report.accuracy == 1.0
        for metrics in report.per_class.values():
            assert metrics.precision == metrics.recall == metrics.f1 == 1.0

    def test_matches_hand_computed_metrics_on_random_matrices(self):
        rng = np.random.default_rng(21)
        for trial in range(5):
            m = rng.integers(0, 40, size=(4, 4))
            m[np.diag_indices(4)] += 5  # keep rows/cols non-empty
            report = evaluate(m)
            oracle = hand_metrics(m)
            assert report.accuracy == pytest.approx(oracle["accuracy"], abs=1e-12)
            for c, name in enumerate(report.labels):
                p, r, f1, support = oracle["per_class"][c]
                got = report.per_class[name]
                assert got.precision == pytest.approx(p, abs=1e-12)
                assert got.recall == pytest.approx(r, abs=1e-12)
                assert got.f1 == pytest.approx(f1, abs=1e-12)
                assert got.support == support

    def test_zero_column_flagged_not_crashing(self):
        m = np.array([[5, 0], [3, 0]])  # class 1 never predicted
        report = evaluate(m, labels=["a", "b"])
        assert report.per_class["b"].precision == 0.0
        assert report.per_class["b"].zero_division

    def test_all_zero_matrix_rejected(self):
        with pytest.raises(ValidationError, match="empty evaluation"):
            evaluate(np.zeros((4, 4), dtype=int))

    def test_negative_counts_rejected(self):
        with pytest.raises(ValidationError):
            evaluate([[1, -1], [0, 2]])

    def test_row_sums_are_supports(self):
        m = np.array([[8, 2], [1, 9]])
        report = evaluate(m, labels=["x", "y"])
        assert report.per_class["x"].support == 10
        assert report.per_class["y"].support == 10

    def test_confusion_from_labels(self):
        m = confusion_from_labels([0, 0, 1, 2], [0, 1, 1, 2])
        assert m[0, 0] == 1 and m[0, 1] == 1 and m[1, 1] == 1 and m[2, 2] == 1


class TestModelArchive:
    @pytest.mark.parametrize("kind,params", [
        ("knn", {"k": 3}),
        ("decision_tree", {}),
        ("random_forest", {"n_trees": 5}),
    ])
    def test_round_trip_preserves_predictions(self, tmp_path, kind, params):
        from breathhar.learn import fit_model, predict_many
        items = four_class_blobs(n_per_class=15, noise=0.2, seed=22)
        model = fit_model(kind, items, params, seed=3)
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        rng = np.random.default_rng(23)
        queries = np.hstack([rng.uniform(0, 1, (25, 2)),
                             np.zeros((25, len(FEATURE_NAMES) - 2))])
        assert np.array_equal(predict_many(model, queries), predict_many(loaded, queries))
        assert loaded.hyperparams == model.hyperparams

    def test_bad_format_rejected(self, tmp_path):
        from breathhar.errors import FormatError
        path = tmp_path / "bogus.json"
        path.write_text('{"format": "something-else", "version": 1}')
        with pytest.raises(FormatError):
            load_model(path)
