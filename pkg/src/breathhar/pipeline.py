"""End-to-end pipeline: configuration, stage orchestration, and the manifest.

Configuration is a plain key-value file (``key = value``, ``#`` comments).
Every key is validated against the schema below at load time and unknown keys
are rejected; flags override file values. All randomness flows from the
single top-level seed. The manifest records the config hash and a sha256 per
artifact, so equal manifests imply equal artifacts.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import breath_analysis, learn, preprocess, report, stl, telemetry
from .domain import ActivityLabel, ActivityProfile, LabeledSeries, default_profiles
from .dsp import EnvelopeConfig, WaveletBankConfig, filter_chain
from .errors import BreathharError, ConfigurationError, StageError
from .synthgen import SynthConfig, breath_count_ground_truth, inject_anomalies, synthesize_series

log = logging.getLogger(__name__)

# key: (type, default, description). A negative number for "auto" keys means
# "derive from the profile or sampling rate".
CONFIG_SCHEMA = {
    "seed": (int, 42, "top-level seed; all randomness derives from it"),
    "sampling_hz": (float, 1.0, "uniform sampling rate of the pipeline"),
    "synth.duration_s": (float, 1800.0, "seconds per generated session"),
    "synth.subjects": (int, 5, "subjects per activity for synth"),
    "synth.outlier_rate": (float, 0.0, "per-sample spike probability"),
    "synth.gap_rate": (float, 0.0, "per-sample gap probability"),
    "synth.noise_std_temp": (float, -1.0, "temperature noise std; auto when < 0"),
    "synth.noise_std_hum": (float, -1.0, "humidity noise std; auto when < 0"),
    "preprocess.bounds": (str, "table4", "outlier bounds source: table4 | recompute"),
    "preprocess.delta_temp": (float, 0.3, "temperature tolerance margin"),
    "preprocess.delta_hum": (float, 1.1, "humidity tolerance margin"),
    "filter.prefilter_cutoff_hz": (float, 0.45, "low-pass prefilter cutoff"),
    "filter.band_low_hz": (float, 0.1, "wavelet bank lowest center frequency"),
    "filter.band_high_hz": (float, 0.45, "wavelet bank highest center frequency"),
    "filter.n_scales": (int, 10, "number of linearly spaced scales"),
    "envelope.max_breath_rate_hz": (float, 0.3, "envelope rate bound"),
    "envelope.cutoff_multiplier": (float, 1.5, "envelope low-pass multiplier"),
    "stl.period_samples": (int, -1, "seasonal period; auto from profile when < 0"),
    "stl.seasonal_window": (int, 7, "loess window for cycle subseries"),
    "stl.trend_window": (int, -1, "loess window for trend; auto when < 0"),
    "stl.inner_iters": (int, 2, "inner loop iterations"),
    "stl.robust_iters": (int, 1, "robustness reweighting passes"),
    "peaks.min_distance_fraction": (float, 0.5, "min peak spacing x breath period"),
    "peaks.min_prominence_fraction": (float, 0.25, "min prominence x signal std"),
    "features.window_s": (float, 30.0, "feature window length"),
    "features.overlap": (float, 0.5, "feature window overlap fraction"),
    "model.kind": (str, "knn", "knn | decision_tree | random_forest"),
    "model.k": (int, 3, "kNN neighborhood size"),
    "model.criterion": (str, "entropy", "tree split criterion: entropy | gini"),
    "model.max_depth": (int, -1, "tree depth limit; unbounded when < 0"),
    "model.min_split": (int, 2, "min samples to split a node"),
    "model.n_trees": (int, 100, "forest size"),
    "eval.method": (str, "kfold", "kfold | holdout"),
    "eval.folds": (int, 5, "stratified fold count"),
    "eval.test_fraction": (float, 0.2, "holdout test fraction"),
}

MODEL_KIND_ALIASES = {"knn": "knn", "dt": "decision_tree", "decision_tree": "decision_tree",
                      "rf": "random_forest", "random_forest": "random_forest"}


def _coerce(key: str, raw: str):
    kind = CONFIG_SCHEMA[key][0]
    try:
        if kind is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {raw!r} ({exc})") from exc


@dataclass
class PipelineConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {key: spec[1] for key, spec in CONFIG_SCHEMA.items()}
        for key, value in self.values.items():
            if key not in CONFIG_SCHEMA:
                raise ConfigurationError(f"unknown config key {key!r}")
            merged[key] = value
        self.values = merged
        self.validate()

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def from_file(cls, path, overrides: Optional[dict] = None) -> "PipelineConfig":
        values = {}
        text = Path(path).read_text(encoding="utf-8")
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in CONFIG_SCHEMA:
                raise ConfigurationError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, value)
        if overrides:
            values.update(cls._parse_overrides(overrides))
        return cls(values)

    @classmethod
    def from_overrides(cls, overrides: Optional[dict] = None) -> "PipelineConfig":
        return cls(cls._parse_overrides(overrides or {}))

    @staticmethod
    def _parse_overrides(overrides: dict) -> dict:
        out = {}
        for key, value in overrides.items():
            if key not in CONFIG_SCHEMA:
                raise ConfigurationError(f"unknown config key {key!r}")
            out[key] = _coerce(key, str(value)) if isinstance(value, str) else value
        return out

    # -- derived, validated sub-configurations --

    @property
    def sampling_hz(self) -> float:
        return float(self.values["sampling_hz"])

    def bank_config(self) -> WaveletBankConfig:
        return WaveletBankConfig(
            n_scales=self.values["filter.n_scales"],
            f_low_hz=self.values["filter.band_low_hz"],
            f_high_hz=self.values["filter.band_high_hz"],
            sampling_hz=self.sampling_hz,
        )

    def envelope_config(self) -> EnvelopeConfig:
        cfg = EnvelopeConfig(
            max_breath_rate_hz=self.values["envelope.max_breath_rate_hz"],
            cutoff_multiplier=self.values["envelope.cutoff_multiplier"],
        )
        if cfg.cutoff_hz >= self.sampling_hz / 2.0:
            raise ConfigurationError(
                f"envelope cutoff {cfg.cutoff_hz} Hz is not below the Nyquist limit "
                f"{self.sampling_hz / 2.0} Hz"
            )
        return cfg

    def stl_config(self, profile: ActivityProfile) -> stl.StlConfig:
        period = self.values["stl.period_samples"]
        if period < 0:
            period = max(2, int(round(self.sampling_hz * profile.breath_period_s)))
        trend_window = self.values["stl.trend_window"]
        return stl.StlConfig(
            period_samples=period,
            seasonal_window=self.values["stl.seasonal_window"],
            trend_window=None if trend_window < 0 else trend_window,
            inner_iters=self.values["stl.inner_iters"],
            robust_iters=self.values["stl.robust_iters"],
        )

    def synth_config(self) -> SynthConfig:
        noise_t = self.values["synth.noise_std_temp"]
        noise_h = self.values["synth.noise_std_hum"]
        return SynthConfig(
            profiles=default_profiles(),
            duration_s=self.values["synth.duration_s"],
            sampling_hz=self.sampling_hz,
            noise_std_temp=None if noise_t < 0 else noise_t,
            noise_std_hum=None if noise_h < 0 else noise_h,
            outlier_rate=self.values["synth.outlier_rate"],
            gap_rate=self.values["synth.gap_rate"],
            seed=self.values["seed"],
        )

    def tolerance(self) -> preprocess.Tolerance:
        return preprocess.Tolerance(self.values["preprocess.delta_temp"],
                                    self.values["preprocess.delta_hum"])

    def bounds_for(self, profile: ActivityProfile) -> preprocess.ThresholdBounds:
        mode = self.values["preprocess.bounds"]
        if mode == "table4":
            return preprocess.table4_bounds()[profile.label]
        return preprocess.bounds_from_profile(profile, self.tolerance())

    def model_params(self) -> dict:
        kind = self.model_kind()
        if kind == "knn":
            return {"k": self.values["model.k"]}
        depth = self.values["model.max_depth"]
        params = {
            "criterion": self.values["model.criterion"],
            "max_depth": None if depth < 0 else depth,
            "min_split": self.values["model.min_split"],
        }
        if kind == "random_forest":
            params["n_trees"] = self.values["model.n_trees"]
        return params

    def model_kind(self) -> str:
        return MODEL_KIND_ALIASES[self.values["model.kind"]]

    def validate(self) -> None:
        try:
            self.bank_config()
            self.envelope_config()
            self.tolerance()
            self.synth_config()
        except BreathharError as exc:
            raise ConfigurationError(str(exc)) from exc
        if self.values["preprocess.bounds"] not in ("table4", "recompute"):
            raise ConfigurationError(
                f"preprocess.bounds must be table4 or recompute, got "
                f"{self.values['preprocess.bounds']!r}"
            )
        if self.values["model.kind"] not in MODEL_KIND_ALIASES:
            raise ConfigurationError(f"unknown model.kind {self.values['model.kind']!r}")
        if self.values["model.criterion"] not in ("entropy", "gini"):
            raise ConfigurationError(
                f"model.criterion must be entropy or gini, got "
                f"{self.values['model.criterion']!r}"
            )
        if self.values["eval.method"] not in ("kfold", "holdout"):
            raise ConfigurationError(
                f"eval.method must be kfold or holdout, got {self.values['eval.method']!r}"
            )
        if self.values["eval.folds"] < 2:
            raise ConfigurationError("eval.folds must be >= 2")
        if not (0.0 < self.values["eval.test_fraction"] < 1.0):
            raise ConfigurationError("eval.test_fraction must be in (0, 1)")
        if self.values["peaks.min_distance_fraction"] <= 0:
            raise ConfigurationError("peaks.min_distance_fraction must be positive")
        if self.values["peaks.min_prominence_fraction"] < 0:
            raise ConfigurationError("peaks.min_prominence_fraction must be >= 0")
        if not (0.0 <= self.values["features.overlap"] <= 0.9):
            raise ConfigurationError("features.overlap must be in [0, 0.9]")

    def canonical_text(self) -> str:
        lines = [f"{key} = {self.values[key]}" for key in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()


def write_default_config(path) -> None:
    lines = ["# breathhar pipeline configuration", ""]
    for key, (kind, default, description) in CONFIG_SCHEMA.items():
        lines.append(f"# {description} ({kind.__name__})")
        lines.append(f"{key} = {default}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# Feature CSV (delimited output of the features stage)
# ---------------------------------------------------------------------------

FEATURES_HEADER = "window_id,label," + ",".join(learn.FEATURE_NAMES)


def write_features_csv(items, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(FEATURES_HEADER + "\n")
        for fv in items:
            label = fv.label.name.lower() if fv.label is not None else ""
            values = ",".join(repr(float(v)) for v in fv.as_array())
            fh.write(f"{fv.window_id},{label},{values}\n")


def read_features_csv(path) -> list:
    from .errors import FormatError
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != FEATURES_HEADER:
        raise FormatError(f"{path}: expected features header {FEATURES_HEADER!r}")
    items = []
    for row, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != 2 + len(learn.FEATURE_NAMES):
            raise FormatError(f"wrong column count", row=row)
        window_id, label_name = cells[0], cells[1]
        label = ActivityLabel.from_name(label_name) if label_name else None
        values = dict(zip(learn.FEATURE_NAMES, (float(c) for c in cells[2:])))
        items.append(learn.FeatureVector(label=label, window_id=window_id, **values))
    return items


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def synth_dataset(cfg: PipelineConfig, out_dir) -> list:
    """Generate one CSV per (subject, activity); returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    synth_cfg = cfg.synth_config()
    paths = []
    for label in ActivityLabel:
        for subject in range(cfg["synth.subjects"]):
            series = synthesize_series(label, synth_cfg, subject=subject)
            if synth_cfg.outlier_rate > 0 or synth_cfg.gap_rate > 0:
                series, anomaly_log = inject_anomalies(series, synth_cfg)
                log_path = out_dir / f"{series.subject_id}_{label.name.lower()}_anomalies.json"
                log_path.write_text(json.dumps(anomaly_log), encoding="utf-8")
            path = out_dir / f"{series.subject_id}_{label.name.lower()}.csv"
            telemetry.write_csv(series, path)
            paths.append(path)
    return paths


def _channel_arrays(series: LabeledSeries) -> dict:
    return {"temperature": series.temperature, "humidity": series.humidity}


class PipelineRun:
    """Executes the stages in order, persisting every intermediate."""

    def __init__(self, cfg: PipelineConfig, input_dir, out_dir=None):
        self.cfg = cfg
        self.input_dir = Path(input_dir)
        self.out_dir = Path(out_dir) if out_dir is not None else self.input_dir / "artifacts"
        self.profiles = default_profiles()
        self.artifacts: dict[str, dict[str, str]] = {}
        self.series: list[LabeledSeries] = []
        self.cleaned: list[LabeledSeries] = []
        self.features: list = []
        self.eval_dict: Optional[dict] = None

    def _record(self, stage: str, path: Path) -> Path:
        self.artifacts.setdefault(stage, {})[str(path.relative_to(self.out_dir))] = _sha256(path)
        return path

    def run(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        failed_marker = self.out_dir / "FAILED"
        if failed_marker.exists():
            failed_marker.unlink()
        stages = [
            ("inputs", self._stage_inputs),
            ("preprocess", self._stage_preprocess),
            ("filter", self._stage_filter),
            ("decompose", self._stage_decompose),
            ("analyze", self._stage_analyze),
            ("features", self._stage_features),
            ("train", self._stage_train),
            ("evaluate", self._stage_evaluate),
        ]
        for name, fn in stages:
            try:
                fn()
            except StageError as exc:
                failed_marker.write_text(f"{exc}\n", encoding="utf-8")
                self._write_manifest(failed=name)
                raise
            except BreathharError as exc:
                failed_marker.write_text(f"{name}: {exc}\n", encoding="utf-8")
                self._write_manifest(failed=name)
                raise StageError(name, str(exc)) from exc
        self._write_manifest()
        return self.out_dir

    # -- stages --

    def _stage_inputs(self) -> None:
        paths = sorted(self.input_dir.glob("*.csv"))
        if not paths:
            raise StageError("inputs", f"no input CSVs in {self.input_dir}")
        for path in paths:
            series = telemetry.read_csv(path)
            if series.label is None:
                raise StageError("inputs", "series has no activity label", path=str(path))
            self.series.append(series)
        present = {s.label for s in self.series}
        missing = [lab.display_name for lab in ActivityLabel if lab not in present]
        if missing:
            raise StageError("inputs", f"no series for activities: {', '.join(missing)}")

    def _stage_preprocess(self) -> None:
        out = self.out_dir / "cleaned"
        reports = {}
        for series in self.series:
            name = f"{series.subject_id}_{series.label.name.lower()}"
            try:
                bounds = self.cfg.bounds_for(self.profiles[series.label])
                cleaned, rep = preprocess.clean_series(series, bounds,
                                                       target_hz=self.cfg.sampling_hz)
            except BreathharError as exc:
                raise StageError("preprocess", str(exc), path=name) from exc
            path = out / f"{name}.csv"
            telemetry.write_csv(cleaned, path)
            self._record("preprocess", path)
            self.cleaned.append(cleaned)
            reports[name] = rep.to_dict()
        report_path = self.out_dir / "cleaning_report.json"
        report_path.write_text(json.dumps(reports, indent=2), encoding="utf-8")
        self._record("preprocess", report_path)

    def _stage_filter(self) -> None:
        out = self.out_dir / "filtered"
        out.mkdir(parents=True, exist_ok=True)
        bank = self.cfg.bank_config()
        env_cfg = self.cfg.envelope_config()
        cutoff = self.cfg["filter.prefilter_cutoff_hz"]
        for series in self.cleaned:
            name = f"{series.subject_id}_{series.label.name.lower()}"
            for channel, values in _channel_arrays(series).items():
                centered = values - values.mean()
                try:
                    filtered, response, env = filter_chain(
                        centered, series.sampling_hz, cutoff, bank, env_cfg
                    )
                except BreathharError as exc:
                    raise StageError("filter", str(exc), path=f"{name}:{channel}") from exc
                path = out / f"{name}_{channel}.csv"
                with open(path, "w", encoding="utf-8") as fh:
                    fh.write("timestamp_s,observed,filtered,bank_response,envelope\n")
                    for i in range(len(series)):
                        fh.write(telemetry.csv_row(
                            (series.timestamps[i], values[i], filtered[i],
                             response[i], env[i])) + "\n")
                self._record("filter", path)
                svg = report.save_line_plot(
                    out / f"{name}_{channel}.svg", series.timestamps,
                    {"observed": values, "filtered": filtered + values.mean(),
                     "bank response": response, "envelope": env},
                    title=f"{name} {channel}", xlabel="time (s)", ylabel=channel,
                )
                self._record("filter", svg)

    def _stage_decompose(self) -> None:
        out = self.out_dir / "decomposed"
        out.mkdir(parents=True, exist_ok=True)
        self._decompositions = {}
        for series in self.cleaned:
            profile = self.profiles[series.label]
            stl_cfg = self.cfg.stl_config(profile)
            name = f"{series.subject_id}_{series.label.name.lower()}"
            for channel, values in _channel_arrays(series).items():
                try:
                    decomp = stl.stl_decompose(values, stl_cfg)
                except BreathharError as exc:
                    raise StageError("decompose", str(exc), path=f"{name}:{channel}") from exc
                self._decompositions[(name, channel)] = decomp
                path = out / f"{name}_{channel}.csv"
                with open(path, "w", encoding="utf-8") as fh:
                    fh.write("observed,trend,seasonal,residual\n")
                    for i in range(len(values)):
                        fh.write(telemetry.csv_row(
                            (values[i], decomp.trend[i], decomp.seasonal[i],
                             decomp.residual[i])) + "\n")
                self._record("decompose", path)
                svg = report.save_line_plot(
                    out / f"{name}_{channel}.svg", series.timestamps,
                    {"observed": values, "trend": decomp.trend,
                     "seasonal": decomp.seasonal, "residual": decomp.residual},
                    title=f"STL {name} {channel}", xlabel="time (s)", ylabel=channel,
                )
                self._record("decompose", svg)

    def _stage_analyze(self) -> None:
        out = self.out_dir / "analysis"
        out.mkdir(parents=True, exist_ok=True)
        dist_frac = self.cfg["peaks.min_distance_fraction"]
        prom_frac = self.cfg["peaks.min_prominence_fraction"]

        peaks_path = out / "peaks.csv"
        validation = {}
        with open(peaks_path, "w", encoding="utf-8") as fh:
            fh.write("series,channel,source,index,time_s,height,prominence\n")
            for series in self.cleaned:
                profile = self.profiles[series.label]
                name = f"{series.subject_id}_{series.label.name.lower()}"
                min_dist = max(dist_frac * profile.breath_period_s,
                               1.0 / series.sampling_hz)
                for channel in ("temperature", "humidity"):
                    seasonal = self._decompositions[(name, channel)].seasonal
                    peaks = breath_analysis.detect_peaks(
                        seasonal, min_dist, prom_frac * float(seasonal.std()),
                        series.sampling_hz, polarity="minima",
                    )
                    for i, idx in enumerate(peaks.indices):
                        row = telemetry.csv_row((series.timestamps[idx],
                                                 peaks.heights[i], peaks.prominences[i]))
                        fh.write(f"{name},{channel},seasonal-minima,{idx},{row}\n")
                    if channel == "temperature":
                        expected = breath_count_ground_truth(
                            series.duration_s + 1.0 / series.sampling_hz,
                            profile.breath_rate_hz, series.sampling_hz)
                        tolerance = max(1, int(math.ceil(series.duration_s / 600.0)))
                        verdict = breath_analysis.validate_breath_count(
                            peaks, expected, tolerance)
                        validation[name] = {
                            "detected": verdict.detected, "expected": verdict.expected,
                            "deviation": verdict.deviation, "passed": verdict.passed,
                            "tolerance": tolerance,
                        }
        self._record("analyze", peaks_path)
        validation_path = out / "breath_validation.json"
        validation_path.write_text(json.dumps(validation, indent=2), encoding="utf-8")
        self._record("analyze", validation_path)

        # Correlation matrix over the Fig.-7-style channel set: first series
        # per activity, truncated to the common length, paired by sample index.
        order = [ActivityLabel.RUNNING, ActivityLabel.SLEEPING,
                 ActivityLabel.SITTING, ActivityLabel.WALKING]
        short = {ActivityLabel.RUNNING: "R", ActivityLabel.SLEEPING: "SL",
                 ActivityLabel.SITTING: "SE", ActivityLabel.WALKING: "W"}
        first_by_label = {}
        for series in self.cleaned:
            first_by_label.setdefault(series.label, series)
        n_common = min(len(first_by_label[lab]) for lab in order)
        channels = {}
        for lab in order:
            series = first_by_label[lab]
            channels[f"{short[lab]}_T"] = series.temperature[:n_common]
            channels[f"{short[lab]}_H"] = series.humidity[:n_common]
        matrix = breath_analysis.pearson_matrix(channels)
        corr_path = out / "correlation_matrix.csv"
        with open(corr_path, "w", encoding="utf-8") as fh:
            fh.write("," + ",".join(matrix.labels) + "\n")
            for i, row_label in enumerate(matrix.labels):
                cells = ",".join(f"{v:.6f}" for v in matrix.values[i])
                fh.write(f"{row_label},{cells}\n")
        self._record("analyze", corr_path)

        # Distribution summaries per activity and channel (box-plot data).
        stats_path = out / "distribution_stats.csv"
        stats_by_channel = {"temperature": {}, "humidity": {}}
        with open(stats_path, "w", encoding="utf-8") as fh:
            fh.write("activity,channel,mean,std,min,q1,median,q3,max,fence_low,fence_high\n")
            for lab in ActivityLabel:
                values_by_channel = {"temperature": [], "humidity": []}
                for series in self.cleaned:
                    if series.label is lab:
                        values_by_channel["temperature"].append(series.temperature)
                        values_by_channel["humidity"].append(series.humidity)
                for channel, chunks in values_by_channel.items():
                    summary = breath_analysis.summarize(np.concatenate(chunks))
                    stats_by_channel[channel][lab.display_name] = summary
                    q1, median, q3 = summary.quartiles
                    lo_fence, hi_fence = summary.outlier_fences
                    fh.write(f"{lab.display_name},{channel},{summary.mean:.6f},"
                             f"{summary.std:.6f},{summary.min:.6f},{q1:.6f},{median:.6f},"
                             f"{q3:.6f},{summary.max:.6f},{lo_fence:.6f},{hi_fence:.6f}\n")
        self._record("analyze", stats_path)
        for channel, stats in stats_by_channel.items():
            unit = "degC" if channel == "temperature" else "%RH"
            svg = report.save_box_stats(out / f"distribution_{channel}.svg", stats,
                                        ylabel=unit, title=f"{channel} by activity")
            self._record("analyze", svg)

    def _stage_features(self) -> None:
        for series in self.cleaned:
            self.features.extend(learn.extract_features(
                series, self.cfg["features.window_s"], self.cfg["features.overlap"],
                self.profiles[series.label],
            ))
        if not self.features:
            raise StageError("features", "no feature windows produced")
        path = self.out_dir / "features.csv"
        write_features_csv(self.features, path)
        self._record("features", path)

    def _stage_train(self) -> None:
        kind = self.cfg.model_kind()
        params = self.cfg.model_params()
        seed = self.cfg["seed"]
        method = self.cfg["eval.method"]
        X_all, y_all = learn.features_to_matrix(self.features)

        if method == "kfold":
            folds = self.cfg["eval.folds"]
            fold_indices = learn.stratified_kfold(self.features, k=folds, seed=seed)
            actual, predicted = [], []
            fold_scores = []
            for test_idx in fold_indices:
                test_set = set(test_idx)
                train_items = [self.features[i] for i in range(len(self.features))
                               if i not in test_set]
                model = learn.fit_model(kind, train_items, params, seed=seed)
                preds = learn.predict_many(model, X_all[test_idx])
                truth = y_all[test_idx]
                fold_scores.append(learn.accuracy_score(truth, preds))
                actual.extend(int(v) for v in truth)
                predicted.extend(int(v) for v in preds)
            confusion = learn.confusion_from_labels(actual, predicted)
            self._method_label = f"stratified-{folds}-fold"
            cv_info = {"fold_accuracies": fold_scores,
                       "mean_accuracy": float(np.mean(fold_scores))}
            final_model = learn.fit_model(kind, self.features, params, seed=seed)
        else:
            train_items, test_items = learn.stratified_split(
                self.features, self.cfg["eval.test_fraction"], seed=seed)
            final_model = learn.fit_model(kind, train_items, params, seed=seed)
            X_test, y_test = learn.features_to_matrix(test_items)
            preds = learn.predict_many(final_model, X_test)
            confusion = learn.confusion_from_labels(y_test, preds)
            self._method_label = f"holdout-{self.cfg['eval.test_fraction']}"
            cv_info = {"test_accuracy": learn.accuracy_score(y_test, preds)}

        self._confusion = confusion
        model_path = self.out_dir / "model.json"
        learn.save_model(final_model, model_path)
        self._record("train", model_path)
        cv_path = self.out_dir / "cv_scores.json"
        cv_path.write_text(json.dumps(
            {"model": kind, "params": {k: v for k, v in params.items()},
             "method": self._method_label, **cv_info}, indent=2), encoding="utf-8")
        self._record("train", cv_path)

    def _stage_evaluate(self) -> None:
        labels = [lab.display_name for lab in ActivityLabel]
        eval_report = learn.evaluate(self._confusion, labels=labels,
                                     method=self._method_label)
        self.eval_dict = eval_report.to_dict()
        eval_path = self.out_dir / "eval_report.json"
        eval_path.write_text(json.dumps(self.eval_dict, indent=2), encoding="utf-8")
        self._record("evaluate", eval_path)
        confusion_path = self.out_dir / "confusion.csv"
        write_confusion_csv(self._confusion, labels, confusion_path)
        self._record("evaluate", confusion_path)
        for path in render_report(self.out_dir, self.out_dir):
            self._record("evaluate", path)

    def _write_manifest(self, failed: Optional[str] = None) -> None:
        manifest = {
            "config_hash": self.cfg.config_hash(),
            "config": {key: self.cfg.values[key] for key in sorted(self.cfg.values)},
            "stages": self.artifacts,
        }
        if failed:
            manifest["failed_stage"] = failed
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")


def write_confusion_csv(confusion, labels, path) -> None:
    """Paper-table shape: rows actual, columns predicted."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("actual\\predicted," + ",".join(labels) + "\n")
        for i, lab in enumerate(labels):
            fh.write(lab + "," + ",".join(str(int(v)) for v in confusion[i]) + "\n")


def render_report(artifacts_dir, out_dir) -> list:
    """Render the static HTML + SVG summary from persisted artifacts."""
    artifacts_dir = Path(artifacts_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    eval_path = artifacts_dir / "eval_report.json"
    if not eval_path.exists():
        raise StageError("report", f"no eval_report.json in {artifacts_dir}")
    eval_dict = json.loads(eval_path.read_text(encoding="utf-8"))
    figures = [
        report.save_confusion_matrix(out_dir / "confusion.svg", eval_dict["confusion"],
                                     eval_dict["labels"]),
        report.save_metric_bars(out_dir / "metrics.svg", eval_dict),
    ]
    notes = {}
    cv_path = artifacts_dir / "cv_scores.json"
    if cv_path.exists():
        cv = json.loads(cv_path.read_text(encoding="utf-8"))
        notes["model"] = cv.get("model")
        notes["evaluation"] = cv.get("method")
        if "mean_accuracy" in cv:
            notes["cv mean accuracy"] = f"{cv['mean_accuracy']:.4f}"
    for extra in ("distribution_temperature.svg", "distribution_humidity.svg"):
        candidate = artifacts_dir / "analysis" / extra
        if candidate.exists():
            target = out_dir / extra
            if candidate.resolve() != target.resolve():
                target.write_bytes(candidate.read_bytes())
            figures.append(target)
    html_path = report.render_html(out_dir / "report.html", eval_dict,
                                   figures, notes=notes)
    return figures + [html_path]


def run_pipeline(cfg: PipelineConfig, input_dir, out_dir=None) -> Path:
    """Execute preprocess -> filter -> decompose -> analyze -> features ->
    train -> evaluate on every labeled CSV in input_dir."""
    return PipelineRun(cfg, input_dir, out_dir).run()


def analyze_series_dir(cfg: PipelineConfig, input_dir, out_dir) -> Path:
    """Standalone decompose + analysis over a directory of labeled CSVs."""
    run = PipelineRun(cfg, input_dir, out_dir)
    run.out_dir.mkdir(parents=True, exist_ok=True)
    run._stage_inputs()
    run.cleaned = run.series
    run._stage_decompose()
    run._stage_analyze()
    return run.out_dir
