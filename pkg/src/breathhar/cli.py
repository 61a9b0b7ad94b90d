"""Command-line interface.

Exit codes: 0 success, 2 configuration/validation failure, 3 runtime stage
failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, learn, pipeline, preprocess, report, stl, telemetry
from .domain import ActivityLabel, LabeledSeries, default_profiles
from .dsp import EnvelopeConfig, WaveletBankConfig, filter_chain
from .errors import BreathharError, ConfigurationError
from .synthgen import SynthConfig, inject_anomalies, synthesize_series

log = logging.getLogger(__name__)


def _parse_endpoint(text: str) -> tuple:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigurationError(f"endpoint must be host:port, got {text!r}")
    return host, int(port)


def _parse_activities(text: str) -> list:
    return [ActivityLabel.from_name(part) for part in text.split(",") if part.strip()]


def cmd_synth(args) -> int:
    activities = _parse_activities(args.activities)
    if not activities:
        raise ConfigurationError("empty activity set")
    cfg = SynthConfig(
        duration_s=args.duration,
        sampling_hz=args.sampling_hz,
        outlier_rate=args.outlier_rate,
        gap_rate=args.gap_rate,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for label in activities:
        for subject in range(args.subjects):
            series = synthesize_series(label, cfg, subject=subject)
            if cfg.outlier_rate > 0 or cfg.gap_rate > 0:
                series, anomaly_log = inject_anomalies(series, cfg)
                log_path = out / f"{series.subject_id}_{label.name.lower()}_anomalies.json"
                log_path.write_text(json.dumps(anomaly_log), encoding="utf-8")
            path = out / f"{series.subject_id}_{label.name.lower()}.csv"
            telemetry.write_csv(series, path)
            print(path)
    return 0


def cmd_serve(args) -> int:
    series = telemetry.read_csv(args.input)
    link = telemetry.LinkConfig(drop_probability=args.drop,
                                max_jitter_ms=args.jitter_ms, seed=args.seed)
    summary = telemetry.serve_stream(series, link, _parse_endpoint(args.endpoint),
                                     time_scale=args.time_scale)
    print(json.dumps({"sent": summary.sent, "dropped": summary.dropped,
                      "delayed": summary.delayed,
                      "dropped_seqs": list(summary.dropped_seqs)}))
    return 0


def cmd_ingest(args) -> int:
    host, port = _parse_endpoint(args.listen)
    reports = telemetry.ingest((host, port), args.out, n_sessions=args.sessions,
                               timeout=args.timeout)
    print(json.dumps([
        {"device_id": r.device_id, "received": r.received,
         "parse_errors": r.parse_errors, "gaps_detected": list(r.gaps_detected),
         "out_path": r.out_path}
        for r in reports
    ], indent=2))
    return 0


def cmd_preprocess(args) -> int:
    src = Path(args.input)
    paths = sorted(src.glob("*.csv")) if src.is_dir() else [src]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tol = preprocess.Tolerance(args.delta_temp, args.delta_hum)
    profiles = default_profiles()
    reports = {}
    for path in paths:
        series = telemetry.read_csv(path)
        label = series.label
        if label is None:
            if args.activity is None:
                raise ConfigurationError(
                    f"{path} carries no activity label; pass --activity"
                )
            label = ActivityLabel.from_name(args.activity)
            series = LabeledSeries(
                timestamps=series.timestamps, temperature=series.temperature,
                humidity=series.humidity, aqi_raw=series.aqi_raw, label=label,
                sampling_hz=series.sampling_hz, subject_id=series.subject_id,
                device_id=series.device_id,
            )
        if args.bounds == "table4":
            bounds = preprocess.table4_bounds()[label]
        else:
            bounds = preprocess.bounds_from_profile(profiles[label], tol)
        cleaned, rep = preprocess.clean_series(series, bounds, target_hz=args.target_hz)
        out_path = out / path.name
        telemetry.write_csv(cleaned, out_path)
        reports[path.name] = rep.to_dict()
        print(out_path)
    report_path = out / "cleaning_report.json"
    report_path.write_text(json.dumps(reports, indent=2), encoding="utf-8")
    print(report_path)
    return 0


def cmd_filter(args) -> int:
    series = telemetry.read_csv(args.input)
    bank = WaveletBankConfig(n_scales=args.scales, f_low_hz=args.band_low,
                             f_high_hz=args.band_high, sampling_hz=series.sampling_hz)
    env_cfg = EnvelopeConfig(max_breath_rate_hz=args.max_breath_rate,
                             cutoff_multiplier=args.cutoff_multiplier)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    for channel in ("temperature", "humidity"):
        values = getattr(series, channel)
        centered = values - values.mean()
        filtered, response, env = filter_chain(centered, series.sampling_hz,
                                               args.prefilter_cutoff, bank, env_cfg)
        csv_path = out / f"{stem}_{channel}.csv"
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("timestamp_s,observed,filtered,bank_response,envelope\n")
            for i in range(len(series)):
                fh.write(telemetry.csv_row((series.timestamps[i], values[i],
                                            filtered[i], response[i], env[i])) + "\n")
        svg_path = report.save_line_plot(
            out / f"{stem}_{channel}.svg", series.timestamps,
            {"observed": values, "filtered": filtered + values.mean(),
             "bank response": response, "envelope": env},
            title=f"{stem} {channel}", xlabel="time (s)", ylabel=channel,
        )
        print(csv_path)
        print(svg_path)
    return 0


def cmd_decompose(args) -> int:
    series = telemetry.read_csv(args.input)
    if args.period is not None:
        period = args.period
    elif series.label is not None:
        profile = default_profiles()[series.label]
        period = max(2, int(round(series.sampling_hz * profile.breath_period_s)))
    else:
        raise ConfigurationError("unlabeled series: pass --period")
    cfg = stl.StlConfig(period_samples=period, seasonal_window=args.seasonal_window,
                        trend_window=args.trend_window, inner_iters=args.inner_iters,
                        robust_iters=args.robust_iters)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    for channel in ("temperature", "humidity"):
        values = getattr(series, channel)
        decomp = stl.stl_decompose(values, cfg)
        csv_path = out / f"{stem}_{channel}.csv"
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("observed,trend,seasonal,residual\n")
            for i in range(len(values)):
                fh.write(telemetry.csv_row((values[i], decomp.trend[i],
                                            decomp.seasonal[i], decomp.residual[i])) + "\n")
        svg_path = report.save_line_plot(
            out / f"{stem}_{channel}.svg", series.timestamps,
            {"observed": values, "trend": decomp.trend,
             "seasonal": decomp.seasonal, "residual": decomp.residual},
            title=f"STL {stem} {channel}", xlabel="time (s)", ylabel=channel,
        )
        print(csv_path)
        print(svg_path)
    return 0


def cmd_analyze(args) -> int:
    overrides = {}
    if args.sampling_hz is not None:
        overrides["sampling_hz"] = args.sampling_hz
    cfg = pipeline.PipelineConfig.from_overrides(overrides)
    out = pipeline.analyze_series_dir(cfg, args.input, args.out)
    print(out)
    return 0


def _model_params_from_args(args) -> dict:
    kind = pipeline.MODEL_KIND_ALIASES[args.model]
    if kind == "knn":
        return {"k": args.k}
    params = {"criterion": args.criterion,
              "max_depth": None if args.max_depth < 0 else args.max_depth,
              "min_split": args.min_split}
    if kind == "random_forest":
        params["n_trees"] = args.n_trees
    return params


def cmd_train(args) -> int:
    items = pipeline.read_features_csv(args.features)
    kind = pipeline.MODEL_KIND_ALIASES[args.model]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = _model_params_from_args(args)
    result = {"model": kind, "seed": args.seed}
    if args.grid:
        grid = json.loads(Path(args.grid).read_text(encoding="utf-8"))
        if not isinstance(grid, dict):
            raise ConfigurationError(f"{args.grid}: grid file must hold a JSON object")
        best, table = learn.grid_search(items, kind, grid, folds=args.folds,
                                        seed=args.seed)
        params.update(best)
        result["grid"] = {"best_params": best, "table": table}
    mean_acc, fold_accs = learn.cross_val_accuracy(kind, params, items,
                                                   folds=args.folds, seed=args.seed)
    result["params"] = params
    result["cv"] = {"folds": args.folds, "mean_accuracy": mean_acc,
                    "fold_accuracies": fold_accs}
    model = learn.fit_model(kind, items, params, seed=args.seed)
    model_path = out / "model.json"
    learn.save_model(model, model_path)
    scores_path = out / "train_scores.json"
    scores_path.write_text(json.dumps(result, indent=2), encoding="utf-8")
    print(model_path)
    print(scores_path)
    print(f"cv mean accuracy: {mean_acc:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    items = pipeline.read_features_csv(args.features)
    model = learn.load_model(args.model_file)
    X, y = learn.features_to_matrix(items)
    predictions = learn.predict_many(model, X)
    confusion = learn.confusion_from_labels(y, predictions)
    labels = [lab.display_name for lab in ActivityLabel]
    eval_report = learn.evaluate(confusion, labels=labels,
                                 method=f"holdout-file:{Path(args.features).name}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    eval_path = out / "eval_report.json"
    eval_path.write_text(json.dumps(eval_report.to_dict(), indent=2), encoding="utf-8")
    pipeline.write_confusion_csv(confusion, labels, out / "confusion.csv")
    print(eval_path)
    print(out / "confusion.csv")
    print(f"accuracy: {eval_report.accuracy:.4f}")
    return 0


def cmd_report(args) -> int:
    out_dir = Path(args.out) if args.out else Path(args.artifacts)
    paths = pipeline.render_report(args.artifacts, out_dir)
    for path in paths:
        print(path)
    return 0


def cmd_run(args) -> int:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if args.config:
        cfg = pipeline.PipelineConfig.from_file(args.config, overrides=overrides)
    else:
        cfg = pipeline.PipelineConfig.from_overrides(overrides)
    out = pipeline.run_pipeline(cfg, args.input, args.out)
    print(out)
    return 0


def cmd_init_config(args) -> int:
    pipeline.write_default_config(args.out)
    print(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="breathhar",
        description="Breath-driven activity recognition pipeline",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate labeled synthetic sessions")
    p.add_argument("--out", required=True)
    p.add_argument("--duration", type=float, default=1800.0)
    p.add_argument("--sampling-hz", type=float, default=1.0)
    p.add_argument("--subjects", type=int, default=1)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--activities", default="running,walking,sitting,sleeping")
    p.add_argument("--outlier-rate", type=float, default=0.0)
    p.add_argument("--gap-rate", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("serve", help="stream a CSV session over TCP as NDJSON")
    p.add_argument("--input", required=True)
    p.add_argument("--endpoint", required=True, help="host:port")
    p.add_argument("--drop", type=float, default=0.0)
    p.add_argument("--jitter-ms", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--time-scale", type=float, default=0.0,
                   help="pacing acceleration; 0 streams at full speed")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("ingest", help="log NDJSON streams to CSV")
    p.add_argument("--listen", required=True, help="host:port")
    p.add_argument("--out", required=True)
    p.add_argument("--sessions", type=int, default=1)
    p.add_argument("--timeout", type=float, default=60.0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("preprocess", help="outlier removal, alignment, imputation")
    p.add_argument("--input", required=True, help="CSV file or directory")
    p.add_argument("--out", required=True)
    p.add_argument("--bounds", choices=["table4", "recompute"], default="table4")
    p.add_argument("--delta-temp", type=float, default=0.3)
    p.add_argument("--delta-hum", type=float, default=1.1)
    p.add_argument("--target-hz", type=float, default=None)
    p.add_argument("--activity", default=None,
                   help="label for unlabeled input streams")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("filter", help="low-pass + wavelet bank + envelope")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--prefilter-cutoff", type=float, default=0.45)
    p.add_argument("--band-low", type=float, default=0.1)
    p.add_argument("--band-high", type=float, default=0.45)
    p.add_argument("--scales", type=int, default=10)
    p.add_argument("--max-breath-rate", type=float, default=0.3)
    p.add_argument("--cutoff-multiplier", type=float, default=1.5)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("decompose", help="STL decomposition per channel")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--period", type=int, default=None)
    p.add_argument("--seasonal-window", type=int, default=7)
    p.add_argument("--trend-window", type=int, default=None)
    p.add_argument("--inner-iters", type=int, default=2)
    p.add_argument("--robust-iters", type=int, default=1)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("analyze", help="peaks, correlation matrix, distributions")
    p.add_argument("--input", required=True, help="directory of labeled CSVs")
    p.add_argument("--out", required=True)
    p.add_argument("--sampling-hz", type=float, default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="fit a classifier on extracted features")
    p.add_argument("--features", required=True)
    p.add_argument("--model", choices=sorted(pipeline.MODEL_KIND_ALIASES), default="knn")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", default=None, help="JSON file: param -> candidates")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--criterion", choices=["entropy", "gini"], default="entropy")
    p.add_argument("--max-depth", type=int, default=-1)
    p.add_argument("--min-split", type=int, default=2)
    p.add_argument("--n-trees", type=int, default=100)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a saved model on features")
    p.add_argument("--features", required=True)
    p.add_argument("--model-file", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render the HTML/SVG summary")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="full pipeline on a directory of sessions")
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("init-config", help="write a documented default config file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_config)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except BreathharError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
