"""Command-line pipeline: simulate -> process -> extract -> cohort.

Exit codes are a stable contract: 0 success, 2 input/format error,
3 invalid configuration or physics, 4 insufficient data.
"""
from __future__ import annotations

import argparse
import glob
import json
import math
import os
import sys
import time

import numpy as np

from . import breathhold, cohort, fileio, synth
from .errors import (
    AnnotationOutOfRange,
    ConfigError,
    FormatError,
    InsufficientData,
    InvalidPhysics,
    InvalidScript,
    ScosError,
)
from .trace import AcquisitionConfig, build_trace, smooth_trace

EXIT_OK = 0
EXIT_FORMAT = 2
EXIT_CONFIG = 3
EXIT_DATA = 4

#: Defaults for `scoskit simulate`; every key can be overridden from the
#: flat key=value config file.
SIM_DEFAULTS = {
    "mode": "session",          # "session" or "constant"
    "fps": "60",
    "exposure_s": "0.01",
    "width": "256",
    "height": "256",
    "bit_depth": "12",
    "gain_e_per_adu": "2.0",
    "read_noise_e": "2.5",
    "dark_offset_adu": "32",
    "tau_c_s": "0.001",
    "beta": "1.0",
    "speckle_px": "1.0",
    "mean_e": "600",
    "duration_s": "180",
    "t_start_s": "60",
    "t_bh_s": "35",
    "flow_amplitude": "0.44",
    "volume_amplitude": "0.20",
    "hr_rest_bpm": "68",
    "hr_peak_bpm": "84",
    "pulse_mod": "0.10",
    "volume_pulse_mod": "0.03",
    "substep_mode": "matched",
    "workers": "2",
}


def _coerce(settings: dict[str, str], key: str, kind):
    try:
        return kind(settings[key])
    except (ValueError, TypeError):
        raise ConfigError(f"field {key!r}: cannot parse {settings[key]!r}") from None


def _load_sim_settings(config_path: str | None) -> dict[str, str]:
    settings = dict(SIM_DEFAULTS)
    if config_path is not None:
        try:
            with open(config_path) as fh:
                text = fh.read()
        except OSError as exc:
            raise FormatError(f"cannot read config: {exc}") from None
        parsed = fileio.parse_config_text(text, source=config_path)
        unknown = set(parsed) - set(SIM_DEFAULTS)
        if unknown:
            raise ConfigError(f"field {sorted(unknown)[0]!r}: unknown configuration key")
        settings.update(parsed)
    return settings


def _acquisition_from_settings(settings: dict[str, str]) -> AcquisitionConfig:
    return AcquisitionConfig(
        fps=_coerce(settings, "fps", float),
        bit_depth=_coerce(settings, "bit_depth", int),
        gain=_coerce(settings, "gain_e_per_adu", float),
        read_noise=_coerce(settings, "read_noise_e", float),
        dark_offset=_coerce(settings, "dark_offset_adu", float),
        exposure=_coerce(settings, "exposure_s", float),
        roi_width=_coerce(settings, "width", int),
        roi_height=_coerce(settings, "height", int),
    )


def cmd_simulate(args: argparse.Namespace) -> int:
    settings = _load_sim_settings(args.config)
    config = _acquisition_from_settings(settings)
    physics = synth.SpecklePhysics(
        tau_c=_coerce(settings, "tau_c_s", float),
        beta=_coerce(settings, "beta", float),
        speckle_px=_coerce(settings, "speckle_px", float),
        mean_e=_coerce(settings, "mean_e", float),
    )
    mode = settings["mode"]
    substep_mode = settings["substep_mode"]
    workers = _coerce(settings, "workers", int)
    duration = _coerce(settings, "duration_s", float)
    n_frames = int(round(duration * config.fps))
    truth_path = args.output + ".truth.json"

    t0 = time.perf_counter()
    if mode == "constant":
        stream = synth.generate_speckle_sequence(
            physics, config, n_frames, args.seed,
            substep_mode=substep_mode, workers=workers,
        )
        n = fileio.write_frame_stream(stream, args.output)
        doc = {
            "schema": "scoskit.ground_truth_constant/1",
            "seed": args.seed,
            "substep_mode": substep_mode,
            "physics": {
                "tau_c": physics.tau_c, "beta": physics.beta,
                "speckle_px": physics.speckle_px, "mean_e": physics.mean_e,
            },
            "expected_k2": synth.expected_contrast(physics.tau_c, config.exposure, physics.beta),
            "expected_mean_adu": physics.mean_e / config.gain + config.dark_offset,
        }
        with open(truth_path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")
    elif mode == "session":
        script = synth.standard_session_script(
            duration=duration,
            t_start=_coerce(settings, "t_start_s", float),
            t_bh=_coerce(settings, "t_bh_s", float),
            flow_amplitude=_coerce(settings, "flow_amplitude", float),
            volume_amplitude=_coerce(settings, "volume_amplitude", float),
            hr_rest=_coerce(settings, "hr_rest_bpm", float),
            hr_peak=_coerce(settings, "hr_peak_bpm", float),
            pulse_mod=_coerce(settings, "pulse_mod", float),
            volume_pulse_mod=_coerce(settings, "volume_pulse_mod", float),
        )
        stream, truth = synth.synthesize_breathhold_session(
            script, physics, config, args.seed,
            substep_mode=substep_mode, workers=workers,
        )
        n = fileio.write_frame_stream(stream, args.output)
        fileio.write_ground_truth(truth, truth_path)
    else:
        raise ConfigError(f"field 'mode': must be 'session' or 'constant', got {mode!r}")
    elapsed = time.perf_counter() - t0
    if not args.quiet:
        print(
            f"wrote {n} frames ({config.roi_width}x{config.roi_height}) to {args.output} "
            f"in {elapsed:.1f} s; ground truth in {truth_path}",
            file=sys.stderr,
        )
    return EXIT_OK


def _parse_window(text: str) -> tuple[float, float]:
    try:
        lo, hi = text.split(":")
        lo, hi = float(lo), float(hi)
    except ValueError:
        raise ConfigError(f"field 'window': expected 't0:t1', got {text!r}") from None
    if not hi > lo:
        raise ConfigError(f"field 'window': need t1 > t0, got {text!r}")
    return lo, hi


def cmd_process(args: argparse.Namespace) -> int:
    stream = fileio.open_frame_stream(args.input)
    window = _parse_window(args.baseline_window) if args.baseline_window else None
    t0 = time.perf_counter()
    trace = build_trace(stream, baseline_window=window)
    if not args.no_smooth:
        trace = smooth_trace(trace, args.smooth_seconds)
    elapsed = time.perf_counter() - t0
    fileio.write_trace_csv(trace, args.output)
    if not args.quiet:
        fps = len(trace) / elapsed if elapsed > 0 else float("inf")
        print(
            f"processed {len(trace)} frames in {elapsed:.2f} s ({fps:.0f} frames/s) -> {args.output}",
            file=sys.stderr,
        )
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    trace = fileio.read_trace_csv(args.trace)
    annotation = fileio.read_annotation(args.annotation)
    rest_window = _parse_window(args.rest_window) if args.rest_window else None
    features = breathhold.extract_feature_set(trace, annotation, rest_window=rest_window)
    fileio.write_feature_set(features, args.output)
    if not args.quiet:
        n_valid = sum(features.valid.values())
        print(
            f"extracted {n_valid}/{len(features.valid)} valid features for "
            f"{annotation.subject_id}/{annotation.session_id} -> {args.output}",
            file=sys.stderr,
        )
    return EXIT_OK


def cmd_cohort(args: argparse.Namespace) -> int:
    paths = sorted(glob.glob(os.path.join(args.features, "*.json")))
    if not paths:
        raise InsufficientData(f"no feature files found in {args.features}")
    feature_sets = [fileio.read_feature_set(p) for p in paths]
    records = cohort.build_subject_records(feature_sets)
    low, high, excluded = cohort.assign_groups(records)
    if len(low) < 2 or len(high) < 2:
        raise InsufficientData(
            f"need >= 2 subjects per group, got low={len(low)} higher={len(high)} "
            f"(excluded={len(excluded)})"
        )
    report = cohort.table_report(records)

    prefix = args.output_prefix
    with open(prefix + "_report.csv", "w") as fh:
        fh.write(report.to_csv_text())
    with open(prefix + "_report.txt", "w") as fh:
        fh.write(report.to_text())

    box_doc = {}
    for row in report.rows:
        if row.comparison is None:
            continue
        name = row.feature
        entry = {}
        for label, group in (("low_risk", low), ("higher_risk", high)):
            vals = [r.features[name] for r in group if name in r.features]
            try:
                s = cohort.boxplot_summary(vals)
                entry[label] = {
                    "median": s.median, "q1": s.q1, "q3": s.q3,
                    "whisker_low": s.whisker_low, "whisker_high": s.whisker_high,
                    "outliers": s.outliers, "n": s.n,
                }
            except ScosError as exc:
                entry[label] = {"error": str(exc), "n": len(vals)}
        box_doc[name] = entry
    with open(prefix + "_boxplots.json", "w") as fh:
        json.dump(box_doc, fh, sort_keys=True, indent=1)
        fh.write("\n")

    trend = cohort.subgroup_trend(records, args.trend_feature)
    trend_doc = {
        "feature": trend.feature,
        "spearman_rho": trend.spearman_rho,
        "buckets": [
            {
                "scores": list(b.scores),
                "n": b.n,
                "note": b.note,
                "summary": None
                if b.summary is None
                else {
                    "median": b.summary.median, "q1": b.summary.q1, "q3": b.summary.q3,
                    "whisker_low": b.summary.whisker_low,
                    "whisker_high": b.summary.whisker_high,
                    "outliers": b.summary.outliers, "n": b.summary.n,
                },
            }
            for b in trend.buckets
        ],
    }
    with open(prefix + "_trend.json", "w") as fh:
        json.dump(trend_doc, fh, sort_keys=True, indent=1)
        fh.write("\n")

    if not args.quiet:
        print(
            f"cohort: low={len(low)} higher={len(high)} excluded={len(excluded)}; "
            f"reports under {prefix}_*",
            file=sys.stderr,
        )
        print(report.to_text(), end="", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scoskit",
        description="Speckle-contrast breath-hold pipeline: simulate, process, extract, cohort.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a frame-stream file plus ground truth")
    p.add_argument("--config", help="flat key=value config file (defaults used when omitted)")
    p.add_argument("--output", required=True, help="output frame-stream path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("process", help="frame-stream file -> per-frame trace CSV")
    p.add_argument("input", help="frame-stream file")
    p.add_argument("--output", required=True, help="trace CSV path")
    p.add_argument("--no-smooth", action="store_true", help="skip the temporal averaging filter")
    p.add_argument("--smooth-seconds", type=float, default=2.0)
    p.add_argument("--baseline-window", help="baseline window as 't0:t1' seconds")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_process)

    p = sub.add_parser("extract", help="trace CSV + annotation JSON -> feature JSON")
    p.add_argument("--trace", required=True)
    p.add_argument("--annotation", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--rest-window", help="rest window as 't0:t1' (default: 0 to t_start)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("cohort", help="directory of feature JSON -> group comparison report")
    p.add_argument("--features", required=True, help="directory of feature JSON files")
    p.add_argument("--output-prefix", required=True)
    p.add_argument("--trend-feature", default="bp_ratio")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_cohort)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, AnnotationOutOfRange) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ConfigError, InvalidPhysics, InvalidScript) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InsufficientData as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
