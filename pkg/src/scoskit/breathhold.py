"""Per-session breath-hold features.

The breath-holding index is the peak relative change of an index during
the hold divided by the hold duration (percent per second); the
flow-to-volume ratio of the two indices tracks mean arterial pressure
changes.  Exponential time constants describe how fast the response
builds and relaxes.  All features carry validity flags so one bad
feature never aborts a session.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from . import cardiac
from .errors import (
    AnnotationOutOfRange,
    BaselineMissing,
    DegenerateResponse,
    FitDiverged,
    InsufficientPulses,
    NoCardiacPeak,
    SegmentationFailed,
    VolumeResponseTooSmall,
)
from .trace import HemodynamicTrace, compute_baseline, normalize_trace, smooth_trace

#: BHI_V below this (percent/s) makes the flow/volume ratio meaningless.
EPSILON_BHI = 0.01

#: The response keeps rising for a few seconds after the breath-hold
#: ends, so the peak search extends this far past it.
POST_WINDOW_SECONDS = 10.0

#: Band around the baseline (relative) that counts as "returned".
BASELINE_BAND = 0.02

#: Exponential fits below this quality are flagged invalid.
MIN_FIT_QUALITY = 0.5

#: Canonical per-session feature names, in report order.
FEATURE_NAMES = [
    "t_bh",
    "tau_growth",
    "tau_decay",
    "bfi_change",
    "bvi_change",
    "bhi_f",
    "bhi_v",
    "bp_ratio",
    "hr_rest",
    "hr_max",
    "peak_lag",
    "peaks_ratio_resting",
    "peaks_ratio_bh",
    "peaks_ratio_change",
    "t_max",
]


@dataclass(frozen=True)
class BreathHoldAnnotation:
    """Protocol annotation for one recording session."""

    t_start: float
    t_bh: float
    subject_id: str
    session_id: str
    risk_score: int | None = None
    sd_distance_cm: float | None = None

    def __post_init__(self) -> None:
        if self.t_start < 30.0:
            raise AnnotationOutOfRange(
                f"t_start must be >= 30 s (a rest period must precede), got {self.t_start}"
            )
        if not 5.0 <= self.t_bh <= 120.0:
            raise AnnotationOutOfRange(f"t_bh must be in [5, 120] s, got {self.t_bh}")
        if self.risk_score is not None and not 1 <= int(self.risk_score) <= 10:
            raise AnnotationOutOfRange(f"risk_score must be in 1..10, got {self.risk_score}")

    def check_span(self, trace: HemodynamicTrace) -> None:
        """Annotation must leave 10 s of recovery inside the trace."""
        t_end = float(trace.t[-1])
        if self.t_start >= t_end:
            raise AnnotationOutOfRange(
                f"t_start={self.t_start} s beyond trace end {t_end:.2f} s"
            )
        if self.t_start + self.t_bh >= t_end - 10.0 + 1.0 / max(trace.fps, 1.0):
            raise AnnotationOutOfRange(
                f"breath-hold ends at {self.t_start + self.t_bh} s; trace ends at "
                f"{t_end:.2f} s and 10 s of recovery are required"
            )


@dataclass
class BhiResult:
    """Breath-holding indices and peak geometry of one session."""

    bhi_f: float
    bhi_v: float
    bfi_change: float
    bvi_change: float
    t_max_bfi: float
    t_max_bvi: float
    peak_lag: float
    bhi_f_valid: bool
    bhi_v_valid: bool


@dataclass
class ResponseFit:
    """Exponential growth/decay description of one index response."""

    tau_growth: float
    tau_decay: float
    quality_growth: float
    quality_decay: float
    amplitude: float
    t_max: float
    growth_valid: bool
    decay_valid: bool


@dataclass
class FeatureSet:
    """All per-session scalar features with per-feature validity."""

    subject_id: str
    session_id: str
    risk_score: int | None
    values: dict[str, float] = field(default_factory=dict)
    valid: dict[str, bool] = field(default_factory=dict)
    intermediate: dict[str, float] = field(default_factory=dict)

    def set(self, name: str, value: float | None, ok: bool) -> None:
        self.values[name] = float("nan") if value is None else float(value)
        self.valid[name] = bool(ok)

    def get(self, name: str) -> tuple[float, bool]:
        return self.values.get(name, float("nan")), self.valid.get(name, False)


def _peak_in_window(
    trace: HemodynamicTrace, column: np.ndarray, t0: float, t1: float
) -> tuple[float, float]:
    sel = trace.window_mask(t0, t1) & np.isfinite(column)
    if not np.any(sel):
        raise AnnotationOutOfRange(f"no valid samples in [{t0:.2f}, {t1:.2f}] s")
    idx = np.nonzero(sel)[0]
    k = idx[int(np.argmax(column[idx]))]
    return float(column[k]), float(trace.t[k])


def compute_bhi(
    trace: HemodynamicTrace,
    annotation: BreathHoldAnnotation,
    post_window: float = POST_WINDOW_SECONDS,
) -> BhiResult:
    """Breath-holding indices from a smoothed, normalized trace.

    The peak search covers the hold plus ``post_window`` seconds, since
    the reactive response peaks shortly after the retention ends.  A
    peak below baseline is reported but flagged invalid (no response)
    rather than raising.
    """
    if not trace.normalized:
        raise BaselineMissing("compute_bhi needs a normalized trace")
    annotation.check_span(trace)
    t0 = annotation.t_start
    t1 = annotation.t_start + annotation.t_bh + post_window
    bfi_max, t_max_f = _peak_in_window(trace, trace.bfi, t0, t1)
    bvi_max, t_max_v = _peak_in_window(trace, trace.bvi, t0, t1)

    bfi_change = 100.0 * (bfi_max - 1.0)
    bvi_change = 100.0 * (bvi_max - 1.0)
    return BhiResult(
        bhi_f=bfi_change / annotation.t_bh,
        bhi_v=bvi_change / annotation.t_bh,
        bfi_change=bfi_change,
        bvi_change=bvi_change,
        t_max_bfi=t_max_f,
        t_max_bvi=t_max_v,
        peak_lag=t_max_v - t_max_f,
        bhi_f_valid=bfi_max >= 1.0,
        bhi_v_valid=bvi_max >= 1.0,
    )


def compute_bp_ratio(bhi_f: float, bhi_v: float, epsilon: float = EPSILON_BHI) -> float:
    """Flow-over-volume breath-holding index ratio (blood-pressure proxy)."""
    if not math.isfinite(bhi_f) or not math.isfinite(bhi_v):
        raise VolumeResponseTooSmall("BHI values must be finite")
    if bhi_v <= epsilon:
        raise VolumeResponseTooSmall(
            f"BHI_V={bhi_v:.4f} %/s <= epsilon={epsilon} %/s; ratio unstable"
        )
    return bhi_f / bhi_v


def fit_response(
    trace: HemodynamicTrace,
    annotation: BreathHoldAnnotation,
    which: str = "bfi",
    post_window: float = POST_WINDOW_SECONDS,
    baseline_band: float = BASELINE_BAND,
    min_quality: float = MIN_FIT_QUALITY,
) -> ResponseFit:
    """Least-squares exponential growth and decay constants.

    Fits ``1 + A exp((t - T_max)/tau)`` on [t_start, T_max] and
    ``1 + A exp(-(t - T_max)/tau)`` on [T_max, t_return], where t_return
    is the first time the trace re-enters the baseline +/- 2 percent band
    (trace end if it never does).  Peak-anchored so both branches are
    bounded and tau > 0.
    """
    if not trace.normalized:
        raise BaselineMissing("fit_response needs a normalized trace")
    annotation.check_span(trace)
    if which not in ("bfi", "bvi"):
        raise ValueError(f"which must be 'bfi' or 'bvi', got {which!r}")
    y_col = trace.bfi if which == "bfi" else trace.bvi

    t0 = annotation.t_start
    t1 = annotation.t_start + annotation.t_bh + post_window
    peak, t_max = _peak_in_window(trace, y_col, t0, t1)
    amp = peak - 1.0
    if amp < 0.05:
        raise DegenerateResponse(f"peak change {amp:.4f} < 0.05 of baseline")

    finite = np.isfinite(y_col)

    def fit_side(mask: np.ndarray, sign: float) -> tuple[float, float]:
        tt = trace.t[mask]
        yy = y_col[mask]
        if tt.size < 10:
            raise FitDiverged(f"only {tt.size} samples on one side of the peak")

        def model(ts, a, tau):
            return 1.0 + a * np.exp(sign * (ts - t_max) / tau)

        try:
            popt, _ = curve_fit(
                model,
                tt,
                yy,
                p0=(amp, max((tt[-1] - tt[0]) / 3.0, 1.0)),
                bounds=((1e-4, 0.05), (20.0, 900.0)),
                maxfev=2000,
            )
        except RuntimeError as exc:
            raise FitDiverged(str(exc)) from exc
        resid = yy - model(tt, *popt)
        ss_tot = float(np.sum((yy - yy.mean()) ** 2))
        quality = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 0.0
        return float(popt[1]), quality

    growth_mask = (trace.t >= t0) & (trace.t <= t_max) & finite
    tau_g, q_g = fit_side(growth_mask, +1.0)

    after = (trace.t > t_max) & finite
    returned = after & (np.abs(y_col - 1.0) <= baseline_band)
    t_return = float(trace.t[returned][0]) if np.any(returned) else float(trace.t[-1])
    decay_mask = (trace.t >= t_max) & (trace.t <= t_return) & finite
    tau_d, q_d = fit_side(decay_mask, -1.0)

    return ResponseFit(
        tau_growth=tau_g,
        tau_decay=tau_d,
        quality_growth=q_g,
        quality_decay=q_d,
        amplitude=amp,
        t_max=t_max,
        growth_valid=q_g >= min_quality,
        decay_valid=q_d >= min_quality,
    )


def extract_feature_set(
    trace: HemodynamicTrace,
    annotation: BreathHoldAnnotation,
    rest_window: tuple[float, float] | None = None,
    smooth_seconds: float = 2.0,
    post_window: float = POST_WINDOW_SECONDS,
) -> FeatureSet:
    """Assemble the full per-session feature set from a raw trace.

    The input trace should be unsmoothed: envelope features are computed
    on an internally smoothed, normalized copy while heart rate and pulse
    morphology need the pulsatile original.  Component failures are
    recorded as invalid features; the session is never aborted.
    """
    annotation.check_span(trace)
    if rest_window is None:
        rest_window = (float(trace.t[0]), float(annotation.t_start))

    based = compute_baseline(trace, rest_window)
    envelope = normalize_trace(smooth_trace(based, smooth_seconds))

    fs = FeatureSet(
        subject_id=annotation.subject_id,
        session_id=annotation.session_id,
        risk_score=annotation.risk_score,
    )
    fs.set("t_bh", annotation.t_bh, True)
    fs.intermediate["bfi_0"] = float(based.baseline_bfi)
    fs.intermediate["i_0_adu"] = float(based.baseline_intensity)
    fs.intermediate["rest_window"] = list(rest_window)

    try:
        bhi = compute_bhi(envelope, annotation, post_window)
        fs.set("bhi_f", bhi.bhi_f, bhi.bhi_f_valid)
        fs.set("bhi_v", bhi.bhi_v, bhi.bhi_v_valid)
        fs.set("bfi_change", bhi.bfi_change, bhi.bhi_f_valid)
        fs.set("bvi_change", bhi.bvi_change, bhi.bhi_v_valid)
        fs.set("peak_lag", bhi.peak_lag, bhi.bhi_f_valid and bhi.bhi_v_valid)
        fs.set("t_max", bhi.t_max_bfi - annotation.t_start, bhi.bhi_f_valid)
        fs.intermediate["bfi_max"] = 1.0 + bhi.bfi_change / 100.0
        fs.intermediate["bvi_max"] = 1.0 + bhi.bvi_change / 100.0
        fs.intermediate["t_max_bfi"] = bhi.t_max_bfi
        fs.intermediate["t_max_bvi"] = bhi.t_max_bvi
        t_max_abs = bhi.t_max_bfi
    except AnnotationOutOfRange:
        for name in ("bhi_f", "bhi_v", "bfi_change", "bvi_change", "peak_lag", "t_max"):
            fs.set(name, None, False)
        bhi = None
        t_max_abs = annotation.t_start + annotation.t_bh

    if bhi is not None and bhi.bhi_f_valid and bhi.bhi_v_valid:
        try:
            fs.set("bp_ratio", compute_bp_ratio(bhi.bhi_f, bhi.bhi_v), True)
        except VolumeResponseTooSmall:
            fs.set("bp_ratio", None, False)
    else:
        fs.set("bp_ratio", None, False)

    try:
        fit = fit_response(envelope, annotation, "bfi", post_window)
        fs.set("tau_growth", fit.tau_growth, fit.growth_valid)
        fs.set("tau_decay", fit.tau_decay, fit.decay_valid)
        fs.intermediate["fit_quality_growth"] = fit.quality_growth
        fs.intermediate["fit_quality_decay"] = fit.quality_decay
    except (DegenerateResponse, FitDiverged, AnnotationOutOfRange):
        fs.set("tau_growth", None, False)
        fs.set("tau_decay", None, False)

    hr_trace = None
    try:
        hr_trace = cardiac.heart_rate(trace)
        fs.set("hr_rest", hr_trace.mean_over(rest_window[0], rest_window[1]), True)
    except (NoCardiacPeak, ValueError):
        fs.set("hr_rest", None, False)
    if hr_trace is not None:
        try:
            fs.set(
                "hr_max",
                hr_trace.max_over(annotation.t_start, t_max_abs + 10.0),
                True,
            )
        except NoCardiacPeak:
            fs.set("hr_max", None, False)
    else:
        fs.set("hr_max", None, False)

    if hr_trace is not None:
        try:
            segments = cardiac.segment_pulses(trace, hr_trace)
            segments = [
                cardiac.detect_peaks(s) for s in segments if s.samples.size >= 10
            ]
            summary = cardiac.peaks_ratio_summary(
                segments, annotation.t_start, annotation.t_bh
            )
            fs.set("peaks_ratio_resting", summary.ratio_resting, True)
            fs.set("peaks_ratio_bh", summary.ratio_bh, True)
            fs.set("peaks_ratio_change", summary.ratio_of_ratios, True)
            fs.intermediate["n_pulses_resting"] = summary.n_pulses_resting
            fs.intermediate["n_pulses_bh"] = summary.n_pulses_bh
        except (InsufficientPulses, SegmentationFailed):
            fs.set("peaks_ratio_resting", None, False)
            fs.set("peaks_ratio_bh", None, False)
            fs.set("peaks_ratio_change", None, False)
    else:
        fs.set("peaks_ratio_resting", None, False)
        fs.set("peaks_ratio_bh", None, False)
        fs.set("peaks_ratio_change", None, False)

    return fs
