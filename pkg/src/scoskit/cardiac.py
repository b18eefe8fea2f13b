"""Heart rate, pulse segmentation, and pulse-waveform morphology.

Heart rate comes from the magnitude spectrum of a sliding window over
the (unsmoothed) BFI trace; pulses are segmented at pre-systolic minima
and min-max normalized; the waveform landmarks are the systolic peak
(P1), the reflected-wave peak (P2), the dicrotic notch, and the
post-notch rebound (P3).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.signal import find_peaks

from .errors import InsufficientPulses, NoCardiacPeak, SegmentationFailed
from .trace import HemodynamicTrace

#: Cardiac search band in Hz (30 to 222 bpm): excludes respiration and the
#: first harmonics of plausible heart rates.
CARDIAC_BAND = (0.5, 3.7)

#: A spectral peak must exceed this multiple of the in-band median
#: magnitude to count as a cardiac peak.
PEAK_FACTOR = 3.0

#: Features with prominence below this fraction of the normalized pulse
#: amplitude are reported absent.
PEAK_PROMINENCE = 0.02

#: Dicrotic-notch search region, as a fraction of the pulse duration.
NOTCH_WINDOW = (0.30, 0.85)


@dataclass
class HeartRateTrace:
    """Sliding-window heart-rate estimates with confidences."""

    t: np.ndarray
    hr: np.ndarray
    confidence: np.ndarray
    window_seconds: float

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.hr) & (self.confidence > 0)

    def hr_at(self, t: np.ndarray | float) -> np.ndarray | float:
        """Heart rate interpolated at arbitrary times (valid samples only)."""
        ok = self.valid
        if not np.any(ok):
            raise NoCardiacPeak("no valid heart-rate samples to interpolate")
        return np.interp(t, self.t[ok], self.hr[ok])

    def mean_over(self, t0: float, t1: float) -> float:
        sel = self.valid & (self.t >= t0) & (self.t < t1)
        if not np.any(sel):
            raise NoCardiacPeak(f"no valid heart-rate samples in [{t0}, {t1})")
        return float(np.mean(self.hr[sel]))

    def max_over(self, t0: float, t1: float) -> float:
        sel = self.valid & (self.t >= t0) & (self.t < t1)
        if not np.any(sel):
            raise NoCardiacPeak(f"no valid heart-rate samples in [{t0}, {t1})")
        return float(np.max(self.hr[sel]))


@dataclass(frozen=True)
class PulsePoint:
    time: float
    height: float


@dataclass
class PulseSegment:
    """One cardiac cycle of the BFI trace, min-max normalized to [0, 1]."""

    t_onset: float
    t_end: float
    t: np.ndarray
    samples: np.ndarray
    p1: PulsePoint | None = None
    p2: PulsePoint | None = None
    p3: PulsePoint | None = None
    notch: PulsePoint | None = None

    @property
    def duration(self) -> float:
        return self.t_end - self.t_onset


@dataclass
class PeaksRatioSummary:
    """Mean P2/P1 height ratio at rest and during the breath-hold."""

    ratio_resting: float
    ratio_bh: float
    ratio_of_ratios: float
    n_pulses_resting: int
    n_pulses_bh: int


def _window_frequency(y: np.ndarray, fs: float, band: tuple[float, float]) -> tuple[float, float]:
    """Band-limited spectral peak frequency and its median-relative strength.

    Detrends, applies a Hann taper (keeps the parabolic bin interpolation
    honest), and refines the in-band argmax by fitting a parabola through
    the peak magnitude and its neighbors.
    """
    n = y.size
    idx = np.arange(n, dtype=np.float64)
    # remove mean and linear trend
    a, b = np.polyfit(idx, y, 1)
    resid = y - (a * idx + b)
    taper = np.hanning(n)
    mag = np.abs(np.fft.rfft(resid * taper))
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    in_band = (freqs >= band[0]) & (freqs <= band[1])
    if not np.any(in_band):
        return np.nan, 0.0
    band_idx = np.nonzero(in_band)[0]
    mags = mag[band_idx]
    k_rel = int(np.argmax(mags))
    k = band_idx[k_rel]
    peak = mags[k_rel]
    med = float(np.median(mags))
    if peak <= 0 or peak <= PEAK_FACTOR * med:
        return np.nan, 0.0
    # parabolic refinement using the full-spectrum neighbors
    if 0 < k < mag.size - 1:
        alpha, beta_, gamma = mag[k - 1], mag[k], mag[k + 1]
        denom = alpha - 2.0 * beta_ + gamma
        delta = 0.0 if denom == 0 else 0.5 * (alpha - gamma) / denom
        delta = float(np.clip(delta, -0.5, 0.5))
    else:
        delta = 0.0
    f = (k + delta) * fs / n
    f = float(np.clip(f, band[0], band[1]))
    confidence = max(0.0, min(1.0, 1.0 - PEAK_FACTOR * med / peak))
    return f, confidence


def heart_rate(
    trace: HemodynamicTrace,
    window_seconds: float = 20.0,
    step_seconds: float = 1.0,
    band: tuple[float, float] = CARDIAC_BAND,
) -> HeartRateTrace:
    """Sliding-window spectral heart-rate estimation over the BFI trace.

    Windows whose in-band spectral peak does not exceed three times the
    in-band median magnitude get confidence 0 and an invalid sample.
    Raises NoCardiacPeak only when *no* window yields a valid estimate.
    """
    fs = trace.fps
    if fs < 10:
        raise ValueError(f"heart_rate needs fps >= 10, got {fs:.2f}")
    n = len(trace)
    w = int(round(window_seconds * fs))
    if n < w:
        raise ValueError(f"trace shorter ({n} samples) than the {w}-sample window")
    step = max(1, int(round(step_seconds * fs)))

    y_full = np.where(trace.valid & np.isfinite(trace.bfi), trace.bfi, np.nan)
    times, rates, confs = [], [], []
    for s in range(0, n - w + 1, step):
        seg = y_full[s : s + w]
        center = trace.t[s + w // 2]
        good = np.isfinite(seg)
        if np.count_nonzero(good) < 0.8 * w:
            times.append(center)
            rates.append(np.nan)
            confs.append(0.0)
            continue
        if not np.all(good):
            gi = np.arange(w)
            seg = np.interp(gi, gi[good], seg[good])
        f, conf = _window_frequency(seg, fs, band)
        times.append(center)
        rates.append(60.0 * f if np.isfinite(f) else np.nan)
        confs.append(conf)

    out = HeartRateTrace(
        t=np.asarray(times),
        hr=np.asarray(rates),
        confidence=np.asarray(confs),
        window_seconds=window_seconds,
    )
    if not np.any(out.valid):
        raise NoCardiacPeak("no window produced a cardiac peak above threshold")
    return out


def segment_pulses(
    trace: HemodynamicTrace,
    hr_trace: HeartRateTrace,
    search_frac: float = 0.4,
) -> list[PulseSegment]:
    """Split the BFI trace into cardiac cycles at pre-systolic minima.

    Each onset is the minimum of the unsmoothed BFI inside a window of
    +/- ``search_frac`` around one locally-estimated cardiac period past
    the previous onset.  Spans without a valid heart-rate estimate are
    skipped.  Segments are min-max normalized.
    """
    ok = hr_trace.valid
    if not np.any(ok):
        raise SegmentationFailed("no valid heart-rate samples")
    half_w = hr_trace.window_seconds / 2.0
    span_lo = float(hr_trace.t[ok].min() - half_w)
    span_hi = float(hr_trace.t[ok].max() + half_w)

    t = trace.t
    y = np.where(trace.valid & np.isfinite(trace.bfi), trace.bfi, np.inf)
    fs = trace.fps

    def argmin_between(t0: float, t1: float) -> int | None:
        i0, i1 = np.searchsorted(t, [t0, t1])
        if i1 - i0 < 1:
            return None
        window = y[i0:i1]
        if not np.any(np.isfinite(window)):
            return None
        return i0 + int(np.argmin(window))

    segments: list[PulseSegment] = []
    period0 = 60.0 / float(hr_trace.hr_at(max(span_lo, t[0])))
    start = argmin_between(max(span_lo, t[0]), max(span_lo, t[0]) + period0 * (1 + search_frac))
    if start is None:
        raise SegmentationFailed("could not locate the first pulse onset")
    i_on = start
    while True:
        t_on = t[i_on]
        period = 60.0 / float(hr_trace.hr_at(t_on))
        lo = t_on + (1.0 - search_frac) * period
        hi = t_on + (1.0 + search_frac) * period
        if hi > min(span_hi, t[-1]):
            break
        i_next = argmin_between(lo, hi)
        if i_next is None or i_next <= i_on:
            # dead span: restart past it
            nxt = argmin_between(hi, hi + period * (1 + search_frac))
            if nxt is None or nxt <= i_on:
                break
            i_on = nxt
            continue
        seg_y = trace.bfi[i_on : i_next + 1]
        seg_t = t[i_on : i_next + 1]
        finite = np.isfinite(seg_y)
        if np.all(finite) and seg_y.max() > seg_y.min():
            norm = (seg_y - seg_y.min()) / (seg_y.max() - seg_y.min())
            segments.append(
                PulseSegment(
                    t_onset=float(t_on),
                    t_end=float(t[i_next]),
                    t=seg_t.copy(),
                    samples=norm,
                )
            )
        i_on = i_next
    return segments


def detect_peaks(
    segment: PulseSegment,
    prominence: float = PEAK_PROMINENCE,
    notch_window: tuple[float, float] = NOTCH_WINDOW,
) -> PulseSegment:
    """Locate P1/P2/P3 and the dicrotic notch on a normalized pulse.

    P1 is the first prominent maximum; the notch is the most prominent
    local minimum in the mid-diastolic part of the cycle
    (``notch_window`` as a fraction of the pulse duration, after P1);
    P2 is the tallest maximum between P1 and the notch; P3 the first
    maximum after the notch.  Features that do not exist are reported
    absent, never fabricated.
    """
    y = segment.samples
    if y.size < 10:
        raise ValueError(f"segment has {y.size} samples; need >= 10")
    tt = segment.t
    dur = segment.duration

    max_idx, max_props = find_peaks(y, prominence=prominence)
    min_idx, min_props = find_peaks(-y, prominence=prominence)

    p1 = p2 = p3 = notch = None
    if max_idx.size:
        i1 = int(max_idx[0])
        p1 = PulsePoint(float(tt[i1]), float(y[i1]))

        rel = (tt[min_idx] - segment.t_onset) / dur
        cand = (tt[min_idx] > p1.time) & (rel >= notch_window[0]) & (rel <= notch_window[1])
        if np.any(cand):
            which = np.nonzero(cand)[0]
            best = which[int(np.argmax(min_props["prominences"][which]))]
            i_n = int(min_idx[best])
            notch = PulsePoint(float(tt[i_n]), float(y[i_n]))

            between = max_idx[(tt[max_idx] > p1.time) & (tt[max_idx] < notch.time)]
            if between.size:
                i2 = int(between[np.argmax(y[between])])
                p2 = PulsePoint(float(tt[i2]), float(y[i2]))
            after = max_idx[tt[max_idx] > notch.time]
            if after.size:
                i3 = int(after[0])
                p3 = PulsePoint(float(tt[i3]), float(y[i3]))

    return replace(segment, p1=p1, p2=p2, p3=p3, notch=notch)


def peaks_ratio_summary(
    segments: Sequence[PulseSegment],
    t_start: float,
    t_bh: float,
    min_pulses: int = 5,
) -> PeaksRatioSummary:
    """Mean P2/P1 ratio over resting ([0, t_start)) and breath-hold pulses.

    Only pulses with both P1 and P2 detected count.  Raises
    InsufficientPulses when either window holds fewer than ``min_pulses``
    valid pulses; sessions failing this are excluded from peak analysis.
    """
    rest_ratios, bh_ratios = [], []
    for seg in segments:
        if seg.p1 is None or seg.p2 is None or seg.p1.height <= 0:
            continue
        ratio = seg.p2.height / seg.p1.height
        if seg.t_onset < t_start:
            rest_ratios.append(ratio)
        elif t_start <= seg.t_onset < t_start + t_bh:
            bh_ratios.append(ratio)
    if len(rest_ratios) < min_pulses:
        raise InsufficientPulses(
            f"resting window has {len(rest_ratios)} valid pulses < {min_pulses}"
        )
    if len(bh_ratios) < min_pulses:
        raise InsufficientPulses(
            f"breath-hold window has {len(bh_ratios)} valid pulses < {min_pulses}"
        )
    r_rest = float(np.mean(rest_ratios))
    r_bh = float(np.mean(bh_ratios))
    return PeaksRatioSummary(
        ratio_resting=r_rest,
        ratio_bh=r_bh,
        ratio_of_ratios=r_bh / r_rest,
        n_pulses_resting=len(rest_ratios),
        n_pulses_bh=len(bh_ratios),
    )
