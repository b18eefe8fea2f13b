import numpy as np
import pytest

from scoskit import cardiac
from scoskit.cardiac import (
    PulsePoint,
    PulseSegment,
    detect_peaks,
    heart_rate,
    peaks_ratio_summary,
    segment_pulses,
)
from scoskit.errors import InsufficientPulses, NoCardiacPeak
from scoskit.synth import pulse_waveform, template_extrema

from conftest import make_trace

FPS = 60.0


def pulse_trace(duration=60.0, bpm=72.0, depth=0.3, baseline=2.0, noise=0.0, seed=0,
                heights=(1.0, 0.84, 0.30)):
    t = np.arange(0.0, duration, 1.0 / FPS)
    phase = t * bpm / 60.0
    y = baseline * (1.0 + depth * pulse_waveform(phase, heights))
    if noise > 0:
        y = y + np.random.default_rng(seed).normal(0.0, noise * baseline, t.size)
    return make_trace(t, y)


class TestHeartRate:
    def test_pure_sinusoid_72(self):
        t = np.arange(0.0, 60.0, 1.0 / FPS)
        tr = make_trace(t, 2.0 + 0.4 * np.sin(2 * np.pi * 1.2 * t))
        hr = heart_rate(tr)
        assert np.any(hr.valid)
        assert np.all(np.abs(hr.hr[hr.valid] - 72.0) <= 0.5)

    def test_constant_trace_raises(self):
        t = np.arange(0.0, 40.0, 1.0 / FPS)
        with pytest.raises(NoCardiacPeak):
            heart_rate(make_trace(t, np.full(t.size, 3.0)))

    def test_respiration_tone_rejected(self):
        # equal-amplitude 0.25 Hz respiration sits below the cardiac band
        t = np.arange(0.0, 60.0, 1.0 / FPS)
        y = 2.0 + 0.3 * np.sin(2 * np.pi * 1.2 * t) + 0.3 * np.sin(2 * np.pi * 0.25 * t)
        hr = heart_rate(make_trace(t, y))
        assert np.all(np.abs(hr.hr[hr.valid] - 72.0) <= 0.5)

    def test_affine_invariance(self):
        t = np.arange(0.0, 50.0, 1.0 / FPS)
        rng = np.random.default_rng(2)
        y = 1.0 + 0.2 * np.sin(2 * np.pi * 1.1 * t) + rng.normal(0, 0.02, t.size)
        hr1 = heart_rate(make_trace(t, y))
        hr2 = heart_rate(make_trace(t, 3.5 * y + 11.0))
        assert np.allclose(hr1.hr[hr1.valid], hr2.hr[hr2.valid], rtol=1e-9)
        assert np.allclose(hr1.confidence, hr2.confidence, rtol=1e-9)

    def test_small_amplitude_still_accurate(self):
        # 5 percent pulsation amplitude with measurement noise
        t = np.arange(0.0, 60.0, 1.0 / FPS)
        rng = np.random.default_rng(5)
        y = 1.0 * (1.0 + 0.05 * np.sin(2 * np.pi * 1.2 * t)) + rng.normal(0, 0.01, t.size)
        hr = heart_rate(make_trace(t, y))
        good = hr.confidence > 0.5
        assert np.any(good)
        assert np.mean(np.abs(hr.hr[good] - 72.0)) <= 1.0

    def test_error_small_where_confident(self):
        # property: wherever confidence > 0.5 the absolute error stays
        # within 1 bpm, across noise levels
        t = np.arange(0.0, 60.0, 1.0 / FPS)
        rng = np.random.default_rng(31)
        for noise in (0.0, 0.02, 0.05, 0.1):
            y = 1.0 + 0.12 * np.sin(2 * np.pi * 66.0 / 60.0 * t) + rng.normal(0, noise, t.size)
            try:
                hr = heart_rate(make_trace(t, y))
            except NoCardiacPeak:
                continue
            good = hr.confidence > 0.5
            if np.any(good):
                assert np.mean(np.abs(hr.hr[good] - 66.0)) <= 1.0

    def test_pre_checks(self):
        t = np.arange(0.0, 5.0, 1.0 / FPS)
        with pytest.raises(ValueError):
            heart_rate(make_trace(t, np.ones(t.size)))  # shorter than window
        t2 = np.arange(0.0, 60.0, 0.25)  # 4 fps
        with pytest.raises(ValueError):
            heart_rate(make_trace(t2, np.ones(t2.size)))


class TestSegmentation:
    def test_segment_count_60s_72bpm(self):
        tr = pulse_trace(duration=60.0, bpm=72.0)
        hr = heart_rate(tr)
        segments = segment_pulses(tr, hr)
        assert 71 <= len(segments) + 1 <= 73  # 72 +/- 1 onset intervals

    def test_normalization_contract(self):
        tr = pulse_trace(duration=40.0)
        segments = segment_pulses(tr, heart_rate(tr))
        for seg in segments:
            assert seg.samples.min() == 0.0
            assert seg.samples.max() == 1.0

    def test_renormalization_idempotent(self):
        tr = pulse_trace(duration=40.0)
        seg = segment_pulses(tr, heart_rate(tr))[3]
        renorm = (seg.samples - seg.samples.min()) / (seg.samples.max() - seg.samples.min())
        assert np.array_equal(renorm, seg.samples)

    def test_onsets_close_to_template_feet(self):
        # template feet sit at integer cycles; 25 ms = 1.5 samples at 60 fps
        tr = pulse_trace(duration=60.0, bpm=72.0)
        segments = segment_pulses(tr, heart_rate(tr))
        period = 60.0 / 72.0
        phi = np.linspace(0, 1, 20001)
        foot_phase = phi[np.argmin(pulse_waveform(phi))] % 1.0
        for seg in segments:
            cycle = round((seg.t_onset - foot_phase * period) / period)
            truth = (cycle + foot_phase) * period
            assert abs(seg.t_onset - truth) <= 0.025

    def test_spans_without_heart_rate_skipped(self):
        tr = pulse_trace(duration=60.0)
        hr = heart_rate(tr)
        # kill the tail: no segments should start after the last valid span
        hr.confidence[hr.t > 30.0] = 0.0
        hr.hr[hr.t > 30.0] = np.nan
        segments = segment_pulses(tr, hr)
        assert segments
        assert max(s.t_onset for s in segments) <= 30.0 + hr.window_seconds / 2.0 + 1.0


def segment_from_values(values, t0=0.0, dt=1.0 / FPS):
    values = np.asarray(values, dtype=np.float64)
    t = t0 + np.arange(values.size) * dt
    return PulseSegment(t_onset=float(t[0]), t_end=float(t[-1]), t=t, samples=values)


class TestDetectPeaks:
    def test_template_heights_recovered(self):
        heights = (1.0, 0.8, 0.3)
        truth = template_extrema(heights, 0.18)
        phi = np.arange(50) / 50.0
        y = pulse_waveform(phi, heights)
        y = (y - y.min()) / (y.max() - y.min())
        seg = detect_peaks(segment_from_values(y))
        assert seg.p1 is not None and seg.p2 is not None and seg.p3 is not None
        assert seg.notch is not None
        assert seg.p1.height == pytest.approx(truth["p1"][1], abs=0.02)
        assert seg.p2.height == pytest.approx(truth["p2"][1], abs=0.02)
        assert seg.p3.height == pytest.approx(truth["p3"][1], abs=0.02)
        assert seg.notch.height == pytest.approx(truth["notch"][1], abs=0.02)
        assert seg.p1.time < seg.notch.time < seg.p3.time

    def test_monotone_triangle_single_peak(self):
        y = np.concatenate([np.linspace(0, 1, 12), np.linspace(1, 0, 24)[1:]])
        seg = detect_peaks(segment_from_values(y))
        assert seg.p1 is not None
        assert seg.p2 is None and seg.p3 is None and seg.notch is None

    def test_p2_higher_than_p1(self):
        # reflected wave above the systolic peak: ratio ~ 1.11
        heights = (0.9, 1.0, 0.3)
        truth = template_extrema(heights, 0.18)
        phi = np.arange(64) / 64.0
        y = pulse_waveform(phi, heights)
        y = (y - y.min()) / (y.max() - y.min())
        seg = detect_peaks(segment_from_values(y))
        ratio = seg.p2.height / seg.p1.height
        assert ratio == pytest.approx(truth["p2"][1] / truth["p1"][1], abs=0.02)
        assert ratio == pytest.approx(1.11, abs=0.03)

    def test_time_reversal_symmetric_pulse(self):
        idx = np.arange(40)
        y = np.exp(-0.5 * ((idx - 19.5) / 6.0) ** 2)
        y = (y - y.min()) / (y.max() - y.min())
        fwd = detect_peaks(segment_from_values(y))
        rev = detect_peaks(segment_from_values(y[::-1]))
        assert fwd.p1 is not None and rev.p1 is not None
        assert fwd.p1.height == pytest.approx(rev.p1.height, abs=1e-12)
        assert fwd.p2 is None and rev.p2 is None
        assert fwd.notch is None and rev.notch is None

    def test_too_short_segment(self):
        with pytest.raises(ValueError):
            detect_peaks(segment_from_values(np.linspace(0, 1, 5)))


def crafted_pulse(p1, p2, notch=0.1, p3=0.5, valley=None):
    """20-sample pulse with exact normalized landmark heights."""
    if valley is None:
        valley = min(p1, p2) - 0.14
    return np.array(
        [0.0, 0.3, 0.8, p1, 0.9 * p1, valley + 0.05, valley, valley + 0.02,
         0.7 * p2, 0.9 * p2, p2, 0.8 * p2, 0.5 * p2, notch + 0.1, notch,
         notch + 0.2, notch + 0.3, p3, 0.2, 0.0]
    )


class TestPeaksRatio:
    def make_segments(self, values, onsets):
        segs = []
        for t0 in onsets:
            segs.append(detect_peaks(segment_from_values(values, t0=t0)))
        return segs

    def test_identical_pulses_ratio(self):
        vals = crafted_pulse(1.0, 0.84)
        segs = self.make_segments(vals, np.arange(6) * 0.9)          # rest
        segs += self.make_segments(vals, 60.0 + np.arange(6) * 0.9)  # hold
        summary = peaks_ratio_summary(segs, t_start=60.0, t_bh=10.0)
        assert summary.ratio_resting == pytest.approx(0.84, abs=1e-12)
        assert summary.ratio_bh == pytest.approx(0.84, abs=1e-12)

    def test_ratio_of_ratios(self):
        rest = crafted_pulse(1.0, 0.84)
        hold = crafted_pulse(1.0 / 1.04, 1.0)
        segs = self.make_segments(rest, np.arange(6) * 0.9)
        segs += self.make_segments(hold, 60.0 + np.arange(6) * 0.9)
        summary = peaks_ratio_summary(segs, t_start=60.0, t_bh=10.0)
        assert summary.ratio_resting == pytest.approx(0.84, abs=1e-9)
        assert summary.ratio_bh == pytest.approx(1.04, abs=1e-9)
        assert summary.ratio_of_ratios == pytest.approx(1.04 / 0.84, abs=1e-9)
        assert summary.ratio_of_ratios == pytest.approx(1.238, abs=1e-3)

    def test_insufficient_pulses(self):
        vals = crafted_pulse(1.0, 0.84)
        segs = self.make_segments(vals, np.arange(4) * 0.9)          # only 4 at rest
        segs += self.make_segments(vals, 60.0 + np.arange(6) * 0.9)
        with pytest.raises(InsufficientPulses):
            peaks_ratio_summary(segs, t_start=60.0, t_bh=10.0)

    def test_pulses_without_p2_do_not_count(self):
        tri = np.concatenate([np.linspace(0, 1, 8), np.linspace(1, 0, 13)[1:]])
        segs = self.make_segments(tri, np.arange(6) * 0.9)
        segs += self.make_segments(tri, 60.0 + np.arange(6) * 0.9)
        with pytest.raises(InsufficientPulses):
            peaks_ratio_summary(segs, t_start=60.0, t_bh=10.0)
