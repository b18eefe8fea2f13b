import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scoskit.errors import (
    BaselineMissing,
    ConfigError,
    ContrastUnderflow,
    DimensionMismatch,
    WindowTooShort,
    ZeroMeanFrame,
)
from scoskit.trace import (
    AcquisitionConfig,
    Frame,
    compute_baseline,
    compute_bfi,
    compute_bvi,
    compute_raw_contrast,
    correct_contrast,
    denormalize_trace,
    normalize_trace,
    smooth_trace,
)

from conftest import make_trace


def frame_of(samples, t=0.0):
    return Frame(np.asarray(samples, dtype=np.uint16), t)


class TestAcquisitionConfig:
    def test_defaults_valid(self):
        cfg = AcquisitionConfig()
        assert cfg.adu_max == 4095
        assert cfg.frame_shape == (256, 256)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(fps=0),
            dict(gain=0),
            dict(read_noise=-1),
            dict(dark_offset=-5),
            dict(exposure=0),
            dict(exposure=0.03, fps=60),  # exposure * fps > 1
            dict(roi_width=8),
            dict(bit_depth=20),
        ],
    )
    def test_rejects_bad_fields(self, kwargs):
        with pytest.raises(ConfigError):
            AcquisitionConfig(**kwargs)


class TestRawContrast:
    def test_constant_frame_is_zero(self):
        cfg = AcquisitionConfig(roi_width=16, roi_height=16, dark_offset=0.0)
        frame = frame_of(np.full((16, 16), 500))
        assert compute_raw_contrast(frame, cfg) == 0.0

    def test_half_zero_half_two(self):
        # sigma^2 = 1, mu = 1 -> contrast exactly 1
        cfg = AcquisitionConfig(roi_width=16, roi_height=16, dark_offset=0.0)
        samples = np.zeros((16, 16), dtype=np.uint16)
        samples[:, ::2] = 2
        assert compute_raw_contrast(frame_of(samples), cfg) == pytest.approx(1.0, abs=1e-12)

    def test_exponential_speckle_near_unity(self):
        # Monte-Carlo oracle: iid exponential intensities model fully
        # developed static speckle at one speckle per pixel.
        cfg = AcquisitionConfig(roi_width=512, roi_height=512, dark_offset=0.0, bit_depth=16)
        rng = np.random.default_rng(1234)
        samples = rng.exponential(1000.0, size=(512, 512))
        k = compute_raw_contrast(Frame(samples, 0.0), cfg)
        assert abs(k - 1.0) <= 0.02  # 3 sigma of the sample-contrast estimator

    def test_scale_invariance(self):
        cfg = AcquisitionConfig(roi_width=32, roi_height=32, dark_offset=0.0, bit_depth=16)
        rng = np.random.default_rng(7)
        base = rng.integers(10, 200, size=(32, 32)).astype(np.float64)
        k1 = compute_raw_contrast(Frame(base, 0.0), cfg)
        k3 = compute_raw_contrast(Frame(base * 3.0, 0.0), cfg)
        assert k3 == pytest.approx(k1, rel=1e-12)

    def test_dimension_mismatch(self):
        cfg = AcquisitionConfig(roi_width=64, roi_height=64)
        with pytest.raises(DimensionMismatch):
            compute_raw_contrast(frame_of(np.ones((32, 32))), cfg)

    def test_zero_mean_frame(self):
        cfg = AcquisitionConfig(roi_width=16, roi_height=16, dark_offset=100.0)
        with pytest.raises(ZeroMeanFrame):
            compute_raw_contrast(frame_of(np.full((16, 16), 50)), cfg)


class TestCorrectContrast:
    def test_identity_under_no_noise_flag(self):
        cfg = AcquisitionConfig(no_noise=True, read_noise=0.0)
        assert correct_contrast(0.30, 500.0, cfg) == 0.30

    def test_shot_term_only(self):
        # mu_e = 100 e-, no read noise, negligible quantization
        cfg = AcquisitionConfig(gain=1e-6, read_noise=0.0, dark_offset=0.0)
        k = correct_contrast(0.30, 100.0 / 1e-6, cfg)
        assert k == pytest.approx(0.30 - 1.0 / 100.0, abs=1e-9)

    def test_all_terms(self):
        cfg = AcquisitionConfig(gain=2.0, read_noise=5.0, dark_offset=32.0)
        mean_adu = 132.0  # mu_e = 200 e-
        expected = 0.2 - 1.0 / 200.0 - 25.0 / 200.0**2 - 4.0 / (12.0 * 200.0**2)
        assert correct_contrast(0.2, mean_adu, cfg) == pytest.approx(expected, rel=1e-12)

    @given(
        mu_e=st.floats(10.0, 1e6),
        read=st.floats(0.0, 10.0),
        k_raw=st.floats(0.05, 1.5),
    )
    @settings(max_examples=80, deadline=None)
    def test_monotone_in_noise_parameters(self, mu_e, read, k_raw):
        # more read noise never increases the corrected value, and the
        # correction never exceeds the raw value
        mean_adu = mu_e / 2.0 + 32.0
        cfg_lo = AcquisitionConfig(gain=2.0, read_noise=read, dark_offset=32.0)
        cfg_hi = AcquisitionConfig(gain=2.0, read_noise=read + 1.0, dark_offset=32.0)
        assert correct_contrast(k_raw, mean_adu, cfg_hi) <= correct_contrast(
            k_raw, mean_adu, cfg_lo
        )
        assert correct_contrast(k_raw, mean_adu, cfg_lo) < k_raw

    def test_may_go_negative_without_error(self):
        cfg = AcquisitionConfig(gain=2.0, read_noise=5.0, dark_offset=32.0)
        assert correct_contrast(0.0, 33.0, cfg) < 0.0


class TestIndexOps:
    def test_bfi_values(self):
        assert compute_bfi(0.25) == pytest.approx(4.0)
        assert compute_bfi(1.0) == pytest.approx(1.0)

    def test_bfi_underflow(self):
        with pytest.raises(ContrastUnderflow):
            compute_bfi(1e-7)

    def test_bfi_strictly_decreasing(self):
        ks = np.linspace(0.01, 1.5, 50)
        vals = [compute_bfi(k) for k in ks]
        assert np.all(np.diff(vals) < 0)

    def test_bvi_at_baseline(self):
        cfg = AcquisitionConfig(dark_offset=0.0)
        assert compute_bvi(300.0, 300.0, cfg) == pytest.approx(1.0)

    def test_bvi_inverse_proportionality(self):
        cfg = AcquisitionConfig(dark_offset=0.0)
        assert compute_bvi(150.0, 300.0, cfg) == pytest.approx(2.0)

    def test_bvi_strictly_decreasing_in_intensity(self):
        cfg = AcquisitionConfig(dark_offset=32.0)
        means = np.linspace(100, 1000, 40)
        vals = [compute_bvi(m, 500.0, cfg) for m in means]
        assert np.all(np.diff(vals) < 0)

    def test_bvi_zero_mean(self):
        cfg = AcquisitionConfig(dark_offset=32.0)
        with pytest.raises(ZeroMeanFrame):
            compute_bvi(31.0, 300.0, cfg)


class TestBaseline:
    def test_constant_trace(self):
        t = np.arange(0, 20, 1 / 60)
        tr = make_trace(t, np.full(t.size, 2.0))
        out = compute_baseline(tr, (0.0, 12.0))
        assert out.baseline_bfi == pytest.approx(2.0)
        assert np.allclose(out.bvi[out.valid], 1.0)

    def test_sinusoid_averages_out(self):
        # symmetric pulsation about 3.0 over an integer number of cycles
        t = np.arange(0, 10.0, 1 / 60)
        bfi = 3.0 + 0.5 * np.sin(2 * np.pi * 1.0 * t)
        tr = make_trace(t, bfi)
        out = compute_baseline(tr, (0.0, 10.0), min_seconds=10.0)
        assert out.baseline_bfi == pytest.approx(3.0, abs=1e-3)

    def test_window_too_short(self):
        t = np.arange(0, 20, 1 / 60)
        tr = make_trace(t, np.ones(t.size))
        with pytest.raises(WindowTooShort):
            compute_baseline(tr, (0.0, 5.0))

    def test_rebaseline_from_bvi_column_matches_direct(self):
        # When camera metadata is present the direct formula is used; a
        # metadata-free trace must land on the same answer through the
        # reciprocal-mean rescal e of the existing BVI column.
        t = np.arange(0, 30, 1 / 60)
        rng = np.random.default_rng(3)
        mean_adu = 300.0 + 20 * np.sin(2 * np.pi * 0.05 * t) + rng.normal(0, 2, t.size)
        tr = make_trace(t, np.ones(t.size), mean_adu=mean_adu)
        direct = compute_baseline(tr, (0.0, 10.0))
        # second pass: re-baseline a metadata-free copy over a later window
        window = (15.0, 28.0)
        direct2 = compute_baseline(direct, window)
        blind = direct.copy()
        blind.meta.pop("dark_offset")
        blind2 = compute_baseline(blind, window)
        assert np.allclose(blind2.bvi[blind2.valid], direct2.bvi[direct2.valid], rtol=1e-12)


class TestSmoothing:
    def test_constant_unchanged(self):
        t = np.arange(0, 30, 1 / 60)
        tr = make_trace(t, np.full(t.size, 1.7))
        out = smooth_trace(tr, 2.0)
        assert np.allclose(out.bfi, 1.7)

    def test_impulse_spread(self):
        # unit impulse at an interior sample, 60 fps, 2 s window: the
        # impulse contributes 1/120 to each window that covers it
        t = np.arange(0, 30, 1 / 60)
        y = np.zeros(t.size)
        k = 900
        y[k] = 1.0
        tr = make_trace(t, y)
        out = smooth_trace(tr, 2.0)
        covered = np.abs(out.bfi - 1.0 / 120.0) < 1e-12
        assert covered.sum() == 120
        assert np.all(np.isclose(out.bfi[~covered], 0.0))

    def test_white_noise_reduction(self):
        # Monte-Carlo oracle: std of a 120-sample average is sigma/sqrt(120)
        rng = np.random.default_rng(99)
        fps = 60.0
        t = np.arange(0, 40, 1 / fps)
        mid = slice(600, 1800)
        ratios = []
        for _ in range(300):
            y = rng.normal(0.0, 1.0, t.size)
            out = smooth_trace(make_trace(t, y), 2.0)
            ratios.append(np.std(out.bfi[mid]))
        measured = np.mean(ratios)
        assert measured == pytest.approx(1.0 / math.sqrt(120.0), rel=0.15)

    def test_mean_preserved_for_edge_constant_traces(self):
        # exact mean preservation holds when the trace is constant inside
        # the edge-affected zones (the shrunken-window weights then cancel)
        rng = np.random.default_rng(5)
        t = np.arange(0, 20, 1 / 60)
        y = rng.normal(2.0, 0.3, t.size)
        y[:120] = 2.0
        y[-120:] = 2.0
        out = smooth_trace(make_trace(t, y), 2.0)
        assert np.mean(out.bfi) == pytest.approx(np.mean(y), abs=1e-12)

    def test_invalid_samples_excluded_and_stay_invalid(self):
        t = np.arange(0, 20, 1 / 60)
        y = np.full(t.size, 3.0)
        valid = np.ones(t.size, bool)
        y[500] = np.nan
        valid[500] = False
        out = smooth_trace(make_trace(t, y, valid=valid), 2.0)
        assert np.isnan(out.bfi[500])
        ok = np.isfinite(out.bfi)
        assert np.allclose(out.bfi[ok], 3.0)

    def test_window_too_small(self):
        t = np.arange(0, 10, 1.0)
        tr = make_trace(t, np.ones(t.size))
        with pytest.raises(ValueError):
            smooth_trace(tr, 2.0)


class TestNormalize:
    def test_baseline_maps_to_one(self):
        t = np.arange(0, 20, 1 / 60)
        tr = make_trace(t, np.full(t.size, 2.5))
        based = compute_baseline(tr, (0.0, 10.0))
        norm = normalize_trace(based)
        assert np.allclose(norm.bfi[norm.valid], 1.0)

    def test_peak_ratio(self):
        t = np.arange(0, 30, 1 / 60)
        y = np.full(t.size, 2.0)
        y[1200:1300] = 2.88  # 1.44x baseline
        based = compute_baseline(make_trace(t, y), (0.0, 10.0))
        norm = normalize_trace(based)
        assert np.nanmax(norm.bfi) == pytest.approx(1.44)

    def test_round_trip_identity(self):
        t = np.arange(0, 20, 1 / 60)
        rng = np.random.default_rng(11)
        y = rng.uniform(1.0, 4.0, t.size)
        based = compute_baseline(make_trace(t, y), (0.0, 10.0))
        back = denormalize_trace(normalize_trace(based))
        assert np.allclose(back.bfi, based.bfi, rtol=1e-14)

    def test_missing_baseline(self):
        t = np.arange(0, 20, 1 / 60)
        with pytest.raises(BaselineMissing):
            normalize_trace(make_trace(t, np.ones(t.size)))
