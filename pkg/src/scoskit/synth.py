"""Synthetic dynamic-speckle streams with known ground truth.

The generator is the verification oracle for the whole pipeline: every
frame is produced from a complex circular-Gaussian field evolving by
first-order autoregression inside the exposure window, so the expected
spatial contrast follows the classic integrated-decorrelation curve

    K^2(x) = beta * (exp(-2x) - 1 + 2x) / (2 x^2),   x = exposure / tau_c,

which `expected_contrast` evaluates analytically.  Flow and volume
dynamics enter through per-frame decorrelation time and mean intensity;
the camera model adds shot noise, read noise, dark offset and
quantization.  Generation is deterministic per (seed, frame index): each
frame draws from its own child random stream, so frames can be produced
in parallel and written in order.

Sub-step budget.  A discrete average of M field samples cannot reach a
contrast below 1/M, and a plain ODE-style discretization with per-step
correlation exp(-dt/tau_c) needs M >> exposure/tau_c to track the
analytic curve, which is prohibitively slow for long sessions.  The
default "matched" mode instead picks M just above the information limit
and calibrates the per-step correlation so the discrete exposure average
reproduces the analytic contrast exactly (the calibration tends to
exp(-dt/tau_c) as M grows).  Mode "natural" keeps the textbook
exp(-dt/tau_c) correlation for discretization studies.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import InvalidPhysics, InvalidScript
from .trace import AcquisitionConfig, FrameStream, GeneratorFrameStream

_SQRT_HALF = np.float32(math.sqrt(0.5))


@dataclass(frozen=True)
class SpecklePhysics:
    """Speckle field parameters.

    tau_c : field decorrelation time in seconds (> 0, may be inf).
    beta : coherence factor, the x -> 0 contrast limit, in (0, 1].
    speckle_px : spatial correlation length of the field in pixels (>= 1).
    mean_e : mean detected photoelectrons per pixel per exposure (> 0).
    """

    tau_c: float = 1.0e-3
    beta: float = 1.0
    speckle_px: float = 1.0
    mean_e: float = 600.0

    def __post_init__(self) -> None:
        if not self.tau_c > 0:
            raise InvalidPhysics(f"tau_c must be > 0 s, got {self.tau_c}")
        if not 0 < self.beta <= 1:
            raise InvalidPhysics(f"beta must be in (0, 1], got {self.beta}")
        if not self.speckle_px >= 1:
            raise InvalidPhysics(f"speckle_px must be >= 1, got {self.speckle_px}")
        if not self.mean_e > 0:
            raise InvalidPhysics(f"mean_e must be > 0, got {self.mean_e}")


def expected_contrast(tau_c: float, exposure: float, beta: float = 1.0) -> float:
    """Analytic exposure-integrated speckle contrast.

    Evaluates beta * (exp(-2x) - 1 + 2x) / (2 x^2) with x = exposure/tau_c;
    the x -> 0 limit is beta.  This is the closed form of the double
    integral of the squared exponential field autocorrelation over the
    exposure window and serves as the oracle for pipeline closure tests.
    """
    if exposure <= 0:
        raise InvalidPhysics(f"exposure must be > 0, got {exposure}")
    if not tau_c > 0:
        raise InvalidPhysics(f"tau_c must be > 0, got {tau_c}")
    if math.isinf(tau_c):
        return beta
    x = exposure / tau_c
    if x < 1e-6:
        return beta * (1.0 - 2.0 * x / 3.0 + x * x / 3.0)
    return beta * (math.expm1(-2.0 * x) + 2.0 * x) / (2.0 * x * x)


# ---------------------------------------------------------------------------
# sub-step planning
# ---------------------------------------------------------------------------

def _discrete_contrast(n_sub: int, a: float) -> float:
    """Contrast of the average of n_sub field samples with step-to-step
    intensity correlation a (geometric): (1/M^2) * sum a^|i-j|."""
    m = n_sub
    if a <= 0:
        return 1.0 / m
    if a >= 1.0 - 1e-12:
        return 1.0
    s = m + 2.0 * (m * a / (1.0 - a) - a * (1.0 - a**m) / (1.0 - a) ** 2)
    return s / (m * m)


def _plan_substeps(
    x: float, mode: str, min_substeps: int, n_substeps: int | None = None
) -> tuple[int, float]:
    """Pick (n_sub, rho) for one exposure at x = exposure/tau_c.

    rho is the per-sub-step *field* correlation; intensity correlation is
    rho^2.  In matched mode rho solves the discrete-average contrast for
    the analytic target; in natural mode rho = exp(-x/n_sub).
    """
    if x == 0.0:
        return 1, 1.0
    target = expected_contrast(1.0, x, 1.0)  # contrast at this x, beta=1
    if mode == "natural":
        m = n_substeps if n_substeps is not None else max(min_substeps, math.ceil(5.0 * x))
        return m, math.exp(-x / m)
    if mode != "matched":
        raise ValueError(f"unknown substep mode {mode!r}")
    if n_substeps is not None:
        m = int(n_substeps)
    else:
        # Smallest budget that still brackets the target with ~3% headroom
        # above the independent-sample floor 1/M.
        m = max(min_substeps, math.ceil(1.0 / (0.97 * target)))
    if target >= 0.995:
        return m, math.exp(-x / m)
    lo, hi = 1e-15, 1.0 - 1e-12
    if _discrete_contrast(m, lo) >= target:
        return m, 0.0
    a = brentq(lambda av: _discrete_contrast(m, av) - target, lo, hi, xtol=1e-15, rtol=1e-14)
    return m, math.sqrt(a)


@lru_cache(maxsize=4096)
def _plan_substeps_cached(x_key: float, mode: str, min_substeps: int) -> tuple[int, float]:
    return _plan_substeps(x_key, mode, min_substeps)


# ---------------------------------------------------------------------------
# field synthesis
# ---------------------------------------------------------------------------

def _substream(seed: int, index: int) -> np.random.Generator:
    """Independent deterministic child stream for one frame."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.SFC64(ss))


def _gaussian_transfer(shape: tuple[int, int], speckle_px: float) -> np.ndarray | None:
    """Fourier transfer function imposing ~speckle_px field correlation."""
    if speckle_px <= 1.0:
        return None
    h, w = shape
    ky = np.fft.fftfreq(h) * 2.0 * np.pi
    kx = np.fft.fftfreq(w) * 2.0 * np.pi
    k2 = ky[:, None] ** 2 + kx[None, :] ** 2
    t = np.exp(-k2 * (speckle_px**2) / 8.0)
    t /= math.sqrt(float(np.mean(t * t)))
    return t.astype(np.float64)


def _white_pair(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    """(2, h, w) float32 components of a unit circular complex field."""
    return rng.standard_normal((2, *shape), dtype=np.float32) * _SQRT_HALF


def _filtered_pair(
    rng: np.random.Generator, shape: tuple[int, int], transfer: np.ndarray
) -> np.ndarray:
    z = rng.standard_normal((*shape, 2), dtype=np.float32).view(np.complex64)[..., 0]
    f = np.fft.ifft2(z * transfer, norm="ortho")
    out = np.empty((2, *shape), dtype=np.float32)
    out[0] = f.real
    out[1] = f.imag
    out *= _SQRT_HALF  # per-component variance 0.5, E|field|^2 = 1
    return out


def _integrated_intensity(
    rng: np.random.Generator,
    shape: tuple[int, int],
    n_sub: int,
    rho: float,
    beta: float,
    transfer: np.ndarray | None,
) -> np.ndarray:
    """Mean-1 float32 intensity image for one exposure."""
    draw = (
        (lambda: _white_pair(rng, shape))
        if transfer is None
        else (lambda: _filtered_pair(rng, shape, transfer))
    )
    fld = draw()
    acc = fld[0] * fld[0]
    acc += fld[1] * fld[1]
    if n_sub > 1 and rho < 1.0:
        r = np.float32(rho)
        sig = np.float32(math.sqrt(max(0.0, 1.0 - rho * rho)))
        for _ in range(n_sub - 1):
            innov = draw()
            fld *= r
            innov *= sig
            fld += innov
            acc += fld[0] * fld[0]
            acc += fld[1] * fld[1]
        acc /= np.float32(n_sub)
    if beta < 1.0:
        amp = math.sqrt(beta)
        acc *= np.float32(amp)
        acc += np.float32(1.0 - amp)
    return acc


def _camera_adu(
    rng: np.random.Generator, intensity_e: np.ndarray, config: AcquisitionConfig
) -> np.ndarray:
    """Photoelectron image -> quantized unsigned ADU frame."""
    if config.no_noise:
        analog = intensity_e / config.gain + config.dark_offset
    else:
        electrons = rng.poisson(intensity_e).astype(np.float64)
        if config.read_noise > 0:
            electrons += rng.normal(0.0, config.read_noise, size=intensity_e.shape)
        analog = electrons / config.gain + config.dark_offset
    np.rint(analog, out=analog)
    np.clip(analog, 0, config.adu_max, out=analog)
    return analog.astype(np.uint16)


# ---------------------------------------------------------------------------
# public generators
# ---------------------------------------------------------------------------

def generate_speckle_sequence(
    physics: SpecklePhysics,
    config: AcquisitionConfig,
    n_frames: int,
    seed: int,
    substep_mode: str = "matched",
    n_substeps: int | None = None,
    min_substeps: int = 8,
    workers: int = 2,
) -> FrameStream:
    """Constant-physics dynamic speckle stream.

    Each exposure is simulated by a sub-stepped autoregressive complex
    field (see module docstring), scaled to ``physics.mean_e``
    photoelectrons, and passed through the camera model.  Bit-identical
    output for identical arguments; frames are independent across the
    stream, matching exposure-dominated acquisition where inter-frame
    field correlation is negligible.
    """
    if n_frames < 1:
        raise InvalidPhysics(f"n_frames must be >= 1, got {n_frames}")
    shape = config.frame_shape
    transfer = _gaussian_transfer(shape, physics.speckle_px)
    static = math.isinf(physics.tau_c)
    if static:
        n_sub, rho = 1, 1.0
        frozen = _integrated_intensity(_substream(seed, 0), shape, 1, 1.0, physics.beta, transfer)
    else:
        x = config.exposure / physics.tau_c
        n_sub, rho = _plan_substeps(x, substep_mode, min_substeps, n_substeps)
        frozen = None

    def factory(i: int) -> np.ndarray:
        rng = _substream(seed, i + 1)
        if frozen is not None:
            intensity = frozen
        else:
            intensity = _integrated_intensity(rng, shape, n_sub, rho, physics.beta, transfer)
        return _camera_adu(rng, intensity * np.float32(physics.mean_e), config)

    return GeneratorFrameStream(factory, config, n_frames, workers=workers)


def generate_flat_sequence(
    mean_e: float,
    config: AcquisitionConfig,
    n_frames: int,
    seed: int,
    workers: int = 2,
) -> FrameStream:
    """Constant-intensity frames (no speckle), camera noise only.

    The residual adjusted contrast of such a stream must vanish, which
    pins the shot/read/quantization correction terms independently of
    any speckle statistics.
    """
    shape = config.frame_shape
    flat = np.full(shape, float(mean_e), dtype=np.float64)

    def factory(i: int) -> np.ndarray:
        rng = _substream(seed, i + 1)
        return _camera_adu(rng, flat, config)

    return GeneratorFrameStream(factory, config, n_frames, workers=workers)


def exposure_intensity_frames(
    physics: SpecklePhysics,
    config: AcquisitionConfig,
    n_frames: int,
    seed: int,
    substep_mode: str = "matched",
    n_substeps: int | None = None,
    min_substeps: int = 8,
) -> np.ndarray:
    """Pre-camera mean-1 intensity images, shape (n_frames, h, w).

    Exposes the raw field statistics (no shot/read noise, no
    quantization) for distribution-level tests such as the exponential
    single-sub-step histogram.
    """
    shape = config.frame_shape
    transfer = _gaussian_transfer(shape, physics.speckle_px)
    if math.isinf(physics.tau_c):
        n_sub, rho = 1, 1.0
    else:
        x = config.exposure / physics.tau_c
        n_sub, rho = _plan_substeps(x, substep_mode, min_substeps, n_substeps)
    out = np.empty((n_frames, *shape), dtype=np.float32)
    for i in range(n_frames):
        rng = _substream(seed, i + 1)
        out[i] = _integrated_intensity(rng, shape, n_sub, rho, physics.beta, transfer)
    return out


def calibrate_beta(
    physics: SpecklePhysics,
    config: AcquisitionConfig,
    seed: int = 0,
    n_frames: int = 16,
) -> float:
    """Measured static-limit spatial contrast for this physics/ROI.

    Spatial filtering (speckle_px > 1) correlates neighboring pixels and
    lowers the spatial contrast estimate below the nominal beta, so the
    effective value is measured on instantaneous (single sub-step) noise-
    free frames and recorded as ground truth rather than assumed.
    """
    frames = exposure_intensity_frames(
        physics, config, n_frames, seed, n_substeps=1, substep_mode="natural"
    )
    k2 = [float(f.var()) / float(f.mean()) ** 2 for f in frames.astype(np.float64)]
    return float(np.mean(k2))


# ---------------------------------------------------------------------------
# cardiac pulse template and session scripting
# ---------------------------------------------------------------------------

@lru_cache(maxsize=256)
def _pulse_spline(heights: tuple[float, float, float], notch: float) -> CubicSpline:
    p1, p2, p3 = heights
    lead = 0.45 * p1
    inter = max(notch, 0.60 * min(p1, p2))
    tail = max(0.45 * p3, notch * 0.8)
    phases = [0.0, 0.055, 0.13, 0.245, 0.36, 0.50, 0.62, 0.745, 0.87, 1.0]
    values = [0.0, lead, p1, inter, p2, notch, p3, tail, 0.06 * p1, 0.0]
    return CubicSpline(phases, values, bc_type="periodic")


def pulse_waveform(
    phase: np.ndarray,
    heights: tuple[float, float, float] = (1.0, 0.84, 0.30),
    notch: float = 0.18,
) -> np.ndarray:
    """Cardiac pulse template evaluated at the given phase (cycles).

    A periodic spline with three local maxima (systolic peak, reflected
    wave, post-notch rebound) separated by a dicrotic dip, with its foot
    at phase 0.  ``heights`` set the nominal maxima and ``notch`` the dip
    level; tests treat the numerically measured extrema of the evaluated
    template as ground truth.
    """
    spline = _pulse_spline(tuple(float(h) for h in heights), float(notch))
    return spline(np.mod(phase, 1.0))


def template_extrema(
    heights: tuple[float, float, float] = (1.0, 0.84, 0.30),
    notch: float = 0.18,
    n: int = 20001,
) -> dict:
    """Min-max normalized extrema of the pulse template on a dense grid."""
    phi = np.linspace(0.0, 1.0, n)
    y = pulse_waveform(phi, heights, notch)
    y = (y - y.min()) / (y.max() - y.min())
    interior = np.arange(1, n - 1)
    is_max = (y[interior] > y[interior - 1]) & (y[interior] >= y[interior + 1])
    is_min = (y[interior] < y[interior - 1]) & (y[interior] <= y[interior + 1])
    maxima = [(float(phi[i]), float(y[i])) for i in interior[is_max]]
    minima = [(float(phi[i]), float(y[i])) for i in interior[is_min]]
    out = {"maxima": maxima, "minima": minima}
    if maxima:
        out["p1"] = maxima[0]
        if len(maxima) > 1:
            out["p2"] = maxima[1]
        if len(maxima) > 2:
            out["p3"] = maxima[2]
        mid = [m for m in minima if max(maxima[0][0], 0.30) < m[0] < 0.85]
        if mid:
            out["notch"] = min(mid, key=lambda m: m[1])
    return out


def _rise_fall_envelope(
    t: np.ndarray, t_start: float, t_peak: float,
    amp: float, tau_rise: float, tau_fall: float,
) -> np.ndarray:
    """1 at rest, exact 1 + amp at t_peak, exponential relaxation after."""
    env = np.ones_like(t)
    if amp == 0.0:
        return env
    rising = (t >= t_start) & (t <= t_peak)
    span = max(t_peak - t_start, 1e-9)
    norm = -math.expm1(-span / tau_rise)
    env[rising] = 1.0 + amp * (-np.expm1(-(t[rising] - t_start) / tau_rise)) / norm
    after = t > t_peak
    env[after] = 1.0 + amp * np.exp(-(t[after] - t_peak) / tau_fall)
    return env


@dataclass(frozen=True)
class SessionScript:
    """Piecewise breath-hold protocol plus the modulation curves.

    The protocol is rest on [0, t_start), breath-hold on
    [t_start, t_start + t_bh), recovery to ``duration``.  ``flow_curve``
    is the relative BFI multiplier (cardiac pulsation times breath-hold
    envelope), ``volume_curve`` the relative BVI multiplier, ``hr_curve``
    the heart rate in bpm; all are callables over time in seconds.
    """

    duration: float
    t_start: float
    t_bh: float
    flow_curve: Callable[[np.ndarray], np.ndarray]
    volume_curve: Callable[[np.ndarray], np.ndarray]
    hr_curve: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.duration > 0:
            raise InvalidScript(f"duration must be > 0, got {self.duration}")
        if self.t_start < 30.0:
            raise InvalidScript(f"t_start must be >= 30 s (rest first), got {self.t_start}")
        if not 5.0 <= self.t_bh <= 120.0:
            raise InvalidScript(f"t_bh must be in [5, 120] s, got {self.t_bh}")
        if not self.t_start + self.t_bh < self.duration - 10.0:
            raise InvalidScript(
                f"breath-hold [{self.t_start}, {self.t_start + self.t_bh}] leaves "
                f"< 10 s recovery in a {self.duration} s session"
            )
        probe = np.linspace(0.0, self.duration, 4096)
        for name in ("flow_curve", "volume_curve"):
            vals = getattr(self, name)(probe)
            if np.min(vals) < 0.1:
                raise InvalidScript(f"{name} drops below 0.1 (min {np.min(vals):.3f})")


def standard_session_script(
    duration: float = 180.0,
    t_start: float = 60.0,
    t_bh: float = 35.0,
    flow_amplitude: float = 0.44,
    volume_amplitude: float = 0.20,
    hr_rest: float = 68.0,
    hr_peak: float = 84.0,
    pulse_mod: float = 0.10,
    volume_pulse_mod: float = 0.03,
    tau_rise: float = 12.0,
    tau_fall: float = 10.0,
    peak_delay: float = 3.0,
    pulse_heights_rest: tuple[float, float, float] = (1.0, 0.84, 0.30),
    pulse_heights_bh: tuple[float, float, float] = (1.0, 1.04, 0.35),
    pulse_notch: float = 0.18,
    grid_dt: float = 1.0e-3,
) -> SessionScript:
    """Build the default breath-hold session.

    Peak envelope responses land ``peak_delay`` seconds after the hold
    ends (the reactive overshoot outlives the retention) with exact
    maxima 1 + amplitude; the cardiac pulse template morphs between the
    rest and hold morphologies over the envelope.  Returned curves are
    dense-grid interpolants and deterministic.
    """
    t_peak = t_start + t_bh + peak_delay
    grid = np.arange(0.0, duration + grid_dt, grid_dt)

    env_f = _rise_fall_envelope(grid, t_start, t_peak, flow_amplitude, tau_rise, tau_fall)
    env_v = _rise_fall_envelope(grid, t_start, t_peak, volume_amplitude, tau_rise, tau_fall)
    hr_amp = hr_peak - hr_rest
    env_h = _rise_fall_envelope(grid, t_start, t_peak, 1.0, tau_rise, tau_fall)
    hr = hr_rest + hr_amp * (env_h - 1.0)

    phase = np.concatenate(([0.0], np.cumsum(0.5 * (hr[1:] + hr[:-1]) / 60.0 * grid_dt)))
    # morph weight follows the envelope shape: 0 at rest, 1 at the peak
    mu = np.clip(env_h - 1.0, 0.0, 1.0)
    levels = np.linspace(0.0, 1.0, 33)
    rest = np.asarray(pulse_heights_rest)
    bh = np.asarray(pulse_heights_bh)
    pulse = np.empty_like(grid)
    rel = np.empty_like(grid)
    for lv_lo, lv_hi in zip(levels[:-1], levels[1:]):
        sel = (mu >= lv_lo) & (mu <= lv_hi) if lv_hi == 1.0 else (mu >= lv_lo) & (mu < lv_hi)
        if not np.any(sel):
            continue
        m = 0.5 * (lv_lo + lv_hi)
        h = tuple((rest + m * (bh - rest)).tolist())
        shape = pulse_waveform(phase[sel], h, pulse_notch)
        mean_level = float(np.mean(pulse_waveform(np.linspace(0, 1, 2048, endpoint=False), h, pulse_notch)))
        pulse[sel] = shape
        rel[sel] = shape / mean_level - 1.0
    flow = env_f * (1.0 + pulse_mod * rel)

    vshape = np.cos(2.0 * np.pi * (phase - 0.18))
    volume = env_v * (1.0 + volume_pulse_mod * vshape)

    def interp(values: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
        def curve(t: np.ndarray) -> np.ndarray:
            return np.interp(np.asarray(t, dtype=np.float64), grid, values)

        return curve

    params = {
        "duration": duration,
        "t_start": t_start,
        "t_bh": t_bh,
        "flow_amplitude": flow_amplitude,
        "volume_amplitude": volume_amplitude,
        "hr_rest": hr_rest,
        "hr_peak": hr_peak,
        "pulse_mod": pulse_mod,
        "volume_pulse_mod": volume_pulse_mod,
        "tau_rise": tau_rise,
        "tau_fall": tau_fall,
        "peak_delay": peak_delay,
        "t_peak": t_peak,
        "pulse_heights_rest": list(pulse_heights_rest),
        "pulse_heights_bh": list(pulse_heights_bh),
        "pulse_notch": pulse_notch,
    }
    ext_rest = template_extrema(pulse_heights_rest, pulse_notch)
    ext_bh = template_extrema(pulse_heights_bh, pulse_notch)
    if "p1" in ext_rest and "p2" in ext_rest:
        params["peaks_ratio_rest_true"] = ext_rest["p2"][1] / ext_rest["p1"][1]
    if "p1" in ext_bh and "p2" in ext_bh:
        params["peaks_ratio_bh_true"] = ext_bh["p2"][1] / ext_bh["p1"][1]

    return SessionScript(
        duration=duration,
        t_start=t_start,
        t_bh=t_bh,
        flow_curve=interp(flow),
        volume_curve=interp(volume),
        hr_curve=interp(hr),
        params=params,
    )


# ---------------------------------------------------------------------------
# breath-hold session synthesis
# ---------------------------------------------------------------------------

@dataclass
class GroundTruth:
    """Exact per-frame curves and parameters behind a synthetic session."""

    seed: int
    substep_mode: str
    beta_effective: float
    physics: dict
    config: dict
    script: dict
    t: np.ndarray
    flow: np.ndarray
    volume: np.ndarray
    hr: np.ndarray
    tau_c: np.ndarray
    mean_e: np.ndarray
    n_substeps: np.ndarray
    expected_k2: np.ndarray
    expected_bfi_rel: np.ndarray
    expected_bvi: np.ndarray


def synthesize_breathhold_session(
    script: SessionScript,
    physics: SpecklePhysics,
    config: AcquisitionConfig,
    seed: int,
    substep_mode: str = "matched",
    min_substeps: int = 8,
    workers: int = 2,
) -> tuple[FrameStream, GroundTruth]:
    """Frame stream for a scripted session plus its exact ground truth.

    Flow enters through the per-frame decorrelation time
    tau_c(t) = tau_c / flow(t) (faster flow decorrelates faster, so the
    measured BFI tracks the flow curve after pipeline inversion) and
    volume through mean_e(t) = mean_e / volume(t) (more blood absorbs
    more light, so BVI tracks the volume curve).  The ground truth
    records the curves, the per-frame physics, and the analytic contrast
    and index values the pipeline should recover.
    """
    if math.isinf(physics.tau_c):
        raise InvalidPhysics("breath-hold sessions need finite tau_c")
    n_frames = int(round(script.duration * config.fps))
    if n_frames < 1:
        raise InvalidScript("session shorter than one frame")
    t = np.arange(n_frames) / config.fps
    flow = np.asarray(script.flow_curve(t), dtype=np.float64)
    volume = np.asarray(script.volume_curve(t), dtype=np.float64)
    hr = np.asarray(script.hr_curve(t), dtype=np.float64)
    if np.min(flow) <= 0 or np.min(volume) <= 0:
        raise InvalidScript("flow/volume curves must stay positive")

    tau_t = physics.tau_c / flow
    mean_e_t = physics.mean_e / volume
    x_t = config.exposure / tau_t

    plans = [
        _plan_substeps_cached(round(float(x), 6), substep_mode, min_substeps) for x in x_t
    ]
    n_sub = np.array([p[0] for p in plans], dtype=np.int64)
    rho = np.array([p[1] for p in plans], dtype=np.float64)

    shape = config.frame_shape
    transfer = _gaussian_transfer(shape, physics.speckle_px)
    beta_eff = (
        physics.beta
        if transfer is None
        else calibrate_beta(physics, config, seed=seed ^ 0x5CA1AB1E)
    )

    def factory(i: int) -> np.ndarray:
        rng = _substream(seed, i + 1)
        intensity = _integrated_intensity(
            rng, shape, int(n_sub[i]), float(rho[i]), physics.beta, transfer
        )
        return _camera_adu(rng, intensity * np.float32(mean_e_t[i]), config)

    stream = GeneratorFrameStream(factory, config, n_frames, workers=workers)

    k2 = np.array([expected_contrast(tc, config.exposure, beta_eff) for tc in tau_t])
    k2_base = expected_contrast(physics.tau_c, config.exposure, beta_eff)
    truth = GroundTruth(
        seed=int(seed),
        substep_mode=substep_mode,
        beta_effective=float(beta_eff),
        physics={
            "tau_c": physics.tau_c,
            "beta": physics.beta,
            "speckle_px": physics.speckle_px,
            "mean_e": physics.mean_e,
        },
        config={
            "fps": config.fps,
            "bit_depth": config.bit_depth,
            "gain": config.gain,
            "read_noise": config.read_noise,
            "dark_offset": config.dark_offset,
            "exposure": config.exposure,
            "roi_width": config.roi_width,
            "roi_height": config.roi_height,
            "no_noise": config.no_noise,
        },
        script=dict(script.params),
        t=t,
        flow=flow,
        volume=volume,
        hr=hr,
        tau_c=tau_t,
        mean_e=mean_e_t,
        n_substeps=n_sub,
        expected_k2=k2,
        expected_bfi_rel=k2_base / k2,
        expected_bvi=volume,
    )
    return stream, truth
