"""Frame streams to hemodynamic traces.

Per-frame spatial speckle statistics give the raw contrast K_raw^2 =
var(I)/mean(I)^2 over the region of interest.  Subtracting the camera
noise floor (shot + read + quantization, in photoelectron units) yields
the adjusted contrast, whose reciprocal is the blood flow index (BFI).
The blood volume index (BVI) is the baseline-to-current ratio of mean
detected intensity.  This module owns those conversions plus the
baseline, smoothing, and normalization conventions applied to the
resulting time series.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import (
    BaselineMissing,
    ConfigError,
    ContrastUnderflow,
    DimensionMismatch,
    WindowTooShort,
    ZeroMeanFrame,
)

#: Adjusted contrast at or below this is treated as an over-corrected or
#: saturated frame: the sample is flagged invalid instead of producing a
#: huge 1/K^2 spike.
EPSILON_CONTRAST = 1e-4

#: Default centered averaging window applied to BFI/BVI traces, seconds.
DEFAULT_SMOOTH_SECONDS = 2.0

#: Default rest window used for the baseline when none is given, seconds.
DEFAULT_BASELINE_SECONDS = 10.0


@dataclass(frozen=True)
class AcquisitionConfig:
    """Camera and acquisition parameters.

    Attributes
    ----------
    fps : frames per second (> 0).
    bit_depth : bits per sample; samples live in [0, 2**bit_depth).
    gain : photoelectrons per ADU (> 0).
    read_noise : read noise RMS in photoelectrons (>= 0).
    dark_offset : dark level in ADU (>= 0).
    exposure : exposure time per frame in seconds; exposure * fps <= 1.
    roi_width, roi_height : frame dimensions in pixels (>= 16).
    no_noise : when True the noise-correction terms are skipped and the
        synthetic camera model adds no shot/read noise.  Intended for
        closed-loop tests on noiseless synthetic data.
    """

    fps: float = 60.0
    bit_depth: int = 12
    gain: float = 2.0
    read_noise: float = 2.5
    dark_offset: float = 32.0
    exposure: float = 0.010
    roi_width: int = 256
    roi_height: int = 256
    no_noise: bool = False

    def __post_init__(self) -> None:
        if not self.fps > 0:
            raise ConfigError(f"fps must be > 0, got {self.fps}")
        if not (1 <= int(self.bit_depth) <= 16):
            raise ConfigError(f"bit_depth must be in [1, 16], got {self.bit_depth}")
        if not self.gain > 0:
            raise ConfigError(f"gain must be > 0 e-/ADU, got {self.gain}")
        if self.read_noise < 0:
            raise ConfigError(f"read_noise must be >= 0 e-, got {self.read_noise}")
        if self.dark_offset < 0:
            raise ConfigError(f"dark_offset must be >= 0 ADU, got {self.dark_offset}")
        if not 0 < self.exposure <= 1.0 / self.fps + 1e-12:
            raise ConfigError(
                f"exposure must satisfy 0 < exposure <= 1/fps, got {self.exposure} at fps={self.fps}"
            )
        if self.roi_width < 16 or self.roi_height < 16:
            raise ConfigError(
                f"ROI must be at least 16x16 pixels, got {self.roi_width}x{self.roi_height}"
            )

    @property
    def adu_max(self) -> int:
        return (1 << int(self.bit_depth)) - 1

    @property
    def frame_shape(self) -> tuple[int, int]:
        return (self.roi_height, self.roi_width)


@dataclass(frozen=True)
class Frame:
    """One monochrome camera frame: unsigned ADU samples plus a timestamp."""

    samples: np.ndarray
    timestamp: float


class FrameStream:
    """Time-ordered sequence of frames sharing one acquisition config.

    Concrete streams are array-backed (small tests), generator-backed
    (synthesis), or file-backed (see `scoskit.fileio`).  Iteration yields
    `Frame` objects in time order; streams are single-config and their
    length is known up front so processing can preallocate.
    """

    config: AcquisitionConfig
    n_frames: int

    def __len__(self) -> int:
        return self.n_frames

    def __iter__(self) -> Iterator[Frame]:  # pragma: no cover - interface
        raise NotImplementedError


class ArrayFrameStream(FrameStream):
    """In-memory stream over an (n, height, width) array of samples."""

    def __init__(self, frames: np.ndarray, config: AcquisitionConfig, t0: float = 0.0):
        frames = np.asarray(frames)
        if frames.ndim != 3:
            raise ValueError("frames must have shape (n, height, width)")
        self.frames = frames
        self.config = config
        self.n_frames = frames.shape[0]
        self.t0 = t0

    def __iter__(self) -> Iterator[Frame]:
        dt = 1.0 / self.config.fps
        for i in range(self.n_frames):
            yield Frame(self.frames[i], self.t0 + i * dt)


class GeneratorFrameStream(FrameStream):
    """Stream whose frames are produced on demand by ``factory(index)``.

    The factory must be a pure function of the frame index so frames can
    be prefetched by worker threads without changing the output.
    """

    def __init__(
        self,
        factory: Callable[[int], np.ndarray],
        config: AcquisitionConfig,
        n_frames: int,
        workers: int = 2,
    ):
        self.factory = factory
        self.config = config
        self.n_frames = int(n_frames)
        self.workers = max(1, int(workers))

    def __iter__(self) -> Iterator[Frame]:
        dt = 1.0 / self.config.fps
        if self.workers == 1 or self.n_frames < 4:
            for i in range(self.n_frames):
                yield Frame(self.factory(i), i * dt)
            return
        # Bounded look-ahead keeps memory flat while both cores stay busy.
        from concurrent.futures import ThreadPoolExecutor

        depth = 2 * self.workers
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            pending = {}
            nxt = 0
            for i in range(min(depth, self.n_frames)):
                pending[i] = pool.submit(self.factory, i)
            while nxt < self.n_frames:
                frame = pending.pop(nxt).result()
                ahead = nxt + depth
                if ahead < self.n_frames:
                    pending[ahead] = pool.submit(self.factory, ahead)
                yield Frame(frame, nxt * dt)
                nxt += 1


@dataclass(frozen=True)
class ContrastSample:
    """Spatial statistics of one frame."""

    t: float
    mean_adu: float
    k_raw_sq: float
    k_adj_sq: float


@dataclass
class HemodynamicTrace:
    """Aligned per-frame time series of intensity, contrast, BFI and BVI.

    Invalid samples (over-corrected contrast, dead frames) carry NaN in
    the affected columns and ``valid = False``.  ``baseline_*`` fields are
    populated by `compute_baseline`; ``bvi`` is defined relative to the
    baseline intensity, so it equals 1 at baseline by construction.
    """

    t: np.ndarray
    mean_adu: np.ndarray
    k_raw_sq: np.ndarray
    k_adj_sq: np.ndarray
    bfi: np.ndarray
    bvi: np.ndarray
    valid: np.ndarray
    baseline_bfi: float | None = None
    baseline_intensity: float | None = None
    baseline_bvi: float = 1.0
    normalized: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.t)
        for name in ("mean_adu", "k_raw_sq", "k_adj_sq", "bfi", "bvi", "valid"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} length mismatch")
        if n > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def fps(self) -> float:
        if len(self.t) < 2:
            return float(self.meta.get("fps", 0.0))
        return 1.0 / float(np.median(np.diff(self.t)))

    def copy(self) -> "HemodynamicTrace":
        return HemodynamicTrace(
            t=self.t.copy(),
            mean_adu=self.mean_adu.copy(),
            k_raw_sq=self.k_raw_sq.copy(),
            k_adj_sq=self.k_adj_sq.copy(),
            bfi=self.bfi.copy(),
            bvi=self.bvi.copy(),
            valid=self.valid.copy(),
            baseline_bfi=self.baseline_bfi,
            baseline_intensity=self.baseline_intensity,
            baseline_bvi=self.baseline_bvi,
            normalized=self.normalized,
            meta=dict(self.meta),
        )

    def window_mask(self, t0: float, t1: float) -> np.ndarray:
        """Boolean mask of samples with t0 <= t < t1."""
        return (self.t >= t0) & (self.t < t1)


# ---------------------------------------------------------------------------
# per-frame statistics
# ---------------------------------------------------------------------------

def _frame_stats(samples: np.ndarray) -> tuple[float, float]:
    """Raw mean and population variance of a frame in one float64 pass."""
    x = samples.reshape(-1).astype(np.float64, copy=False)
    n = x.size
    s1 = float(x.sum())
    s2 = float(np.dot(x, x))
    mean = s1 / n
    var = s2 / n - mean * mean
    return mean, max(var, 0.0)


def compute_raw_contrast(frame: Frame, config: AcquisitionConfig) -> float:
    """Raw speckle contrast K_raw^2 = var(I)/mean(I)^2 over the ROI.

    The statistics are taken over dark-corrected ADU: the offset shifts
    the mean but leaves the variance untouched.  Scaling all samples by
    a positive constant leaves the result unchanged.

    Raises
    ------
    DimensionMismatch : frame shape differs from the configured ROI.
    ZeroMeanFrame : dark-corrected mean is not positive.
    """
    if frame.samples.shape != config.frame_shape:
        raise DimensionMismatch(
            f"frame is {frame.samples.shape}, config expects {config.frame_shape}"
        )
    mean, var = _frame_stats(frame.samples)
    mu = mean - config.dark_offset
    if mu <= 0:
        raise ZeroMeanFrame(f"dark-corrected mean {mu:.3f} ADU <= 0")
    return var / (mu * mu)


def correct_contrast(k_raw_sq: float, mean_adu: float, config: AcquisitionConfig) -> float:
    """Subtract the camera noise floor from a raw contrast value.

    With mu_e = (mean_adu - dark_offset) * gain photoelectrons, the shot,
    read, and quantization contributions to the spatial contrast are
    1/mu_e, read_noise^2/mu_e^2 and gain^2/(12 mu_e^2).  The result may
    legitimately be <= 0 for noise-dominated frames; callers decide
    whether that is an invalid sample (see `compute_bfi`).
    """
    if config.no_noise:
        return k_raw_sq
    mu_e = (mean_adu - config.dark_offset) * config.gain
    if mu_e <= 0:
        raise ZeroMeanFrame(f"dark-corrected signal {mu_e:.3f} e- <= 0")
    k_shot = 1.0 / mu_e
    k_read = (config.read_noise / mu_e) ** 2
    k_quant = (config.gain / mu_e) ** 2 / 12.0
    return k_raw_sq - k_shot - k_read - k_quant


def compute_bfi(k_adj_sq: float, epsilon: float = EPSILON_CONTRAST) -> float:
    """Blood flow index 1/K_adjusted^2.

    Raises ContrastUnderflow when the adjusted contrast is at or below
    ``epsilon`` (over-corrected or saturated frame); callers flag the
    sample invalid rather than aborting the session.
    """
    if k_adj_sq <= epsilon:
        raise ContrastUnderflow(f"k_adj_sq={k_adj_sq:.3e} <= epsilon={epsilon:.0e}")
    return 1.0 / k_adj_sq


def compute_bvi(mean_adu: float, baseline_intensity: float, config: AcquisitionConfig) -> float:
    """Blood volume index: baseline over current dark-corrected intensity."""
    cur = mean_adu - config.dark_offset
    if cur <= 0:
        raise ZeroMeanFrame(f"dark-corrected mean {cur:.3f} ADU <= 0")
    base = baseline_intensity - config.dark_offset
    if base <= 0:
        raise ZeroMeanFrame(f"dark-corrected baseline {base:.3f} ADU <= 0")
    return base / cur


def frame_contrast(frame: Frame, config: AcquisitionConfig) -> ContrastSample:
    """Raw and adjusted contrast of one frame."""
    k_raw = compute_raw_contrast(frame, config)
    mean, _ = _frame_stats(frame.samples)
    k_adj = correct_contrast(k_raw, mean, config)
    return ContrastSample(t=frame.timestamp, mean_adu=mean, k_raw_sq=k_raw, k_adj_sq=k_adj)


# ---------------------------------------------------------------------------
# trace assembly and trace-level operations
# ---------------------------------------------------------------------------

def build_trace(
    stream: FrameStream,
    baseline_window: tuple[float, float] | None = None,
    epsilon: float = EPSILON_CONTRAST,
) -> HemodynamicTrace:
    """Run the per-frame statistics over a stream and assemble the trace.

    Frame-level failures (dead frames, contrast underflow) become invalid
    samples, never exceptions.  The baseline is computed over
    ``baseline_window`` (default: the first `DEFAULT_BASELINE_SECONDS`)
    and the BVI column is referenced to it.
    """
    config = stream.config
    n = len(stream)
    t = np.empty(n)
    mean_adu = np.full(n, np.nan)
    k_raw = np.full(n, np.nan)
    k_adj = np.full(n, np.nan)
    bfi = np.full(n, np.nan)
    valid = np.zeros(n, dtype=bool)

    for i, frame in enumerate(stream):
        t[i] = frame.timestamp
        try:
            mean, var = _frame_stats(frame.samples)
            mean_adu[i] = mean
            mu = mean - config.dark_offset
            if mu <= 0:
                continue
            k_raw[i] = var / (mu * mu)
            k_adj[i] = correct_contrast(k_raw[i], mean, config)
            bfi[i] = compute_bfi(k_adj[i], epsilon)
            valid[i] = True
        except ContrastUnderflow:
            continue
        except ZeroMeanFrame:
            continue

    bvi = np.full(n, np.nan)
    trace = HemodynamicTrace(
        t=t,
        mean_adu=mean_adu,
        k_raw_sq=k_raw,
        k_adj_sq=k_adj,
        bfi=bfi,
        bvi=bvi,
        valid=valid,
        meta={"fps": config.fps, "dark_offset": config.dark_offset},
    )
    if baseline_window is None:
        # Provisional reference over whatever leading data exists; callers
        # doing breath-hold analysis re-baseline over the true rest window.
        end = min(float(t[0]) + DEFAULT_BASELINE_SECONDS, float(t[-1]) + 1.0 / config.fps)
        return compute_baseline(trace, (float(t[0]), end), min_seconds=0.0)
    return compute_baseline(trace, baseline_window)


def compute_baseline(
    trace: HemodynamicTrace,
    rest_window: tuple[float, float],
    min_seconds: float = DEFAULT_BASELINE_SECONDS,
) -> HemodynamicTrace:
    """Average the rest window into BFI_0 and I_0 and re-reference BVI.

    The window must span at least ``min_seconds``; at physiological heart
    rates (>= 30 bpm) the default 10 s guarantees the average covers at
    least five cardiac cycles.  Returns a new trace whose BVI column
    equals 1 at baseline.
    """
    t0, t1 = rest_window
    if t1 - t0 < min_seconds - 1e-9:
        raise WindowTooShort(f"rest window spans {t1 - t0:.2f} s < {min_seconds:.2f} s")
    sel = trace.window_mask(t0, t1) & trace.valid
    if not np.any(sel):
        raise WindowTooShort("rest window contains no valid samples")

    out = trace.copy()
    i0 = float(np.mean(trace.mean_adu[sel]))
    bfi0 = float(np.mean(trace.bfi[sel]))
    dark = trace.meta.get("dark_offset")
    if dark is not None and np.all(np.isfinite(trace.mean_adu[trace.valid])):
        out.bvi = np.where(
            trace.valid & (trace.mean_adu - dark > 0),
            (i0 - dark) / (trace.mean_adu - dark),
            np.nan,
        )
    else:
        # Trace loaded without camera metadata: re-reference the existing
        # BVI column.  mean(1/bvi) over the window is exactly the ratio of
        # new to old baseline intensity, so this matches the direct formula.
        if np.all(~np.isfinite(trace.bvi[sel])):
            raise WindowTooShort("cannot re-baseline: no BVI data in window")
        scale = float(np.mean(1.0 / trace.bvi[sel]))
        out.bvi = trace.bvi * scale
    out.baseline_intensity = i0
    out.baseline_bfi = bfi0
    out.baseline_bvi = 1.0
    out.meta["baseline_window"] = (float(t0), float(t1))
    return out


def _shrunken_boxcar(y: np.ndarray, valid: np.ndarray, n_window: int) -> np.ndarray:
    """Centered moving average with shrunken edge windows.

    Invalid samples contribute nothing and stay NaN in the output.  For an
    even window length the extra sample sits on the trailing side.
    """
    n = y.size
    left = (n_window - 1) // 2
    right = n_window - 1 - left
    w = np.where(valid, y, 0.0)
    cum = np.concatenate(([0.0], np.cumsum(w)))
    cnt = np.concatenate(([0], np.cumsum(valid.astype(np.int64))))
    idx = np.arange(n)
    lo = np.maximum(0, idx - left)
    hi = np.minimum(n, idx + right + 1)
    sums = cum[hi] - cum[lo]
    counts = cnt[hi] - cnt[lo]
    out = np.divide(sums, counts, out=np.full(n, np.nan), where=counts > 0)
    out[~valid] = np.nan
    return out


def smooth_trace(trace: HemodynamicTrace, window_seconds: float = DEFAULT_SMOOTH_SECONDS) -> HemodynamicTrace:
    """Apply the centered temporal averaging filter to BFI and BVI.

    Edge samples use shrunken windows rather than padded data, and
    invalid samples are excluded from every window.  Per-frame columns
    (mean intensity, contrast) are left untouched.
    """
    fps = trace.fps
    n_window = int(round(window_seconds * fps))
    if n_window < 3:
        raise ValueError(
            f"window of {window_seconds} s at {fps:.1f} fps covers {n_window} samples; need >= 3"
        )
    out = trace.copy()
    out.bfi = _shrunken_boxcar(trace.bfi, trace.valid & np.isfinite(trace.bfi), n_window)
    bvi_valid = trace.valid & np.isfinite(trace.bvi)
    out.bvi = _shrunken_boxcar(trace.bvi, bvi_valid, n_window)
    out.meta["smooth_seconds"] = float(window_seconds)
    return out


def normalize_trace(trace: HemodynamicTrace) -> HemodynamicTrace:
    """Divide BFI by its baseline so both indices are relative metrics."""
    if trace.baseline_bfi is None:
        raise BaselineMissing("normalize_trace requires compute_baseline first")
    if trace.normalized:
        return trace.copy()
    out = trace.copy()
    out.bfi = trace.bfi / trace.baseline_bfi
    out.normalized = True
    return out


def denormalize_trace(trace: HemodynamicTrace) -> HemodynamicTrace:
    """Undo `normalize_trace`."""
    if trace.baseline_bfi is None:
        raise BaselineMissing("trace has no baseline")
    if not trace.normalized:
        return trace.copy()
    out = trace.copy()
    out.bfi = trace.bfi * trace.baseline_bfi
    out.normalized = False
    return out
