import numpy as np
import pytest

from scoskit.trace import AcquisitionConfig, HemodynamicTrace


@pytest.fixture
def config_small():
    return AcquisitionConfig(
        fps=60.0, exposure=0.010, roi_width=64, roi_height=64,
        gain=2.0, read_noise=2.5, dark_offset=32.0,
    )


@pytest.fixture
def config_medium():
    return AcquisitionConfig(
        fps=60.0, exposure=0.010, roi_width=96, roi_height=96,
        gain=2.0, read_noise=2.5, dark_offset=32.0,
    )


def make_trace(t, bfi, bvi=None, mean_adu=None, valid=None, dark_offset=32.0, normalized=False,
               baseline_bfi=None, baseline_intensity=None):
    """Hand-rolled trace for unit tests; contrast columns derived from bfi."""
    t = np.asarray(t, dtype=np.float64)
    bfi = np.asarray(bfi, dtype=np.float64)
    n = t.size
    if bvi is None:
        bvi = np.ones(n)
    if mean_adu is None:
        mean_adu = 300.0 / np.asarray(bvi) + dark_offset
    if valid is None:
        valid = np.isfinite(bfi)
    with np.errstate(divide="ignore"):
        k = np.where(np.isfinite(bfi) & (bfi != 0), 1.0 / bfi, np.nan)
    return HemodynamicTrace(
        t=t,
        mean_adu=np.asarray(mean_adu, dtype=np.float64),
        k_raw_sq=k.copy(),
        k_adj_sq=k.copy(),
        bfi=bfi.copy(),
        bvi=np.asarray(bvi, dtype=np.float64).copy(),
        valid=np.asarray(valid, dtype=bool),
        meta={"fps": 1.0 / float(np.median(np.diff(t))) if n > 1 else 0.0,
              "dark_offset": dark_offset},
        normalized=normalized,
        baseline_bfi=baseline_bfi,
        baseline_intensity=baseline_intensity,
    )
