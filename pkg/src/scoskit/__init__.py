"""Speckle contrast optical spectroscopy toolkit.

Submodules
----------
trace : frame statistics, noise correction, BFI/BVI trace assembly.
synth : synthetic dynamic-speckle generator with exact ground truth.
cardiac : heart rate, pulse segmentation, waveform landmarks.
breathhold : per-session breath-hold feature extraction.
cohort : risk grouping, Welch tests, box plots, subgroup trends.
fileio : binary frame container, trace CSV, annotation/feature JSON.
cli : the ``scoskit`` command (simulate / process / extract / cohort).
"""

from . import breathhold, cardiac, cohort, errors, fileio, synth, trace
from .breathhold import (
    BreathHoldAnnotation,
    FeatureSet,
    compute_bhi,
    compute_bp_ratio,
    extract_feature_set,
    fit_response,
)
from .cardiac import detect_peaks, heart_rate, peaks_ratio_summary, segment_pulses
from .cohort import (
    assign_groups,
    boxplot_summary,
    build_subject_records,
    subgroup_trend,
    table_report,
    welch_t_test,
)
from .synth import (
    SessionScript,
    SpecklePhysics,
    expected_contrast,
    generate_flat_sequence,
    generate_speckle_sequence,
    standard_session_script,
    synthesize_breathhold_session,
)
from .trace import (
    AcquisitionConfig,
    Frame,
    HemodynamicTrace,
    build_trace,
    compute_baseline,
    compute_bfi,
    compute_bvi,
    compute_raw_contrast,
    correct_contrast,
    normalize_trace,
    smooth_trace,
)

__version__ = "0.1.0"
