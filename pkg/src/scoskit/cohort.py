"""Group-level statistics: risk grouping, Welch tests, box plots, trends.

The Student-t tail probability is evaluated through the regularized
incomplete beta function with continued-fraction evaluation (double
precision, no statistical tables), so p-values are reproducible to
better than 1e-12 relative accuracy and can be checked against direct
numerical integration of the t density.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .breathhold import FEATURE_NAMES, FeatureSet
from .errors import DegenerateSample, InsufficientData, SampleTooSmall

#: Star mapping with strict thresholds; boundary values fall into the
#: weaker category (p = 0.05 is "ns").
SIGNIFICANCE_THRESHOLDS = (
    (1e-4, "****"),
    (1e-3, "***"),
    (1e-2, "**"),
    (0.05, "*"),
)

#: Default risk-score buckets for the subgroup trend.
DEFAULT_BUCKETS = ((1,), (4,), (5,), (6, 7))

_ITMAX = 400
_EPS = 3.0e-16
_FPMIN = 1.0e-300


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _ITMAX + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, dof: float) -> float:
    """P(|T| >= t) for Student's t with ``dof`` degrees of freedom."""
    if dof <= 0:
        raise ValueError(f"degrees of freedom must be > 0, got {dof}")
    t = abs(float(t))
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))


def significance_level(p: float) -> str:
    """Map a p-value onto its star label (strict thresholds)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p-value {p} outside [0, 1]")
    for threshold, stars in SIGNIFICANCE_THRESHOLDS:
        if p < threshold:
            return stars
    return "ns"


# ---------------------------------------------------------------------------
# core statistics
# ---------------------------------------------------------------------------

@dataclass
class GroupComparison:
    """One Table-row worth of Welch statistics."""

    feature: str
    n_a: int
    mean_a: float
    std_a: float
    n_b: int
    mean_b: float
    std_b: float
    t_statistic: float
    dof: float
    p_value: float
    significance: str
    degenerate: bool = False


def welch_t_test(
    sample_a: Sequence[float], sample_b: Sequence[float], feature: str = ""
) -> GroupComparison:
    """Two-sample Welch t-test with Welch-Satterthwaite degrees of freedom.

    Zero-variance edge cases follow fixed conventions: equal-mean
    constant samples give p = 1, different-mean constant samples give
    p = 0; both are flagged ``degenerate``.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise DegenerateSample(f"need n >= 2 per sample, got {a.size} and {b.size}")
    mean_a, mean_b = float(a.mean()), float(b.mean())
    sd_a = float(a.std(ddof=1))
    sd_b = float(b.std(ddof=1))
    va = sd_a**2 / a.size
    vb = sd_b**2 / b.size

    if va + vb == 0.0:
        equal = mean_a == mean_b
        return GroupComparison(
            feature=feature,
            n_a=a.size, mean_a=mean_a, std_a=sd_a,
            n_b=b.size, mean_b=mean_b, std_b=sd_b,
            t_statistic=0.0 if equal else math.copysign(math.inf, mean_a - mean_b),
            dof=float("nan"),
            p_value=1.0 if equal else 0.0,
            significance="ns" if equal else "****",
            degenerate=True,
        )

    t = (mean_a - mean_b) / math.sqrt(va + vb)
    dof = (va + vb) ** 2 / (
        (va**2 / (a.size - 1)) + (vb**2 / (b.size - 1))
    )
    p = student_t_two_sided_p(t, dof)
    return GroupComparison(
        feature=feature,
        n_a=a.size, mean_a=mean_a, std_a=sd_a,
        n_b=b.size, mean_b=mean_b, std_b=sd_b,
        t_statistic=t,
        dof=dof,
        p_value=p,
        significance=significance_level(p),
    )


@dataclass
class BoxplotSummary:
    """Quartiles, Tukey whiskers, and outliers of one sample."""

    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: list[float]
    n: int


def boxplot_summary(sample: Sequence[float]) -> BoxplotSummary:
    """Box-plot statistics with 1.5 IQR fences.

    Quartiles use linear interpolation between order statistics; every
    value is either inside the whiskers or listed as an outlier, with
    fence values themselves counting as inside.
    """
    x = np.sort(np.asarray(sample, dtype=np.float64))
    if x.size < 4:
        raise SampleTooSmall(f"box plot needs n >= 4, got {x.size}")
    q1, median, q3 = (float(v) for v in np.quantile(x, [0.25, 0.5, 0.75], method="linear"))
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    out_mask = (x < lo_fence) | (x > hi_fence)
    inside = x[~out_mask]
    return BoxplotSummary(
        median=median,
        q1=q1,
        q3=q3,
        whisker_low=float(inside.min()),
        whisker_high=float(inside.max()),
        outliers=[float(v) for v in x[out_mask]],
        n=int(x.size),
    )


def spearman_rank_correlation(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rho with average ranks for ties; 0 for constant input."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise ValueError("need two equal-length samples with n >= 2")
    rx = rankdata(x)
    ry = rankdata(y)
    sx = rx.std()
    sy = ry.std()
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return float(np.mean((rx - rx.mean()) * (ry - ry.mean())) / (sx * sy))


# ---------------------------------------------------------------------------
# cohort assembly
# ---------------------------------------------------------------------------

@dataclass
class SubjectRecord:
    """Per-subject feature means over that subject's valid sessions."""

    subject_id: str
    risk_score: int
    features: dict[str, float] = field(default_factory=dict)
    session_count: int = 0


def build_subject_records(feature_sets: Iterable[FeatureSet]) -> list[SubjectRecord]:
    """Average each subject's sessions feature by feature.

    Only valid feature values contribute; a feature is present on the
    record when at least one session supplied a valid value.
    """
    by_subject: dict[str, list[FeatureSet]] = {}
    for fs in feature_sets:
        by_subject.setdefault(fs.subject_id, []).append(fs)
    records = []
    for subject_id, sessions in sorted(by_subject.items()):
        scores = {fs.risk_score for fs in sessions if fs.risk_score is not None}
        if len(scores) > 1:
            raise InsufficientData(
                f"subject {subject_id} has conflicting risk scores {sorted(scores)}"
            )
        if not scores:
            raise InsufficientData(f"subject {subject_id} has no risk score")
        feats: dict[str, float] = {}
        for name in FEATURE_NAMES:
            vals = [
                fs.values[name]
                for fs in sessions
                if fs.valid.get(name, False) and math.isfinite(fs.values.get(name, math.nan))
            ]
            if vals:
                feats[name] = float(np.mean(vals))
        records.append(
            SubjectRecord(
                subject_id=subject_id,
                risk_score=int(scores.pop()),
                features=feats,
                session_count=len(sessions),
            )
        )
    return records


def assign_groups(
    records: Sequence[SubjectRecord],
    low_scores: tuple[int, ...] = (1,),
    high_min: int = 4,
) -> tuple[list[SubjectRecord], list[SubjectRecord], list[SubjectRecord]]:
    """Split records into (low_risk, higher_risk, excluded) by risk score."""
    low, high, excluded = [], [], []
    for rec in records:
        if rec.risk_score in low_scores:
            low.append(rec)
        elif rec.risk_score >= high_min:
            high.append(rec)
        else:
            excluded.append(rec)
    return low, high, excluded


@dataclass
class ReportRow:
    feature: str
    comparison: GroupComparison | None
    error: str | None = None


@dataclass
class CohortReport:
    """Feature-by-feature group comparison in Table-1 layout."""

    rows: list[ReportRow]
    n_low: int
    n_high: int
    n_excluded: int

    def to_csv_text(self) -> str:
        lines = [
            "feature,n_low,mean_low,std_low,n_high,mean_high,std_high,t,dof,p_value,significance,error"
        ]
        for row in self.rows:
            c = row.comparison
            if c is None:
                lines.append(f"{row.feature},,,,,,,,,,,{row.error}")
            else:
                lines.append(
                    f"{row.feature},{c.n_a},{c.mean_a!r},{c.std_a!r},"
                    f"{c.n_b},{c.mean_b!r},{c.std_b!r},"
                    f"{c.t_statistic!r},{c.dof!r},{c.p_value!r},{c.significance},"
                    f"{row.error or ''}"
                )
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        header = (
            f"{'Feature':<22} {'Low-risk mean (std)':>22} "
            f"{'Higher-risk mean (std)':>24} {'p-value':>12} {'Sig.':>5}"
        )
        lines = [
            f"low-risk n={self.n_low}, higher-risk n={self.n_high}, excluded n={self.n_excluded}",
            header,
            "-" * len(header),
        ]
        for row in self.rows:
            c = row.comparison
            if c is None:
                lines.append(f"{row.feature:<22} {'-':>22} {'-':>24} {row.error or 'error':>18}")
                continue
            a = f"{c.mean_a:.3g} ({c.std_a:.3g})"
            b = f"{c.mean_b:.3g} ({c.std_b:.3g})"
            p = f"{c.p_value:.3g}"
            lines.append(f"{row.feature:<22} {a:>22} {b:>24} {p:>12} {c.significance:>5}")
        return "\n".join(lines) + "\n"


def table_report(
    records: Sequence[SubjectRecord],
    features: Sequence[str] | None = None,
    low_scores: tuple[int, ...] = (1,),
    high_min: int = 4,
) -> CohortReport:
    """Per-feature mean(std), Welch p, and stars for the two risk groups.

    Rows whose test cannot run (missing data, degenerate samples) carry
    an error note; the report is still produced.
    """
    low, high, excluded = assign_groups(records, low_scores, high_min)
    if not low or not high:
        raise InsufficientData(
            f"need both groups non-empty, got low={len(low)} higher={len(high)}"
        )
    if features is None:
        features = FEATURE_NAMES
    rows = []
    for name in features:
        a = [r.features[name] for r in low if name in r.features]
        b = [r.features[name] for r in high if name in r.features]
        try:
            comparison = welch_t_test(a, b, feature=name)
            rows.append(ReportRow(feature=name, comparison=comparison))
        except DegenerateSample as exc:
            rows.append(ReportRow(feature=name, comparison=None, error=str(exc)))
    return CohortReport(
        rows=rows, n_low=len(low), n_high=len(high), n_excluded=len(excluded)
    )


@dataclass
class BucketTrend:
    label: str
    scores: tuple[int, ...]
    n: int
    summary: BoxplotSummary | None
    note: str | None = None


@dataclass
class TrendResult:
    feature: str
    buckets: list[BucketTrend]
    spearman_rho: float | None


def subgroup_trend(
    records: Sequence[SubjectRecord],
    feature: str,
    buckets: Sequence[tuple[int, ...]] = DEFAULT_BUCKETS,
) -> TrendResult:
    """Per-risk-bucket box summaries plus a rank-correlation trend.

    Empty buckets are reported, not fatal.  Spearman's rho is computed
    between bucket score midpoints and per-subject feature values over
    all non-empty buckets (None when fewer than two subjects remain).
    """
    entries: list[BucketTrend] = []
    xs: list[float] = []
    ys: list[float] = []
    for scores in buckets:
        label = "-".join(str(s) for s in sorted(set(scores)))
        vals = [
            r.features[feature]
            for r in records
            if r.risk_score in scores and feature in r.features
        ]
        midpoint = float(np.mean(list(scores)))
        xs.extend([midpoint] * len(vals))
        ys.extend(vals)
        if not vals:
            entries.append(BucketTrend(label, tuple(scores), 0, None, "empty bucket"))
            continue
        try:
            summary = boxplot_summary(vals)
            entries.append(BucketTrend(label, tuple(scores), len(vals), summary))
        except SampleTooSmall as exc:
            entries.append(BucketTrend(label, tuple(scores), len(vals), None, str(exc)))
    rho = spearman_rank_correlation(xs, ys) if len(xs) >= 2 else None
    return TrendResult(feature=feature, buckets=entries, spearman_rho=rho)
