"""Member feature extraction from censored records.

Every feature lives in a sparse name -> value map with absent meaning
zero. Names follow "<family>|<window>|<system>|<item>" so a matrix
column is self-describing. Windows are measured back from the slice
date (m3, m6, y1 nest inside each other; anytime is unbounded below)
and nothing dated after the slice date can influence any value.

Proprietary clinical groupers are replaced by a configurable prefix
truncation per code system, emitted under the synthetic "GROUPED"
system alongside the raw codes.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as _scipy_stats

from .records import CodeSystem, PatientRecord, Sex, TermEvent, add_months, merge_date_spans
from .slicing import GroupSlice

__all__ = [
    "WINDOWS",
    "FeatureConfig",
    "FeatureVector",
    "FeatureCatalog",
    "extract_member_features",
    "lab_trend",
    "fit_catalog",
    "project",
    "build_matrix",
    "write_matrix_csv",
    "read_matrix_csv",
]

log = logging.getLogger(__name__)

WINDOWS = ("m3", "m6", "y1", "anytime")
_WINDOW_MONTHS = {"m3": 3, "m6": 6, "y1": 12}

AGE_FEATURE = "demo|anytime|demo|age"
SEX_FEATURE = "demo|anytime|demo|sex_F"

TREND_LABELS = ("increasing", "decreasing", "flat")


@dataclass(frozen=True)
class FeatureConfig:
    # code system -> prefix length used by the truncation grouper
    grouper_prefix: Mapping[str, int] = field(
        default_factory=lambda: {"ICD10": 3, "ICD9": 3, "CPT": 3, "NDC": 4}
    )
    trend_p_threshold: float = 0.05
    fluctuation_min_changes: int = 2

    def __post_init__(self):
        if not 0.0 < self.trend_p_threshold < 1.0:
            raise ValueError("trend_p_threshold must lie in (0, 1)")
        if self.fluctuation_min_changes < 1:
            raise ValueError("fluctuation_min_changes must be positive")


@dataclass
class FeatureVector:
    member_id: str
    entries: dict[str, float]

    def get(self, name: str) -> float:
        return self.entries.get(name, 0.0)


def _window_lower_bounds(slice_date: date) -> dict[str, date | None]:
    bounds: dict[str, date | None] = {
        w: add_months(slice_date, -m) for w, m in _WINDOW_MONTHS.items()
    }
    bounds["anytime"] = None
    return bounds


def _windows_for(d: date, slice_date: date, bounds: Mapping[str, date | None]) -> list[str]:
    if d > slice_date:
        return []
    out = []
    for w in WINDOWS:
        lb = bounds[w]
        if lb is None or d > lb:
            out.append(w)
    return out


def lab_trend(
    points: Sequence[tuple[date, float]], p_threshold: float = 0.05
) -> str:
    """Classify a lab value series by the t-test on its regression slope.

    Fits ordinary least squares of value on time and calls the series
    increasing or decreasing only when the two-sided slope p-value is
    below the threshold; otherwise flat. Fewer than three points or a
    degenerate time axis is flat; a perfect nonzero-slope fit counts as
    p = 0.
    """
    n = len(points)
    if n < 3:
        return "flat"
    t0 = points[0][0]
    xs = np.array([(d - t0).days for d, _ in points], dtype=np.float64)
    ys = np.array([v for _, v in points], dtype=np.float64)
    sxx = float(np.sum((xs - xs.mean()) ** 2))
    if sxx == 0.0:
        return "flat"
    sxy = float(np.sum((xs - xs.mean()) * (ys - ys.mean())))
    syy = float(np.sum((ys - ys.mean()) ** 2))
    slope = sxy / sxx
    if slope == 0.0:
        return "flat"
    ssr = max(0.0, syy - slope * sxy)
    if ssr <= 1e-12 * max(syy, 1e-300):
        p = 0.0
    else:
        se = math.sqrt(ssr / (n - 2) / sxx)
        t_stat = slope / se
        p = 2.0 * float(_scipy_stats.t.sf(abs(t_stat), n - 2))
    if p < p_threshold:
        return "increasing" if slope > 0 else "decreasing"
    return "flat"


def _coverage_days(record: PatientRecord, lower: date | None, slice_date: date) -> int:
    days = 0
    for start, end in merge_date_spans((s.start_date, s.end_date) for s in record.coverages):
        lo = start if lower is None else max(start, lower + timedelta(days=1))
        hi = min(end, slice_date)
        if hi >= lo:
            days += (hi - lo).days + 1
    return days


def extract_member_features(
    record: PatientRecord,
    group_slice: GroupSlice,
    config: FeatureConfig | None = None,
) -> FeatureVector:
    """Build the sparse feature map for one member at one slice.

    The record should already be censored at the slice date for the
    chosen paid/encounter view; windows additionally clamp every event
    to the slice date so later-dated rows can never leak in. Zero-sum
    accumulations are dropped, except demographics and coverage
    lengths which are always emitted.
    """
    cfg = config or FeatureConfig()
    slice_date = group_slice.slice_date
    bounds = _window_lower_bounds(slice_date)
    entries: dict[str, float] = {}

    entries[AGE_FEATURE] = float(record.age_on(slice_date))
    entries[SEX_FEATURE] = 1.0 if record.sex is Sex.F else 0.0
    for w in WINDOWS:
        entries[f"coverage|{w}|days|length"] = float(
            _coverage_days(record, bounds[w], slice_date)
        )

    costs: dict[str, float] = {}
    for claim in record.claims:
        for w in _windows_for(claim.encounter_date, slice_date, bounds):
            costs[f"cost|{w}|allowed|total"] = costs.get(f"cost|{w}|allowed|total", 0.0) + claim.allowed_amount
            setting_key = f"cost|{w}|allowed|{claim.care_setting.value}"
            costs[setting_key] = costs.get(setting_key, 0.0) + claim.allowed_amount
        if claim.encounter_date <= slice_date:
            for rc in claim.revenue_codes:
                entries[f"revcode|anytime|REV|{rc}"] = 1.0
    for name, value in costs.items():
        if value != 0.0:
            entries[name] = value

    counts: dict[tuple[str, str, str], int] = {}
    loinc_events: list[TermEvent] = []
    for term in record.terms:
        windows = _windows_for(term.date, slice_date, bounds)
        if not windows:
            continue
        system = term.system.value
        keys = [(system, term.code)]
        prefix_len = cfg.grouper_prefix.get(system)
        if prefix_len:
            keys.append(("GROUPED", f"{system}:{term.code[:prefix_len]}"))
        for w in windows:
            for sys_name, code in keys:
                k = (w, sys_name, code)
                counts[k] = counts.get(k, 0) + 1
        if term.system is CodeSystem.LOINC:
            loinc_events.append(term)

    for (w, sys_name, code), count in counts.items():
        entries[f"logcount|{w}|{sys_name}|{code}"] = math.log1p(count)

    per_system: dict[str, list[int]] = {}
    for (w, sys_name, _), count in counts.items():
        if w == "anytime":
            per_system.setdefault(sys_name, []).append(count)
    for sys_name, values in per_system.items():
        entries[f"stats|anytime|{sys_name}|total_count"] = float(sum(values))
        entries[f"stats|anytime|{sys_name}|unique_count"] = float(len(values))
        entries[f"stats|anytime|{sys_name}|min_count"] = float(min(values))
        entries[f"stats|anytime|{sys_name}|max_count"] = float(max(values))
        entries[f"stats|anytime|{sys_name}|mean_count"] = sum(values) / len(values)

    _add_lab_features(entries, loinc_events, slice_date, bounds, cfg)
    return FeatureVector(member_id=record.member_id, entries=entries)


def _add_lab_features(
    entries: dict[str, float],
    events: list[TermEvent],
    slice_date: date,
    bounds: Mapping[str, date | None],
    cfg: FeatureConfig,
) -> None:
    if not events:
        return
    events = sorted(events, key=lambda t: (t.date, t.term_id))

    interp_counts: dict[tuple[str, str], int] = {}
    interp_seq: dict[tuple[str, str], list[str]] = {}
    valued: dict[str, list[tuple[date, float]]] = {}
    for ev in events:
        windows = _windows_for(ev.date, slice_date, bounds)
        if ev.lab_interpretation is not None:
            for w in windows:
                key = (w, ev.lab_interpretation.value)
                interp_counts[key] = interp_counts.get(key, 0) + 1
                interp_seq.setdefault((w, ev.code), []).append(ev.lab_interpretation.value)
        if ev.lab_value is not None and windows:
            valued.setdefault(ev.code, []).append((ev.date, ev.lab_value))

    for (w, interp), count in interp_counts.items():
        entries[f"labinterp|{w}|LOINC|{interp}"] = math.log1p(count)

    fluct_windows: set[str] = set()
    for (w, _code), seq in interp_seq.items():
        changes = sum(1 for a, b in zip(seq, seq[1:]) if a != b)
        if changes >= cfg.fluctuation_min_changes:
            fluct_windows.add(w)
    for w in fluct_windows:
        entries[f"labfluct|{w}|LOINC|any"] = 1.0

    for code, points in valued.items():
        label = lab_trend(points, cfg.trend_p_threshold)
        entries[f"labtrend|anytime|LOINC|{code}:{label}"] = 1.0


# ---------------------------------------------------------------------------
# catalog


@dataclass
class FeatureCatalog:
    """Training-set prevalence and the selected, ordered column set."""

    prevalence: dict[str, float]
    selected: list[str]  # lexicographic order defines matrix columns
    threshold: float
    cap: int

    def __post_init__(self):
        self.index: dict[str, int] = {name: i for i, name in enumerate(self.selected)}
        self._warned_unseen = False

    @property
    def n_columns(self) -> int:
        return len(self.selected)

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature_name", "prevalence", "selected"])
            for name in sorted(self.prevalence):
                writer.writerow([
                    name, repr(self.prevalence[name]),
                    "1" if name in self.index else "0",
                ])

    @classmethod
    def from_csv(cls, path: str, threshold: float = 0.0, cap: int = 0) -> "FeatureCatalog":
        prevalence: dict[str, float] = {}
        selected: list[str] = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                prevalence[row["feature_name"]] = float(row["prevalence"])
                if row["selected"] == "1":
                    selected.append(row["feature_name"])
        return cls(prevalence=prevalence, selected=sorted(selected), threshold=threshold, cap=cap)


def fit_catalog(
    vectors: Sequence[FeatureVector],
    prevalence_threshold: float = 0.001,
    max_features: int = 100_000,
) -> FeatureCatalog:
    """Select features by training prevalence.

    Prevalence is the fraction of training members with a nonzero value.
    Features at or above the threshold are kept; if more than
    max_features qualify, the most prevalent win with lexicographic
    tie-breaking.
    """
    if not vectors:
        raise ValueError("need at least one feature vector")
    if not 0.0 <= prevalence_threshold <= 1.0:
        raise ValueError("prevalence_threshold must lie in [0, 1]")
    counts: dict[str, int] = {}
    for vec in vectors:
        for name, value in vec.entries.items():
            if value != 0.0:
                counts[name] = counts.get(name, 0) + 1
    n = len(vectors)
    prevalence = {name: c / n for name, c in counts.items()}
    qualifying = [name for name, p in prevalence.items() if p >= prevalence_threshold]
    if len(qualifying) > max_features:
        qualifying.sort(key=lambda name: (-prevalence[name], name))
        qualifying = qualifying[:max_features]
    return FeatureCatalog(
        prevalence=prevalence,
        selected=sorted(qualifying),
        threshold=prevalence_threshold,
        cap=max_features,
    )


def project(vector: FeatureVector, catalog: FeatureCatalog) -> FeatureVector:
    """Restrict a vector to the catalog columns; unseen names drop."""
    kept: dict[str, float] = {}
    unseen = 0
    for name, value in vector.entries.items():
        if name in catalog.index:
            kept[name] = value
        elif name not in catalog.prevalence:
            unseen += 1
    if unseen and not catalog._warned_unseen:
        catalog._warned_unseen = True
        log.info("dropping %d feature name(s) never seen at training time", unseen)
    return FeatureVector(member_id=vector.member_id, entries=kept)


def build_matrix(vectors: Sequence[FeatureVector], catalog: FeatureCatalog) -> np.ndarray:
    """Dense (n, n_columns) matrix in catalog column order."""
    X = np.zeros((len(vectors), catalog.n_columns), dtype=np.float64)
    index = catalog.index
    for i, vec in enumerate(vectors):
        for name, value in vec.entries.items():
            j = index.get(name)
            if j is not None:
                X[i, j] = value
    return X


def write_matrix_csv(path: str, vectors: Sequence[FeatureVector], catalog: FeatureCatalog) -> None:
    """Sparse triplet dump (row_id, feature_name, value) of selected entries."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_id", "feature_name", "value"])
        for vec in vectors:
            for name in sorted(vec.entries):
                if name in catalog.index and vec.entries[name] != 0.0:
                    writer.writerow([vec.member_id, name, repr(vec.entries[name])])


def read_matrix_csv(path: str) -> list[FeatureVector]:
    rows: dict[str, dict[str, float]] = {}
    order: list[str] = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rid = row["row_id"]
            if rid not in rows:
                rows[rid] = {}
                order.append(rid)
            rows[rid][row["feature_name"]] = float(row["value"])
    return [FeatureVector(member_id=rid, entries=rows[rid]) for rid in order]
