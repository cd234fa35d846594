"""Two-stage cost model: member regression, then group adjustment.

Stage one censors every roster member's record at the group's slice
date, extracts sparse features, and fits a squared-error boosted model
on per-member projection pmpm. A prevalence sweep refits the model at
several feature-selection thresholds and keeps the cheapest catalog
whose held-out error sits within a tolerance of the best.

Stage two averages the member predictions over each roster, derives
seven group-level covariates from observable experience data, and fits
an absolute-error boosted model on realized group pmpm. Optimizing the
absolute error pushes the group stage toward the conditional median,
which resists the long right tail of cost distributions.

A credibility-blended reference rate built from the training book
plays the incumbent rater: the final stop-light recommendation is
green exactly when the model's projected trend undercuts it.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Mapping, Sequence

import numpy as np

from . import gbdt
from .actuarial import (
    CredibilityCurve,
    GroupCensus,
    GroupExperience,
    RatingFactors,
    blend,
    credibility,
    experience_rate,
    manual_rate,
    shock_split,
)
from .features import (
    FeatureCatalog,
    FeatureConfig,
    FeatureVector,
    build_matrix,
    extract_member_features,
    fit_catalog,
    project,
)
from .gbdt import GbdtModel, TrainConfig
from .records import (
    Book,
    PatientRecord,
    add_months,
    filter_claims_by_date,
    member_months,
    month_index,
)
from .slicing import (
    GroupSlice,
    SplitAssignment,
    TargetTable,
    split_groups,
    training_targets,
)

__all__ = [
    "GROUP_FEATURE_NAMES",
    "PipelineConfig",
    "GroupAggregates",
    "SweepRow",
    "SweepReport",
    "GroupFeatureRow",
    "GroupPrediction",
    "PipelineModel",
    "TrainResult",
    "PredictResult",
    "compute_group_aggregates",
    "extract_roster_vectors",
    "prevalence_sweep",
    "aggregate_members",
    "build_group_features",
    "fit_group_model",
    "baseline_quote",
    "recommend",
    "train_pipeline",
    "predict_pipeline",
    "explain_groups",
]

log = logging.getLogger(__name__)

GROUP_FEATURE_NAMES = (
    "mean_member_prediction",
    "mean_age",
    "member_months_exp",
    "growth",
    "avg_coverage_len",
    "late_cost_fraction",
    "high_cost_fraction",
)


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    date_field: str = "encounter"  # censoring view: "encounter" | "paid"
    prevalence_thresholds: tuple[float, ...] = (0.01, 0.001)
    plateau_tolerance: float = 0.01  # fraction of best test MSE
    max_features: int = 100_000
    member_train: TrainConfig = field(default_factory=lambda: TrainConfig(
        num_trees=400, learning_rate=0.05, max_leaves=31,
        min_data_in_leaf=20, early_stopping_rounds=30,
    ))
    group_train: TrainConfig = field(default_factory=lambda: TrainConfig(
        num_trees=300, learning_rate=0.05, max_leaves=7,
        min_data_in_leaf=5, early_stopping_rounds=30,
    ))
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)
    split_ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)
    split_seed: int = 0
    high_cost_quantile: float = 0.90
    late_months: int = 4
    min_group_rows: int = 30
    pooling_level: float = 100_000.0
    baseline_annual_trend: float = 0.05
    full_credibility_member_months: float = 12_000.0

    def __post_init__(self):
        if self.date_field not in ("encounter", "paid"):
            raise PipelineError(f"unknown date_field: {self.date_field!r}")
        if len(self.prevalence_thresholds) < 1:
            raise PipelineError("need at least one prevalence threshold")
        if not 0.0 < self.high_cost_quantile < 1.0:
            raise PipelineError("high_cost_quantile must lie in (0, 1)")
        if self.plateau_tolerance < 0:
            raise PipelineError("plateau_tolerance must be non-negative")
        if self.late_months < 1:
            raise PipelineError("late_months must be positive")


# ---------------------------------------------------------------------------
# group aggregates (observable experience + realized projection truth)


@dataclass
class GroupAggregates:
    group_id: str
    exp_allowed: float = 0.0
    exp_paid: float = 0.0
    exp_medical: float = 0.0
    exp_pharmacy: float = 0.0
    exp_capitation: float = 0.0
    late_allowed: float = 0.0
    exp_member_months: int = 0
    members_end: int = 0
    members_at_start: int = 0
    roster_size: int = 0
    coverage_days_total: int = 0
    covered_member_count: int = 0
    member_exp_cost: dict[str, float] = field(default_factory=dict)
    proj_allowed: float = 0.0
    proj_member_months: int = 0

    @property
    def exp_pmpm(self) -> float:
        return self.exp_allowed / self.exp_member_months if self.exp_member_months else 0.0

    @property
    def proj_pmpm(self) -> float:
        return self.proj_allowed / self.proj_member_months if self.proj_member_months else 0.0

    @property
    def cost_share(self) -> float:
        if self.exp_allowed <= 0:
            return 0.0
        return min(1.0, max(0.0, 1.0 - self.exp_paid / self.exp_allowed))


def _covered_days(record: PatientRecord, group_id: str, window: tuple[date, date]) -> int:
    days = 0
    for span in record.coverages:
        if span.group_id != group_id:
            continue
        lo = max(span.start_date, window[0])
        hi = min(span.end_date, window[1])
        if hi >= lo:
            days += (hi - lo).days + 1
    return days


def compute_group_aggregates(
    book: Book,
    slices: Sequence[GroupSlice],
    late_months: int = 4,
) -> dict[str, GroupAggregates]:
    """One pass over the book collecting per-group window aggregates.

    Claims attribute to a group when the member is covered by it on the
    first of the encounter month, matching the member-month rule, so
    cost and exposure share a denominator convention. Projection fields
    are only meaningful on books where the projection window already
    happened (training and evaluation time).
    """
    slice_by_group = {s.group_id: s for s in slices}
    rosters = {s.group_id: set(s.roster) for s in slices}
    out = {gid: GroupAggregates(group_id=gid) for gid in slice_by_group}
    for record in book:
        group_ids = {span.group_id for span in record.coverages}
        for gid in group_ids:
            s = slice_by_group.get(gid)
            if s is None:
                continue
            agg = out[gid]
            exp_window = s.experience_window
            late_start = add_months(s.slice_date + timedelta(days=1), -late_months)
            mm = member_months(record, exp_window, gid)
            agg.exp_member_months += mm
            agg.proj_member_months += member_months(record, s.projection_window, gid)
            if record.covered_on(s.slice_date, gid):
                agg.members_end += 1
            if record.covered_on(s.experience_start, gid):
                agg.members_at_start += 1
            if record.member_id in rosters[gid]:
                agg.roster_size += 1
            days = _covered_days(record, gid, exp_window)
            if days > 0:
                agg.coverage_days_total += days
                agg.covered_member_count += 1
                agg.member_exp_cost.setdefault(record.member_id, 0.0)
            for claim in record.claims:
                d = claim.encounter_date
                first = date(month_index(d) // 12, month_index(d) % 12 + 1, 1)
                if not record.covered_on(first, gid):
                    continue
                if exp_window[0] <= d <= exp_window[1]:
                    agg.exp_allowed += claim.allowed_amount
                    agg.exp_paid += claim.paid_amount
                    if claim.is_pharmacy:
                        agg.exp_pharmacy += claim.allowed_amount
                    elif claim.is_capitation:
                        agg.exp_capitation += claim.allowed_amount
                    else:
                        agg.exp_medical += claim.allowed_amount
                    agg.member_exp_cost[record.member_id] = (
                        agg.member_exp_cost.get(record.member_id, 0.0) + claim.allowed_amount
                    )
                    if late_start <= d:
                        agg.late_allowed += claim.allowed_amount
                if s.projection_window[0] <= d <= s.projection_window[1]:
                    agg.proj_allowed += claim.allowed_amount
    return out


# ---------------------------------------------------------------------------
# stage one: member model


def extract_roster_vectors(
    book: Book,
    slices: Sequence[GroupSlice],
    date_field: str,
    feature_config: FeatureConfig,
) -> dict[str, list[FeatureVector]]:
    """Censor each roster member at the group slice and featurize.

    Returns group_id -> vectors in roster order. A member on two
    rosters is featurized once per group because the slice (and hence
    the censoring cutoff) may differ.
    """
    by_member = {r.member_id: r for r in book}
    out: dict[str, list[FeatureVector]] = {}
    for s in sorted(slices, key=lambda s: s.group_id):
        vectors = []
        cutoff = s.slice_date + timedelta(days=1)
        for member_id in s.roster:
            record = filter_claims_by_date(by_member[member_id], cutoff, date_field)
            vectors.append(extract_member_features(record, s, feature_config))
        out[s.group_id] = vectors
    return out


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    n_features: int
    test_mse: float
    n_trees: int


@dataclass
class SweepReport:
    rows: list[SweepRow]
    chosen_threshold: float
    best_mse: float

    def to_dict(self) -> dict:
        return {
            "chosen_threshold": self.chosen_threshold,
            "best_mse": self.best_mse,
            "rows": [
                {
                    "threshold": r.threshold,
                    "n_features": r.n_features,
                    "test_mse": r.test_mse,
                    "n_trees": r.n_trees,
                }
                for r in self.rows
            ],
        }


def prevalence_sweep(
    train_vectors: Sequence[FeatureVector],
    train_targets: Sequence[float],
    test_vectors: Sequence[FeatureVector],
    test_targets: Sequence[float],
    config: PipelineConfig,
) -> tuple[SweepReport, FeatureCatalog, GbdtModel]:
    """Refit the member model per prevalence threshold and pick one.

    Error plateaus as rare features enter, so among thresholds whose
    held-out MSE lands within plateau_tolerance of the best, the
    largest threshold (fewest features) wins.
    """
    y_train = np.asarray(train_targets, dtype=np.float64)
    y_test = np.asarray(test_targets, dtype=np.float64)
    rows: list[SweepRow] = []
    fitted: dict[float, tuple[FeatureCatalog, GbdtModel]] = {}
    for threshold in sorted(set(config.prevalence_thresholds), reverse=True):
        catalog = fit_catalog(train_vectors, threshold, config.max_features)
        X_train = build_matrix(train_vectors, catalog)
        X_test = build_matrix(test_vectors, catalog)
        model = gbdt.fit(
            X_train, y_train, X_test, y_test,
            objective="mse", config=config.member_train,
            feature_names=catalog.selected,
        )
        mse = float(np.mean((model.predict(X_test) - y_test) ** 2))
        rows.append(SweepRow(threshold, catalog.n_columns, mse, model.best_iteration))
        fitted[threshold] = (catalog, model)
    best = min(r.test_mse for r in rows)
    chosen = max(
        r.threshold for r in rows if r.test_mse <= best * (1.0 + config.plateau_tolerance)
    )
    report = SweepReport(rows=rows, chosen_threshold=chosen, best_mse=best)
    catalog, model = fitted[chosen]
    return report, catalog, model


def aggregate_members(
    roster_predictions: Mapping[str, Sequence[float]],
) -> tuple[dict[str, float], list[str]]:
    """Mean member-level pmpm prediction per group.

    Returns the map and the list of groups excluded for empty rosters.
    """
    means: dict[str, float] = {}
    empty: list[str] = []
    for gid in sorted(roster_predictions):
        preds = roster_predictions[gid]
        if len(preds) == 0:
            empty.append(gid)
            continue
        means[gid] = float(np.mean(preds))
    if empty:
        log.warning("excluded %d group(s) with empty rosters", len(empty))
    return means, empty


# ---------------------------------------------------------------------------
# stage two: group model


@dataclass(frozen=True)
class GroupFeatureRow:
    group_id: str
    mean_member_prediction: float
    mean_age: float
    member_months_exp: float
    growth: float
    avg_coverage_len: float
    late_cost_fraction: float
    high_cost_fraction: float

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in GROUP_FEATURE_NAMES])


def build_group_features(
    aggregates: Mapping[str, GroupAggregates],
    group_means: Mapping[str, float],
    mean_ages: Mapping[str, float],
    high_cost_cutoff: float,
) -> list[GroupFeatureRow]:
    """Seven observable covariates per group with a member prediction.

    growth is the change in member count across the experience window
    per member month; late_cost_fraction is the share of experience
    cost dated in the final months (0 when the group had no cost);
    high_cost_fraction is the share of the group's experience members
    above the training book's high-cost cutoff.
    """
    rows = []
    for gid in sorted(group_means):
        agg = aggregates[gid]
        if agg.exp_member_months <= 0:
            continue
        n_exp_members = len(agg.member_exp_cost)
        high = sum(1 for v in agg.member_exp_cost.values() if v > high_cost_cutoff)
        rows.append(GroupFeatureRow(
            group_id=gid,
            mean_member_prediction=group_means[gid],
            mean_age=mean_ages.get(gid, 0.0),
            member_months_exp=float(agg.exp_member_months),
            growth=(agg.members_end - agg.members_at_start) / agg.exp_member_months,
            avg_coverage_len=(
                agg.coverage_days_total / agg.covered_member_count
                if agg.covered_member_count else 0.0
            ),
            late_cost_fraction=(
                agg.late_allowed / agg.exp_allowed if agg.exp_allowed > 0 else 0.0
            ),
            high_cost_fraction=high / n_exp_members if n_exp_members else 0.0,
        ))
    return rows


def fit_group_model(
    train_rows: Sequence[GroupFeatureRow],
    train_targets: Sequence[float],
    test_rows: Sequence[GroupFeatureRow],
    test_targets: Sequence[float],
    config: TrainConfig,
    min_rows: int = 30,
) -> tuple[GbdtModel, dict]:
    """Median-seeking boosted model over the seven group covariates.

    Reports held-out MAE of the adjusted predictions next to the
    unadjusted (roster mean) stage-one aggregate so the adjustment's
    value is visible. Constant targets degenerate to a constant model,
    which is flagged rather than an error.
    """
    if len(train_rows) < min_rows:
        raise PipelineError(
            f"group model needs at least {min_rows} training groups, got {len(train_rows)}"
        )
    X_train = np.stack([r.to_array() for r in train_rows])
    y_train = np.asarray(train_targets, dtype=np.float64)
    X_test = np.stack([r.to_array() for r in test_rows]) if test_rows else None
    y_test = np.asarray(test_targets, dtype=np.float64) if test_rows else None
    model = gbdt.fit(
        X_train, y_train, X_test, y_test,
        objective="mae", config=config, feature_names=list(GROUP_FEATURE_NAMES),
    )
    info: dict = {"constant_model": model.is_constant or model.n_features_used() == 0}
    if test_rows:
        adjusted = model.predict(X_test)
        unadjusted = np.array([r.mean_member_prediction for r in test_rows])
        info["test_mae_adjusted"] = float(np.mean(np.abs(adjusted - y_test)))
        info["test_mae_unadjusted"] = float(np.mean(np.abs(unadjusted - y_test)))
    return model, info


# ---------------------------------------------------------------------------
# reference rater


@dataclass(frozen=True)
class BaselineBook:
    """Book-level bases the reference rater derives from training groups."""

    BC_med: float
    BC_cap: float
    BC_ph: float
    cost_share: float
    pooling_level: float
    annual_trend: float
    full_credibility_member_months: float

    def factors(self) -> RatingFactors:
        return RatingFactors(
            BC_med=self.BC_med,
            BC_cap=self.BC_cap,
            BC_ph=self.BC_ph,
            BC_p=self.BC_ph,
            AT=self.annual_trend,
            AT_L=self.annual_trend,
            AT_med=self.annual_trend,
            AT_ph=self.annual_trend,
            x_p=self.pooling_level,
        )

    def to_dict(self) -> dict:
        return {
            "BC_med": self.BC_med,
            "BC_cap": self.BC_cap,
            "BC_ph": self.BC_ph,
            "cost_share": self.cost_share,
            "pooling_level": self.pooling_level,
            "annual_trend": self.annual_trend,
            "full_credibility_member_months": self.full_credibility_member_months,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineBook":
        return cls(**d)


def fit_baseline_book(
    aggregates: Mapping[str, GroupAggregates],
    train_group_ids: Sequence[str],
    config: PipelineConfig,
) -> BaselineBook:
    mm = sum(aggregates[g].exp_member_months for g in train_group_ids)
    if mm <= 0:
        raise PipelineError("training groups carry no experience member months")
    med = sum(aggregates[g].exp_medical for g in train_group_ids)
    cap = sum(aggregates[g].exp_capitation for g in train_group_ids)
    ph = sum(aggregates[g].exp_pharmacy for g in train_group_ids)
    allowed = sum(aggregates[g].exp_allowed for g in train_group_ids)
    paid = sum(aggregates[g].exp_paid for g in train_group_ids)
    share = min(1.0, max(0.0, 1.0 - paid / allowed)) if allowed > 0 else 0.0
    return BaselineBook(
        BC_med=med / mm,
        BC_cap=cap / mm,
        BC_ph=ph / mm,
        cost_share=share,
        pooling_level=config.pooling_level,
        annual_trend=config.baseline_annual_trend,
        full_credibility_member_months=config.full_credibility_member_months,
    )


def baseline_quote(
    agg: GroupAggregates,
    base: BaselineBook,
    midpoint_months: float,
) -> tuple[float, float]:
    """Reference rater's (pmpm, trend) for one group.

    Blends the group's trended experience with the book manual rate by
    square-root credibility; both rates price the group's experience
    exposure, so dividing by experience member months gives pmpm and
    dividing that by experience pmpm gives the quoted trend.
    """
    if agg.exp_member_months <= 0 or agg.exp_allowed <= 0:
        raise PipelineError(f"group {agg.group_id} has no usable experience")
    split = shock_split(agg.member_exp_cost.values(), base.pooling_level)
    factors = base.factors()
    share = base.cost_share
    exp = GroupExperience(
        TC=split.TC, TSC=split.TSC, n_s=split.n_s,
        mm=float(agg.exp_member_months), m=midpoint_months, S=share,
    )
    census = GroupCensus(mm=float(agg.exp_member_months), m=midpoint_months, S=share)
    er = experience_rate(exp, factors)
    mr = manual_rate(census, factors)
    curve = CredibilityCurve(base.full_credibility_member_months)
    c = credibility(float(agg.exp_member_months), curve)
    total = blend(er, mr, c)
    pmpm = total / agg.exp_member_months
    return pmpm, pmpm / agg.exp_pmpm


def recommend(model_trend: float, baseline_trend: float | None) -> str:
    """Stop-light rule: green exactly when the model undercuts the rater."""
    if baseline_trend is None or baseline_trend <= 0:
        return "yellow_red"
    return "green" if model_trend / baseline_trend < 1.0 else "yellow_red"


def _midpoint_months(s: GroupSlice) -> float:
    """Months between experience and projection period midpoints."""
    exp_mid = (month_index(s.experience_start) + month_index(s.slice_date)) / 2.0
    proj_mid = (month_index(s.projection_start) + month_index(s.projection_end)) / 2.0
    return proj_mid - exp_mid


# ---------------------------------------------------------------------------
# persisted pipeline model


@dataclass
class PipelineModel:
    member_model: GbdtModel
    group_model: GbdtModel
    catalog: FeatureCatalog
    baseline: BaselineBook
    high_cost_cutoff: float
    date_field: str
    feature_config: FeatureConfig
    late_months: int
    chosen_threshold: float

    MEMBER_MODEL = "member_model.json"
    GROUP_MODEL = "group_model.json"
    CATALOG = "catalog.csv"
    META = "pipeline.json"

    def save(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        self.member_model.save(os.path.join(out_dir, self.MEMBER_MODEL))
        self.group_model.save(os.path.join(out_dir, self.GROUP_MODEL))
        self.catalog.to_csv(os.path.join(out_dir, self.CATALOG))
        meta = {
            "format_version": 1,
            "baseline": self.baseline.to_dict(),
            "high_cost_cutoff": self.high_cost_cutoff,
            "date_field": self.date_field,
            "late_months": self.late_months,
            "chosen_threshold": self.chosen_threshold,
            "feature_config": {
                "grouper_prefix": dict(self.feature_config.grouper_prefix),
                "trend_p_threshold": self.feature_config.trend_p_threshold,
                "fluctuation_min_changes": self.feature_config.fluctuation_min_changes,
            },
        }
        with open(os.path.join(out_dir, self.META), "w") as fh:
            json.dump(meta, fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, model_dir: str) -> "PipelineModel":
        with open(os.path.join(model_dir, cls.META)) as fh:
            meta = json.load(fh)
        if meta.get("format_version") != 1:
            raise PipelineError("unsupported pipeline format version")
        member_model = GbdtModel.load(os.path.join(model_dir, cls.MEMBER_MODEL))
        group_model = GbdtModel.load(os.path.join(model_dir, cls.GROUP_MODEL))
        catalog = FeatureCatalog.from_csv(
            os.path.join(model_dir, cls.CATALOG),
            threshold=meta["chosen_threshold"],
        )
        if catalog.selected != (member_model.feature_names or []):
            raise PipelineError("catalog does not match the member model's features")
        fc = meta["feature_config"]
        return cls(
            member_model=member_model,
            group_model=group_model,
            catalog=catalog,
            baseline=BaselineBook.from_dict(meta["baseline"]),
            high_cost_cutoff=meta["high_cost_cutoff"],
            date_field=meta["date_field"],
            feature_config=FeatureConfig(
                grouper_prefix=fc["grouper_prefix"],
                trend_p_threshold=fc["trend_p_threshold"],
                fluctuation_min_changes=fc["fluctuation_min_changes"],
            ),
            late_months=meta["late_months"],
            chosen_threshold=meta["chosen_threshold"],
        )


# ---------------------------------------------------------------------------
# train / predict entry points


@dataclass
class TrainResult:
    model: PipelineModel
    sweep: SweepReport
    split: SplitAssignment
    targets: TargetTable
    group_info: dict
    n_group_rows: dict[str, int]

    def summary(self) -> dict:
        return {
            "sweep": self.sweep.to_dict(),
            "split_counts": dict(self.split.counts),
            "target_rows": len(self.targets.rows),
            "target_dropped": dict(self.targets.dropped),
            "group_model": self.group_info,
            "group_rows": self.n_group_rows,
        }


@dataclass(frozen=True)
class GroupPrediction:
    group_id: str
    predicted_pmpm_allowed: float
    predicted_allowed_total: float  # pmpm * 12 * members at end of experience
    predicted_allowed_trend: float
    baseline_pmpm: float
    baseline_trend: float
    recommendation: str  # "green" | "yellow_red"


@dataclass
class PredictResult:
    predictions: list[GroupPrediction]
    skips: list[tuple[str, str]]  # (group_id, reason)
    member_predictions: dict[str, dict[str, float]]  # gid -> member -> pmpm

    def by_group(self) -> dict[str, GroupPrediction]:
        return {p.group_id: p for p in self.predictions}


def _mean_roster_ages(
    book: Book, slices: Sequence[GroupSlice]
) -> dict[str, float]:
    by_member = {r.member_id: r for r in book}
    ages = {}
    for s in slices:
        if s.roster:
            ages[s.group_id] = float(np.mean([
                by_member[m].age_on(s.slice_date) for m in s.roster
            ]))
    return ages


def train_pipeline(
    book: Book,
    slices: Sequence[GroupSlice],
    config: PipelineConfig | None = None,
) -> TrainResult:
    """Fit both stages and the reference rater on one historical book."""
    cfg = config or PipelineConfig()
    slices = sorted(slices, key=lambda s: s.group_id)
    split = split_groups([s.group_id for s in slices], cfg.split_ratios, cfg.split_seed)
    targets = training_targets(book, slices, split, cfg.date_field)

    roster_vectors = extract_roster_vectors(book, slices, cfg.date_field, cfg.feature_config)
    vector_by_member: dict[str, FeatureVector] = {}
    for s in slices:
        for vec in roster_vectors[s.group_id]:
            vector_by_member.setdefault(vec.member_id, vec)

    train_targets = targets.for_split("train")
    test_targets = targets.for_split("test")
    if not train_targets or not test_targets:
        raise PipelineError("need member targets in both train and test splits")
    sweep, catalog, member_model = prevalence_sweep(
        [vector_by_member[t.member_id] for t in train_targets],
        [t.target_pmpm for t in train_targets],
        [vector_by_member[t.member_id] for t in test_targets],
        [t.target_pmpm for t in test_targets],
        cfg,
    )

    roster_preds: dict[str, np.ndarray] = {}
    for s in slices:
        vecs = [project(v, catalog) for v in roster_vectors[s.group_id]]
        X = build_matrix(vecs, catalog)
        roster_preds[s.group_id] = member_model.predict(X) if len(vecs) else np.empty(0)
    group_means, _empty = aggregate_members(roster_preds)

    aggregates = compute_group_aggregates(book, slices, cfg.late_months)
    train_gids = [g for g in split.groups("train") if g in group_means]
    pool = [
        cost
        for gid in train_gids
        for cost in aggregates[gid].member_exp_cost.values()
    ]
    if not pool:
        raise PipelineError("no experience members in training groups")
    cutoff = float(np.quantile(np.asarray(pool), cfg.high_cost_quantile))

    mean_ages = _mean_roster_ages(book, slices)
    rows = build_group_features(aggregates, group_means, mean_ages, cutoff)
    rows_by_gid = {r.group_id: r for r in rows}

    def rows_targets(split_name: str) -> tuple[list[GroupFeatureRow], list[float]]:
        xs, ys = [], []
        for gid in split.groups(split_name):
            row = rows_by_gid.get(gid)
            agg = aggregates[gid]
            # only groups still active during the projection teach the
            # group stage what realized pmpm looks like
            if row is None or agg.proj_member_months <= 0:
                continue
            xs.append(row)
            ys.append(agg.proj_pmpm)
        return xs, ys

    X_train_rows, y_train = rows_targets("train")
    X_test_rows, y_test = rows_targets("test")
    group_model, group_info = fit_group_model(
        X_train_rows, y_train, X_test_rows, y_test,
        cfg.group_train, cfg.min_group_rows,
    )
    baseline = fit_baseline_book(aggregates, train_gids, cfg)

    model = PipelineModel(
        member_model=member_model,
        group_model=group_model,
        catalog=catalog,
        baseline=baseline,
        high_cost_cutoff=cutoff,
        date_field=cfg.date_field,
        feature_config=cfg.feature_config,
        late_months=cfg.late_months,
        chosen_threshold=sweep.chosen_threshold,
    )
    return TrainResult(
        model=model,
        sweep=sweep,
        split=split,
        targets=targets,
        group_info=group_info,
        n_group_rows={"train": len(X_train_rows), "test": len(X_test_rows)},
    )


def predict_pipeline(
    model: PipelineModel,
    book: Book,
    slices: Sequence[GroupSlice],
) -> PredictResult:
    """Score a book of renewal groups with a fitted pipeline."""
    slices = sorted(slices, key=lambda s: s.group_id)
    roster_vectors = extract_roster_vectors(
        book, slices, model.date_field, model.feature_config
    )
    member_preds: dict[str, dict[str, float]] = {}
    roster_means: dict[str, np.ndarray] = {}
    for s in slices:
        vecs = [project(v, model.catalog) for v in roster_vectors[s.group_id]]
        X = build_matrix(vecs, model.catalog)
        preds = model.member_model.predict(X) if len(vecs) else np.empty(0)
        roster_means[s.group_id] = preds
        member_preds[s.group_id] = {
            v.member_id: float(p) for v, p in zip(vecs, preds)
        }
    group_means, empty = aggregate_members(roster_means)

    aggregates = compute_group_aggregates(book, slices, model.late_months)
    mean_ages = _mean_roster_ages(book, slices)
    rows = build_group_features(aggregates, group_means, mean_ages, model.high_cost_cutoff)
    skips: list[tuple[str, str]] = [(gid, "empty_roster") for gid in empty]

    predictions: list[GroupPrediction] = []
    slice_by_gid = {s.group_id: s for s in slices}
    rows_by_gid = {r.group_id: r for r in rows}
    for gid in sorted(group_means):
        agg = aggregates[gid]
        row = rows_by_gid.get(gid)
        if row is None or agg.exp_member_months <= 0:
            skips.append((gid, "no_experience_member_months"))
            continue
        if agg.exp_allowed <= 0:
            skips.append((gid, "zero_experience_cost"))
            continue
        pmpm = max(0.0, float(model.group_model.predict(row.to_array()[None, :])[0]))
        s = slice_by_gid[gid]
        base_pmpm, base_trend = baseline_quote(agg, model.baseline, _midpoint_months(s))
        trend = pmpm / agg.exp_pmpm
        predictions.append(GroupPrediction(
            group_id=gid,
            predicted_pmpm_allowed=pmpm,
            predicted_allowed_total=pmpm * 12.0 * agg.members_end,
            predicted_allowed_trend=trend,
            baseline_pmpm=base_pmpm,
            baseline_trend=base_trend,
            recommendation=recommend(trend, base_trend),
        ))
    return PredictResult(
        predictions=predictions, skips=skips, member_predictions=member_preds
    )


def explain_groups(
    model: PipelineModel,
    book: Book,
    slices: Sequence[GroupSlice],
    top_n: int = 10,
) -> dict[str, list[tuple[str, float]]]:
    """Top feature contributions per group in pmpm dollars.

    Member-level attributions are averaged over the roster, mirroring
    how member predictions aggregate into the group's pmpm, so each
    contribution reads as dollars pmpm added to or removed from the
    group's rate by that feature.
    """
    slices = sorted(slices, key=lambda s: s.group_id)
    roster_vectors = extract_roster_vectors(
        book, slices, model.date_field, model.feature_config
    )
    out: dict[str, list[tuple[str, float]]] = {}
    names = model.catalog.selected
    for s in slices:
        vecs = [project(v, model.catalog) for v in roster_vectors[s.group_id]]
        if not vecs:
            continue
        X = build_matrix(vecs, model.catalog)
        explanation = gbdt.explain(model.member_model, X)
        mean_phi = explanation.phi.mean(axis=0)
        order = np.argsort(-np.abs(mean_phi), kind="stable")[:top_n]
        out[s.group_id] = [(names[j], float(mean_phi[j])) for j in order]
    return out
