"""Group-level metrics and pricing KPIs.

Regression metrics (normalized pmpm MAE, R squared, Gini) treat each
group as one observation. The lift table ranks groups by the ratio of
the model's predicted cost trend to the reference rater's trend, cuts
the ranking into near-equal bins, and reports each bin's actual-to-
expected cost ratio normalized by the book-wide ratio. Concession
reports score the "drop the quote" decision rule against realized
cost.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "EvalError",
    "GiniResult",
    "LiftBin",
    "LiftResult",
    "ConcessionReport",
    "EvalReport",
    "normalized_mae",
    "r_squared",
    "gini",
    "lift_table",
    "concession_report",
    "build_report",
]


class EvalError(ValueError):
    pass


def _as_array(values: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise EvalError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise EvalError(f"{name} contains non-finite values")
    return arr


def _aligned(*pairs: tuple[Sequence[float], str]) -> list[np.ndarray]:
    arrays = [_as_array(v, n) for v, n in pairs]
    sizes = {a.size for a in arrays}
    if len(sizes) != 1:
        raise EvalError("input arrays must have equal length")
    return arrays


def normalized_mae(
    predicted_pmpm: Sequence[float],
    true_pmpm: Sequence[float],
    member_months: Sequence[float],
) -> float:
    """Mean absolute pmpm error divided by the book-wide pmpm cost.

    The normalizer is total cost over total member months, so the
    metric is invariant to rescaling all costs by a constant and
    comparable across books priced in different cost conventions.
    """
    pred, true, mm = _aligned(
        (predicted_pmpm, "predicted_pmpm"),
        (true_pmpm, "true_pmpm"),
        (member_months, "member_months"),
    )
    if pred.size == 0:
        raise EvalError("need at least one group")
    if np.any(mm < 0):
        raise EvalError("member_months must be non-negative")
    total_mm = float(mm.sum())
    if total_mm <= 0:
        raise EvalError("zero total member months")
    global_pmpm = float((true * mm).sum()) / total_mm
    if global_pmpm == 0:
        raise EvalError("zero book-wide pmpm cost")
    return float(np.abs(pred - true).mean()) / global_pmpm


def r_squared(predicted: Sequence[float], true: Sequence[float]) -> float:
    pred, y = _aligned((predicted, "predicted"), (true, "true"))
    if y.size < 2:
        raise EvalError("need at least two groups")
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else -math.inf
    return 1.0 - ss_res / ss_tot


@dataclass(frozen=True)
class GiniResult:
    value: float
    degenerate: bool = False


def gini(
    predicted: Sequence[float],
    true: Sequence[float],
    weights: Sequence[float] | None = None,
) -> GiniResult:
    """Prediction-ranked Lorenz Gini.

    Sort by prediction ascending (stable, so ties keep input order),
    accumulate weighted true cost along the ranking, and return
    1 - 2 * AUC of the Lorenz curve through (0, 0) and (1, 1). Positive
    values mean the prediction ranks cost well; reversing a strict
    ranking negates the value. All-equal predictions or zero total
    cost make the curve meaningless: value 0 with the degenerate flag.
    """
    pred, y = _aligned((predicted, "predicted"), (true, "true"))
    if weights is None:
        w = np.ones_like(y)
    else:
        (w,) = _aligned((weights, "weights"))
        if w.size != y.size:
            raise EvalError("input arrays must have equal length")
        if np.any(w <= 0):
            raise EvalError("weights must be positive")
    if y.size < 2:
        raise EvalError("need at least two groups")
    total_w = float(w.sum())
    total_cost = float((y * w).sum())
    if np.all(pred == pred[0]) or total_cost == 0.0:
        return GiniResult(0.0, degenerate=True)
    order = np.argsort(pred, kind="stable")
    x = np.concatenate([[0.0], np.cumsum(w[order]) / total_w])
    lorenz = np.concatenate([[0.0], np.cumsum(y[order] * w[order]) / total_cost])
    auc = float(np.sum((x[1:] - x[:-1]) * (lorenz[1:] + lorenz[:-1]) * 0.5))
    return GiniResult(1.0 - 2.0 * auc)


# ---------------------------------------------------------------------------
# lift table


@dataclass(frozen=True)
class LiftBin:
    index: int  # 1-based, lowest trend ratio first
    group_ids: tuple[str, ...]
    actual_paid: float
    expected_paid: float
    ae: float
    ae_normalized: float


@dataclass(frozen=True)
class LiftResult:
    bins: tuple[LiftBin, ...]
    oracle_bins: tuple[LiftBin, ...]
    global_ae: float
    oracle_monotone: bool

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["decile_index", "ae_model", "ae_oracle"])
            for model_bin, oracle_bin in zip(self.bins, self.oracle_bins):
                writer.writerow([
                    model_bin.index,
                    repr(model_bin.ae_normalized),
                    repr(oracle_bin.ae_normalized),
                ])

    def to_dict(self) -> dict:
        def bins_out(bins: tuple[LiftBin, ...]) -> list[dict]:
            return [
                {
                    "index": b.index,
                    "n_groups": len(b.group_ids),
                    "group_ids": list(b.group_ids),
                    "actual_paid": b.actual_paid,
                    "expected_paid": b.expected_paid,
                    "ae": b.ae,
                    "ae_normalized": b.ae_normalized,
                }
                for b in bins
            ]

        return {
            "global_ae": self.global_ae,
            "oracle_monotone": self.oracle_monotone,
            "model": bins_out(self.bins),
            "oracle": bins_out(self.oracle_bins),
        }


def _rank_bins(
    keys: np.ndarray,
    group_ids: Sequence[str],
    actual: np.ndarray,
    expected: np.ndarray,
    global_ae: float,
    n_bins: int,
) -> tuple[LiftBin, ...]:
    order = np.argsort(keys, kind="stable")
    chunks = np.array_split(order, n_bins)
    bins = []
    for i, chunk in enumerate(chunks, start=1):
        a = float(actual[chunk].sum())
        e = float(expected[chunk].sum())
        if e <= 0:
            raise EvalError(f"bin {i} has non-positive expected paid")
        bins.append(
            LiftBin(
                index=i,
                group_ids=tuple(group_ids[j] for j in chunk),
                actual_paid=a,
                expected_paid=e,
                ae=a / e,
                ae_normalized=(a / e) / global_ae,
            )
        )
    return tuple(bins)


def lift_table(
    group_ids: Sequence[str],
    model_trend: Sequence[float],
    baseline_trend: Sequence[float],
    actual_paid: Sequence[float],
    expected_paid: Sequence[float],
    true_trend: Sequence[float] | None = None,
    n_bins: int = 10,
) -> LiftResult:
    """Rank groups by trend ratio and report per-bin normalized A/E.

    Bins partition the ranking into n_bins near-equal chunks (sizes
    differ by at most one). A/E per bin is total actual cost over the
    reference rater's total expected cost, then divided by the
    book-wide A/E so a value below one marks a bin priced above its
    realized cost. The oracle rows re-rank by the true trend; when
    true_trend is omitted it is inferred from actual over expected
    cost, which makes the oracle sequence exactly monotone.
    """
    mt, bt, actual, expected = _aligned(
        (model_trend, "model_trend"),
        (baseline_trend, "baseline_trend"),
        (actual_paid, "actual_paid"),
        (expected_paid, "expected_paid"),
    )
    n = mt.size
    if len(group_ids) != n:
        raise EvalError("group_ids length mismatch")
    if n < n_bins:
        raise EvalError(
            f"need at least {n_bins} groups for {n_bins} bins; "
            "rerun with quintiles (5 bins) for small books"
        )
    if np.any(bt <= 0):
        raise EvalError("baseline trends must be positive")
    if np.any(expected <= 0):
        raise EvalError("expected paid must be positive")
    total_expected = float(expected.sum())
    global_ae = float(actual.sum()) / total_expected
    if global_ae == 0:
        raise EvalError("zero book-wide actual paid")

    model_ratio = mt / bt
    if true_trend is None:
        oracle_ratio = actual / expected
    else:
        (tt,) = _aligned((true_trend, "true_trend"))
        if tt.size != n:
            raise EvalError("input arrays must have equal length")
        oracle_ratio = tt / bt

    bins = _rank_bins(model_ratio, group_ids, actual, expected, global_ae, n_bins)
    oracle_bins = _rank_bins(oracle_ratio, group_ids, actual, expected, global_ae, n_bins)
    oracle_ae = [b.ae_normalized for b in oracle_bins]
    monotone = all(a <= b + 1e-12 for a, b in zip(oracle_ae, oracle_ae[1:]))
    return LiftResult(
        bins=bins,
        oracle_bins=oracle_bins,
        global_ae=global_ae,
        oracle_monotone=monotone,
    )


# ---------------------------------------------------------------------------
# concession scoring


@dataclass(frozen=True)
class ConcessionReport:
    """Confusion table for the rate-drop decision rule.

    A group is predicted a concession opportunity when its predicted
    trend ratio falls below rule_threshold, and actually is one when
    its true trend ratio falls below 1 - level. Precision or recall is
    None when its denominator is empty.
    """

    level: float
    rule_threshold: float
    true_positive: int
    false_positive: int
    false_negative: int
    true_negative: int

    @property
    def n_groups(self) -> int:
        return (
            self.true_positive + self.false_positive
            + self.false_negative + self.true_negative
        )

    @property
    def precision(self) -> float | None:
        denom = self.true_positive + self.false_positive
        return self.true_positive / denom if denom else None

    @property
    def recall(self) -> float | None:
        denom = self.true_positive + self.false_negative
        return self.true_positive / denom if denom else None

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "rule_threshold": self.rule_threshold,
            "precision": self.precision,
            "recall": self.recall,
            "true_positive": self.true_positive,
            "false_positive": self.false_positive,
            "false_negative": self.false_negative,
            "true_negative": self.true_negative,
        }


def concession_report(
    predicted_ratio: Sequence[float],
    true_ratio: Sequence[float],
    level: float,
    rule_threshold: float = 1.0,
) -> ConcessionReport:
    pred, true = _aligned(
        (predicted_ratio, "predicted_ratio"), (true_ratio, "true_ratio")
    )
    if pred.size == 0:
        raise EvalError("need at least one group")
    if not 0.0 < level < 1.0:
        raise EvalError("level must lie in (0, 1)")
    predicted_pos = pred < rule_threshold
    actual_pos = true < 1.0 - level
    return ConcessionReport(
        level=level,
        rule_threshold=rule_threshold,
        true_positive=int(np.sum(predicted_pos & actual_pos)),
        false_positive=int(np.sum(predicted_pos & ~actual_pos)),
        false_negative=int(np.sum(~predicted_pos & actual_pos)),
        true_negative=int(np.sum(~predicted_pos & ~actual_pos)),
    )


# ---------------------------------------------------------------------------
# combined report


@dataclass
class EvalReport:
    n_groups: int
    normalized_mae: float
    r_squared: float
    gini: float
    gini_degenerate: bool
    gini_oracle: float
    gini_normalized: float | None
    lift: LiftResult | None
    concessions: list[ConcessionReport] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_groups": self.n_groups,
            "normalized_mae": self.normalized_mae,
            "r_squared": self.r_squared,
            "gini": self.gini,
            "gini_degenerate": self.gini_degenerate,
            "gini_oracle": self.gini_oracle,
            "gini_normalized": self.gini_normalized,
            "lift": self.lift.to_dict() if self.lift is not None else None,
            "concessions": [c.to_dict() for c in self.concessions],
            "notes": self.notes,
        }


def build_report(
    group_ids: Sequence[str],
    predicted_pmpm: Sequence[float],
    true_pmpm: Sequence[float],
    member_months: Sequence[float],
    model_trend: Sequence[float] | None = None,
    baseline_trend: Sequence[float] | None = None,
    actual_paid: Sequence[float] | None = None,
    expected_paid: Sequence[float] | None = None,
    concession_levels: Sequence[float] = (0.05, 0.10),
    rule_threshold: float = 1.0,
    n_lift_bins: int = 10,
) -> EvalReport:
    """Assemble the full metric report from aligned per-group arrays.

    The lift table and concession blocks need the trend inputs; when
    they are omitted only the regression metrics are filled in. The
    normalized Gini (model Gini over the true-ranked oracle Gini) is
    None when the oracle value is zero or degenerate.
    """
    nmae = normalized_mae(predicted_pmpm, true_pmpm, member_months)
    r2 = r_squared(predicted_pmpm, true_pmpm)
    g = gini(predicted_pmpm, true_pmpm, member_months)
    g_oracle = gini(true_pmpm, true_pmpm, member_months)
    g_norm = None
    if not g_oracle.degenerate and g_oracle.value != 0:
        g_norm = g.value / g_oracle.value

    notes: list[str] = []
    if g.degenerate:
        notes.append("gini degenerate: all predictions equal or zero total cost")

    lift = None
    concessions: list[ConcessionReport] = []
    trend_inputs = (model_trend, baseline_trend, actual_paid, expected_paid)
    if all(v is not None for v in trend_inputs):
        lift = lift_table(
            group_ids, model_trend, baseline_trend, actual_paid, expected_paid,
            n_bins=n_lift_bins,
        )
        mt, bt = _aligned((model_trend, "model_trend"), (baseline_trend, "baseline_trend"))
        actual, expected = _aligned((actual_paid, "actual_paid"), (expected_paid, "expected_paid"))
        predicted_ratio = mt / bt
        true_ratio = actual / expected
        for level in concession_levels:
            concessions.append(
                concession_report(predicted_ratio, true_ratio, level, rule_threshold)
            )

    return EvalReport(
        n_groups=len(group_ids),
        normalized_mae=nmae,
        r_squared=r2,
        gini=g.value,
        gini_degenerate=g.degenerate,
        gini_oracle=g_oracle.value,
        gini_normalized=g_norm,
        lift=lift,
        concessions=concessions,
        notes=notes,
    )
