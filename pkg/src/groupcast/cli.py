"""Command-line workflow: synth, train, predict, evaluate, explain.

Every command is deterministic given identical inputs and seed. Exit
codes: 0 success, 1 a quality gate failed (QA reconciliation),
2 usage or input errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from datetime import date

from .config import ConfigError, RunConfig, load_config
from .evaluate import EvalError, build_report
from .features import FeatureConfig
from .gbdt import TrainConfig
from .pipeline import (
    PipelineConfig,
    PipelineError,
    PipelineModel,
    compute_group_aggregates,
    explain_groups,
    predict_pipeline,
    train_pipeline,
)
from .qa_oracle import qa_fields_from_csv
from .records import (
    IngestResult,
    compute_qa_fields,
    ingest_book,
    write_rejects,
)
from .slicing import SliceError, SliceSpec, resolve_slices
from .synth import SynthConfig, generate

__all__ = ["main"]

PREDICTION_COLUMNS = [
    "group_id",
    "n_members_end_experience",
    "member_months_experience",
    "true_allowed_experience",
    "predicted_allowed_projection",
    "predicted_pmpm",
    "predicted_trend",
    "recommendation",
    "baseline_pmpm",
    "baseline_trend",
]


# ---------------------------------------------------------------------------
# config -> dataclass builders


def _synth_config(cfg: RunConfig) -> SynthConfig:
    base = SynthConfig()
    return SynthConfig(
        seed=cfg.get_int("synth.seed", base.seed),
        n_groups=cfg.get_int("synth.n_groups", base.n_groups),
        group_size_median=cfg.get_float("synth.group_size_median", base.group_size_median),
        group_size_sigma=cfg.get_float("synth.group_size_sigma", base.group_size_sigma),
        min_group_size=cfg.get_int("synth.min_group_size", base.min_group_size),
        renewal_date=cfg.get_date("synth.renewal_date", base.renewal_date),
        renewal_spread_months=cfg.get_int("synth.renewal_spread_months", base.renewal_spread_months),
        experience_months=cfg.get_int("synth.experience_months", base.experience_months),
        blackout_months=cfg.get_int("synth.blackout_months", base.blackout_months),
        projection_months=cfg.get_int("synth.projection_months", base.projection_months),
        history_months=cfg.get_int("synth.history_months", base.history_months),
        monthly_drop_prob=cfg.get_float("synth.monthly_drop_prob", base.monthly_drop_prob),
        monthly_add_rate=cfg.get_float("synth.monthly_add_rate", base.monthly_add_rate),
        annual_cost_trend=cfg.get_float("synth.annual_cost_trend", base.annual_cost_trend),
        shock_rate=cfg.get_float("synth.shock_rate", base.shock_rate),
        pharmacy_monthly_prob=cfg.get_float("synth.pharmacy_monthly_prob", base.pharmacy_monthly_prob),
        reversal_rate=cfg.get_float("synth.reversal_rate", base.reversal_rate),
        concession_fraction=cfg.get_float("synth.concession_fraction", base.concession_fraction),
    )


def _train_config(cfg: RunConfig, prefix: str, base: TrainConfig) -> TrainConfig:
    return TrainConfig(
        num_trees=cfg.get_int(f"{prefix}.num_trees", base.num_trees),
        learning_rate=cfg.get_float(f"{prefix}.learning_rate", base.learning_rate),
        max_leaves=cfg.get_int(f"{prefix}.max_leaves", base.max_leaves),
        min_data_in_leaf=cfg.get_int(f"{prefix}.min_data_in_leaf", base.min_data_in_leaf),
        max_bins=cfg.get_int(f"{prefix}.max_bins", base.max_bins),
        early_stopping_rounds=cfg.get_int(f"{prefix}.early_stopping_rounds", base.early_stopping_rounds),
        l2_reg=cfg.get_float(f"{prefix}.l2_reg", base.l2_reg),
        seed=cfg.get_int(f"{prefix}.seed", base.seed),
    )


def _pipeline_config(cfg: RunConfig, date_field: str | None) -> PipelineConfig:
    base = PipelineConfig()
    feature_base = FeatureConfig()
    features = FeatureConfig(
        trend_p_threshold=cfg.get_float("features.trend_p_threshold", feature_base.trend_p_threshold),
        fluctuation_min_changes=cfg.get_int("features.fluctuation_min_changes", feature_base.fluctuation_min_changes),
    )
    return PipelineConfig(
        date_field=date_field or cfg.get("pipeline.date_field", base.date_field),
        prevalence_thresholds=cfg.get_floats("pipeline.prevalence_thresholds", base.prevalence_thresholds),
        plateau_tolerance=cfg.get_float("pipeline.plateau_tolerance", base.plateau_tolerance),
        max_features=cfg.get_int("pipeline.max_features", base.max_features),
        member_train=_train_config(cfg, "member", base.member_train),
        group_train=_train_config(cfg, "group", base.group_train),
        feature_config=features,
        split_seed=cfg.get_int("pipeline.split_seed", base.split_seed),
        high_cost_quantile=cfg.get_float("pipeline.high_cost_quantile", base.high_cost_quantile),
        late_months=cfg.get_int("pipeline.late_months", base.late_months),
        min_group_rows=cfg.get_int("pipeline.min_group_rows", base.min_group_rows),
        pooling_level=cfg.get_float("pipeline.pooling_level", base.pooling_level),
        baseline_annual_trend=cfg.get_float("pipeline.baseline_annual_trend", base.baseline_annual_trend),
        full_credibility_member_months=cfg.get_float(
            "pipeline.full_credibility_member_months", base.full_credibility_member_months
        ),
    )


def _slice_spec(cfg: RunConfig, args) -> tuple[SliceSpec, dict[str, date] | None]:
    renewal_table = None
    table_path = getattr(args, "renewal_table", None) or cfg.get("slice.renewal_table")
    renewal = getattr(args, "renewal", None)
    if renewal is not None:
        renewal = date.fromisoformat(renewal)
    else:
        renewal = cfg.get_date("slice.renewal_date")
    if table_path:
        renewal_table = {}
        with open(table_path, newline="") as fh:
            for row in csv.DictReader(fh):
                renewal_table[row["group_id"].strip()] = date.fromisoformat(
                    row["renewal_date"].strip()
                )
        mode = "dynamic"
    elif renewal is not None:
        mode = "fixed"
    else:
        raise ConfigError(
            "a renewal date is required: pass --renewal, --renewal-table, "
            "or set slice.renewal_date"
        )
    spec = SliceSpec(
        mode=mode,
        renewal_date=renewal,
        blackout_months=cfg.get_int("slice.blackout_months", 4),
        experience_months=cfg.get_int("slice.experience_months", 12),
        projection_months=cfg.get_int("slice.projection_months", 12),
    )
    return spec, renewal_table


def _ingest(args, out_dir: str | None = None) -> IngestResult:
    result = ingest_book(args.claims, args.eligibility, args.labs)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for source in ("claims", "eligibility", "labs"):
            write_rejects(
                result.rejects_for(source), source,
                os.path.join(out_dir, f"rejects_{source}.csv"),
            )
        n = len(result.rejects)
        if n:
            print(f"ingest: {n} rejected row(s), see rejects_*.csv", file=sys.stderr)
    return result


def _write_qa_csv(path: str, fields) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "group_id", "n_members_end_experience", "member_months_experience",
            "true_allowed_experience", "predicted_allowed_projection",
        ])
        for q in fields:
            writer.writerow([
                q.group_id, q.n_members_end_experience, q.member_months_experience,
                f"{q.true_allowed_experience:.2f}", repr(q.predicted_allowed_projection),
            ])


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    cfg = load_config(args.config, args.set or [])
    overrides = []
    if args.seed is not None:
        overrides.append(f"synth.seed={args.seed}")
    if args.n_groups is not None:
        overrides.append(f"synth.n_groups={args.n_groups}")
    if args.concessions is not None:
        overrides.append(f"synth.concession_fraction={args.concessions}")
    cfg = cfg.override(overrides)
    synth_cfg = _synth_config(cfg)
    result = generate(synth_cfg, args.out)
    for path in (result.claims_path, result.eligibility_path,
                 result.labs_path, result.manifest_path):
        print(path)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set or [])
    spec, renewal_table = _slice_spec(cfg, args)
    pipeline_cfg = _pipeline_config(cfg, args.date_field)
    os.makedirs(args.out, exist_ok=True)
    ingest = _ingest(args, args.out)
    slices = resolve_slices(ingest.records, spec, renewal_table)

    result = train_pipeline(ingest.records, slices, pipeline_cfg)
    result.model.save(args.out)
    with open(os.path.join(args.out, "sweep_report.json"), "w") as fh:
        json.dump(result.sweep.to_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")
    with open(os.path.join(args.out, "train_summary.json"), "w") as fh:
        json.dump(result.summary(), fh, sort_keys=True, indent=1)
        fh.write("\n")

    mine = compute_qa_fields(ingest.records, slices, date_field=pipeline_cfg.date_field)
    renewals = renewal_table if renewal_table is not None else spec.renewal_date
    theirs = qa_fields_from_csv(
        args.claims, args.eligibility, renewals,
        blackout_months=spec.blackout_months,
        experience_months=spec.experience_months,
        date_field=pipeline_cfg.date_field,
    )
    from .records import reconcile

    report = reconcile(mine, theirs, tolerance=args.qa_tolerance)
    _write_qa_csv(os.path.join(args.out, "qa_fields.csv"), mine)
    with open(os.path.join(args.out, "reconcile_report.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group_id", "field", "value", "oracle_value", "rel_diff", "ok"])
        for row in report.rows:
            writer.writerow([
                row.group_id, row.field, repr(row.value_a), repr(row.value_b),
                repr(row.rel_diff), int(row.ok),
            ])
    print(f"model written to {args.out}")
    print(f"sweep chose prevalence threshold {result.sweep.chosen_threshold}")
    if not report.passed:
        failures = report.failures()
        print(
            f"QA reconciliation FAILED: {len(failures)} field(s) beyond "
            f"{args.qa_tolerance:.0%} (max rel diff {report.max_rel_diff:.4f})",
            file=sys.stderr,
        )
        return 1
    print(f"QA reconciliation passed (max rel diff {report.max_rel_diff:.6f})")
    return 0


def cmd_predict(args) -> int:
    model = PipelineModel.load(args.model)
    cfg = load_config(args.config, args.set or [])
    spec, renewal_table = _slice_spec(cfg, args)
    os.makedirs(args.out, exist_ok=True)
    ingest = _ingest(args, args.out)
    slices = resolve_slices(ingest.records, spec, renewal_table)
    result = predict_pipeline(model, ingest.records, slices)

    predictions = {p.group_id: p.predicted_allowed_total for p in result.predictions}
    qa = {
        q.group_id: q
        for q in compute_qa_fields(
            ingest.records, slices, predictions, date_field=model.date_field
        )
    }
    out_path = os.path.join(args.out, "predictions.csv")
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTION_COLUMNS)
        for p in sorted(result.predictions, key=lambda p: p.group_id):
            q = qa[p.group_id]
            writer.writerow([
                p.group_id,
                q.n_members_end_experience,
                q.member_months_experience,
                f"{q.true_allowed_experience:.2f}",
                repr(p.predicted_allowed_total),
                repr(p.predicted_pmpm_allowed),
                repr(p.predicted_allowed_trend),
                p.recommendation,
                repr(p.baseline_pmpm),
                repr(p.baseline_trend),
            ])
    with open(os.path.join(args.out, "skips.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group_id", "reason"])
        for gid, reason in sorted(result.skips):
            writer.writerow([gid, reason])
    print(out_path)
    print(f"{len(result.predictions)} prediction(s), {len(result.skips)} skip(s)")
    return 0


def _read_predictions(path: str) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(PREDICTION_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise EvalError(f"predictions file lacks columns: {sorted(missing)}")
        for row in reader:
            rows.append(row)
    if not rows:
        raise EvalError("predictions file is empty")
    return rows


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.set or [])
    spec, renewal_table = _slice_spec(cfg, args)
    predictions = _read_predictions(args.predictions)
    ingest = _ingest(args)
    slices = resolve_slices(ingest.records, spec, renewal_table)
    aggregates = compute_group_aggregates(ingest.records, slices)

    baseline_override: dict[str, dict] = {}
    if args.baseline:
        with open(args.baseline, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"group_id", "baseline_pmpm"} - set(reader.fieldnames or [])
            if missing:
                raise EvalError(f"baseline file lacks columns: {sorted(missing)}")
            for row in reader:
                baseline_override[row["group_id"].strip()] = row

    notes = []
    rows = []
    for row in predictions:
        gid = row["group_id"]
        agg = aggregates.get(gid)
        if agg is None or agg.proj_member_months <= 0:
            notes.append(f"group {gid}: no realized projection exposure; skipped")
            continue
        override = baseline_override.get(gid)
        baseline_pmpm = (
            float(override["baseline_pmpm"]) if override
            else float(row["baseline_pmpm"])
        )
        if override and (override.get("baseline_trend") or "").strip():
            baseline_trend = float(override["baseline_trend"])
        elif override and agg.exp_pmpm > 0:
            # quote files carry pmpm only; trend is the quote against experience
            baseline_trend = baseline_pmpm / agg.exp_pmpm
        else:
            baseline_trend = float(row["baseline_trend"])
        rows.append({
            "group_id": gid,
            "predicted_pmpm": float(row["predicted_pmpm"]),
            "predicted_trend": float(row["predicted_trend"]),
            "baseline_trend": baseline_trend,
            "expected_paid": baseline_pmpm * 12.0 * float(row["n_members_end_experience"]),
            "true_pmpm": agg.proj_pmpm,
            "actual_paid": agg.proj_allowed,
            "member_months": float(agg.proj_member_months),
        })
    if len(rows) < 2:
        raise EvalError("need at least two groups with realized projection exposure")

    n_bins = 5 if args.quintiles else 10
    report = build_report(
        [r["group_id"] for r in rows],
        [r["predicted_pmpm"] for r in rows],
        [r["true_pmpm"] for r in rows],
        [r["member_months"] for r in rows],
        model_trend=[r["predicted_trend"] for r in rows],
        baseline_trend=[r["baseline_trend"] for r in rows],
        actual_paid=[r["actual_paid"] for r in rows],
        expected_paid=[r["expected_paid"] for r in rows],
        n_lift_bins=n_bins,
    )
    report.notes.extend(notes)

    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "report.json")
    with open(report_path, "w") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")
    if report.lift is not None:
        report.lift.to_csv(os.path.join(args.out, "lift.csv"))
    print(report_path)
    print(
        f"groups={report.n_groups} normalized_mae={report.normalized_mae:.4f} "
        f"r_squared={report.r_squared:.4f} gini={report.gini:.4f}"
    )
    for c in report.concessions:
        p = "n/a" if c.precision is None else f"{c.precision:.3f}"
        r = "n/a" if c.recall is None else f"{c.recall:.3f}"
        print(f"concessions at {c.level:.0%}: precision={p} recall={r}")
    return 0


def cmd_explain(args) -> int:
    model = PipelineModel.load(args.model)
    cfg = load_config(args.config, args.set or [])
    spec, renewal_table = _slice_spec(cfg, args)
    ingest = _ingest(args)
    slices = resolve_slices(ingest.records, spec, renewal_table)
    if args.groups:
        wanted = set(args.groups.split(","))
        slices = [s for s in slices if s.group_id in wanted]
        if not slices:
            raise PipelineError("none of the requested groups exist in the book")
    drivers = explain_groups(model, ingest.records, slices, top_n=args.top)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group_id", "feature_name", "pmpm_dollars"])
        for gid in sorted(drivers):
            for name, value in drivers[gid]:
                writer.writerow([gid, name, repr(value)])
    print(args.out)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--threads", type=int, default=None,
                   help="cap worker threads used by the tree kernels")


def _add_book_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--claims", required=True)
    p.add_argument("--eligibility", required=True)
    p.add_argument("--labs", required=True)


def _add_slicing(p: argparse.ArgumentParser) -> None:
    p.add_argument("--renewal", help="renewal date (ISO) shared by all groups")
    p.add_argument("--renewal-table",
                   help="CSV (group_id, renewal_date) for per-group renewals")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groupcast",
        description="Group renewal cost prediction: synthesize, train, predict, evaluate, explain.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic book with ground truth")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-groups", type=int)
    p.add_argument("--concessions", type=float,
                   help="fraction of groups planted as concession opportunities")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit the two-stage model on a historical book")
    _add_common(p)
    _add_book_inputs(p)
    _add_slicing(p)
    p.add_argument("--out", required=True, help="model output directory")
    p.add_argument("--date-field", choices=["encounter", "paid"], default=None,
                   help="censoring view for features (default encounter)")
    p.add_argument("--qa-tolerance", type=float, default=0.05,
                   help="relative tolerance for the QA reconciliation gate")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score a book of renewal groups")
    _add_common(p)
    _add_book_inputs(p)
    _add_slicing(p)
    p.add_argument("--model", required=True, help="model directory from train")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against realized cost")
    _add_common(p)
    _add_book_inputs(p)
    _add_slicing(p)
    p.add_argument("--predictions", required=True, help="predictions.csv from predict")
    p.add_argument("--baseline",
                   help="optional CSV (group_id, baseline_trend[, baseline_pmpm]) "
                        "replacing the stored reference rater")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--quintiles", action="store_true",
                   help="use 5 lift bins instead of 10 (small books)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="top per-group rate drivers in pmpm dollars")
    _add_common(p)
    _add_book_inputs(p)
    _add_slicing(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--groups", help="comma-separated group ids (default: all)")
    p.set_defaults(func=cmd_explain)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None):
        try:
            import numba

            numba.set_num_threads(args.threads)
        except ValueError as exc:
            print(f"error: --threads: {exc}", file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except (ConfigError, SliceError, PipelineError, EvalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
