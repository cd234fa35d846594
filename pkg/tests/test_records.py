"""Record model, ingestion, calendar arithmetic, and QA reconciliation."""

from __future__ import annotations

import dataclasses
import random
from datetime import date, timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupcast.records import (
    CareSetting,
    ClaimSpec,
    CodeSystem,
    CoverageSpan,
    QaFields,
    Sex,
    add_months,
    allowed_in_window,
    build_record,
    compute_qa_fields,
    export_book,
    filter_claims_by_date,
    first_covered_month,
    ingest_book,
    member_months,
    merge_date_spans,
    month_index,
    months_in_window,
    reconcile,
)
from oracles import member_months_daywalk, shift_months_daywalk

CLAIMS_HEADER = (
    "member_id,claim_id,encounter_date,paid_date,allowed_amount,paid_amount,"
    "care_setting,is_pharmacy,is_capitation,revenue_codes,codes,"
    "lab_value,lab_interpretation"
)
ELIG_HEADER = "member_id,group_id,birthday,sex,start_date,end_date,plan_type"


def write_inputs(tmp_path, claim_rows, elig_rows):
    claims = tmp_path / "claims.csv"
    elig = tmp_path / "eligibility.csv"
    claims.write_text("\n".join([CLAIMS_HEADER, *claim_rows]) + "\n")
    elig.write_text("\n".join([ELIG_HEADER, *elig_rows]) + "\n")
    return str(claims), str(elig)


ELIG_OK = "M1,G1,1980-04-01,F,2015-01-01,2017-12-31,PPO"


# ---------------------------------------------------------------------------
# calendar arithmetic


def test_add_months_clamps_short_months():
    assert add_months(date(2016, 1, 31), 1) == date(2016, 2, 29)
    assert add_months(date(2015, 1, 31), 1) == date(2015, 2, 28)
    assert add_months(date(2016, 3, 31), -1) == date(2016, 2, 29)
    assert add_months(date(2016, 10, 31), 4) == date(2017, 2, 28)
    assert add_months(date(2017, 1, 1), -4) == date(2016, 9, 1)


@settings(max_examples=200)
@given(
    st.dates(min_value=date(2000, 1, 1), max_value=date(2030, 12, 31)),
    st.integers(min_value=-30, max_value=30),
)
def test_add_months_matches_month_walk(d, n):
    assert add_months(d, n) == shift_months_daywalk(d, n)


def test_month_index_round_trip():
    assert month_index(date(2016, 1, 31)) == month_index(date(2016, 1, 1))
    assert month_index(date(2016, 2, 1)) - month_index(date(2016, 1, 1)) == 1
    assert month_index(date(2017, 1, 1)) - month_index(date(2016, 1, 1)) == 12


def test_first_covered_month_skips_partial_first_month():
    # coverage starting after the 1st only counts from the next month
    assert first_covered_month(date(2016, 3, 1)) == month_index(date(2016, 3, 1))
    assert first_covered_month(date(2016, 3, 2)) == month_index(date(2016, 4, 1))


def test_months_in_window_mid_month_span():
    window = (date(2016, 1, 1), date(2016, 12, 31))
    # covered on Feb 1 and Mar 1 only
    assert months_in_window(date(2016, 1, 15), date(2016, 3, 20), window) == 2
    # window clips the span
    assert months_in_window(date(2016, 1, 15), date(2016, 3, 20), (date(2016, 3, 1), date(2016, 12, 31))) == 1
    assert months_in_window(date(2016, 5, 2), date(2016, 5, 30), window) == 0


def test_merge_date_spans_unions_overlaps_and_adjacency():
    merged = merge_date_spans([
        (date(2016, 1, 1), date(2016, 3, 31)),
        (date(2016, 4, 1), date(2016, 5, 31)),  # adjacent: merges
        (date(2016, 8, 1), date(2016, 9, 30)),
        (date(2016, 9, 1), date(2016, 12, 31)),  # overlapping: merges
    ])
    assert merged == [
        (date(2016, 1, 1), date(2016, 5, 31)),
        (date(2016, 8, 1), date(2016, 12, 31)),
    ]


span_strategy = st.builds(
    lambda start, length: (start, start + timedelta(days=length)),
    st.dates(min_value=date(2015, 1, 1), max_value=date(2017, 12, 1)),
    st.integers(min_value=0, max_value=500),
)


@settings(max_examples=150)
@given(
    st.lists(span_strategy, min_size=1, max_size=4),
    span_strategy,
    st.sampled_from([None, "G1", "G2"]),
)
def test_member_months_matches_day_walk(spans, window, group_id):
    coverages = [
        CoverageSpan("G1" if i % 2 == 0 else "G2", s, e, "PPO")
        for i, (s, e) in enumerate(spans)
    ]
    record = build_record("M1", date(1970, 1, 1), Sex.F, coverages)
    got = member_months(record, window, group_id=group_id)
    assert got == member_months_daywalk(record, window, group_id=group_id)


def test_member_months_stacked_coverage_not_double_counted():
    record = build_record("M1", date(1970, 1, 1), Sex.F, [
        CoverageSpan("G1", date(2016, 1, 1), date(2016, 6, 30), "PPO"),
        CoverageSpan("G2", date(2016, 1, 1), date(2016, 6, 30), "PPO"),
    ])
    window = (date(2016, 1, 1), date(2016, 12, 31))
    assert member_months(record, window) == 6
    assert member_months(record, window, group_id="G1") == 6


# ---------------------------------------------------------------------------
# ingestion


def test_round_trip_preserves_book(small_gen, tmp_path):
    result = ingest_book(
        small_gen.claims_path, small_gen.eligibility_path, small_gen.labs_path
    )
    assert result.rejects == []
    assert result.records == small_gen.book

    export_book(
        result.records,
        str(tmp_path / "c.csv"),
        str(tmp_path / "e.csv"),
        str(tmp_path / "l.csv"),
    )
    again = ingest_book(
        str(tmp_path / "c.csv"), str(tmp_path / "e.csv"), str(tmp_path / "l.csv")
    )
    assert again.rejects == []
    assert again.records == result.records


def test_reject_paid_before_encounter(tmp_path):
    claims, elig = write_inputs(tmp_path, [
        "M1,c1,2016-05-10,2016-05-01,100.00,80.00,outpatient,0,0,,,,",
    ], [ELIG_OK])
    result = ingest_book(claims, elig)
    assert [r.reason for r in result.rejects] == ["paid before encounter"]
    assert result.records[0].claims == ()


def test_reject_allowed_less_than_paid_only_for_positive_amounts(tmp_path):
    claims, elig = write_inputs(tmp_path, [
        "M1,c1,2016-05-10,2016-05-20,50.00,80.00,outpatient,0,0,,,,",
        "M1,c2,2016-05-10,2016-05-20,-50.00,-40.00,outpatient,0,0,,,,",
    ], [ELIG_OK])
    result = ingest_book(claims, elig)
    assert [r.reason for r in result.rejects] == ["allowed less than paid"]
    # the reversal-shaped negative row is legal
    assert [c.claim_id for c in result.records[0].claims] == ["c2"]
    assert result.records[0].claims[0].allowed_amount == -50.0


def test_reject_unknown_member_and_bad_dates(tmp_path):
    claims, elig = write_inputs(tmp_path, [
        "MX,c1,2016-05-10,2016-05-20,100.00,80.00,outpatient,0,0,,,,",
        "M1,c2,not-a-date,2016-05-20,100.00,80.00,outpatient,0,0,,,,",
        "M1,c3,1979-05-10,1979-05-20,100.00,80.00,outpatient,0,0,,,,",
    ], [ELIG_OK])
    result = ingest_book(claims, elig)
    reasons = [r.reason for r in result.rejects]
    assert reasons[0] == "unknown member"
    assert reasons[1].startswith("malformed row")
    assert reasons[2] == "encounter before birth"


def test_duplicate_claims_identical_dedupe_conflicting_reject_both(tmp_path):
    same = "M1,c1,2016-05-10,2016-05-20,100.00,80.00,outpatient,0,0,,,,"
    conflict = "M1,c2,2016-05-10,2016-05-20,100.00,80.00,outpatient,0,0,,,,"
    conflict2 = "M1,c2,2016-06-10,2016-06-20,999.00,80.00,outpatient,0,0,,,,"
    claims, elig = write_inputs(tmp_path, [same, same, conflict, conflict2], [ELIG_OK])
    result = ingest_book(claims, elig)
    assert [c.claim_id for c in result.records[0].claims] == ["c1"]
    assert [r.reason for r in result.rejects] == ["conflicting duplicate claim_id"]


def test_reject_coverage_dates_out_of_order(tmp_path):
    claims, elig = write_inputs(tmp_path, [], [
        ELIG_OK,
        "M2,G1,1980-04-01,M,2016-12-31,2016-01-01,PPO",
    ])
    result = ingest_book(claims, elig)
    assert [r.reason for r in result.rejects] == ["coverage dates out of order"]
    assert sorted(r.member_id for r in result.records) == ["M1"]


def test_reject_conflicting_demographics(tmp_path):
    claims, elig = write_inputs(tmp_path, [], [
        ELIG_OK,
        "M1,G2,1981-04-01,F,2016-01-01,2016-12-31,PPO",
    ])
    result = ingest_book(claims, elig)
    assert [r.reason for r in result.rejects] == ["conflicting demographics"]


def test_lab_value_requires_unique_loinc(tmp_path):
    claims, elig = write_inputs(tmp_path, [
        "M1,c1,2016-05-10,2016-05-20,10.00,8.00,outpatient,0,0,,CPT:99213,6.9,high",
        "M1,c2,2016-05-10,2016-05-20,10.00,8.00,outpatient,0,0,,LOINC:4548-4,6.9,high",
    ], [ELIG_OK])
    result = ingest_book(claims, elig)
    assert [r.reason for r in result.rejects] == ["lab value without unique LOINC code"]
    assert [c.claim_id for c in result.records[0].claims] == ["c2"]


# ---------------------------------------------------------------------------
# claim windows and censoring


def sample_record(extra_claims=()):
    claims = [
        ClaimSpec("a", date(2016, 2, 10), date(2016, 3, 1), 100.0, 80.0, CareSetting.OUTPATIENT),
        ClaimSpec("b", date(2016, 6, 15), date(2016, 7, 1), 200.0, 150.0, CareSetting.INPATIENT),
        *extra_claims,
    ]
    return build_record(
        "M1", date(1980, 1, 1), Sex.M,
        [CoverageSpan("G1", date(2016, 1, 1), date(2016, 12, 31), "PPO")],
        claims,
    )


def test_allowed_in_window_respects_date_field():
    record = sample_record()
    window = (date(2016, 1, 1), date(2016, 6, 30))
    assert allowed_in_window(record, window) == 300.0
    assert allowed_in_window(record, window, date_field="paid") == 100.0


def test_filter_claims_strict_cutoff():
    record = sample_record()
    kept = filter_claims_by_date(record, date(2016, 6, 15))
    assert [c.claim_id for c in kept.claims] == ["a"]
    kept = filter_claims_by_date(record, date(2016, 6, 16))
    assert [c.claim_id for c in kept.claims] == ["a", "b"]
    assert kept.coverages == record.coverages  # enrollment is not censored


@settings(max_examples=100)
@given(
    st.lists(
        st.tuples(
            st.dates(min_value=date(2016, 1, 1), max_value=date(2016, 12, 31)),
            st.floats(min_value=0, max_value=1e6, allow_nan=False),
        ),
        min_size=0,
        max_size=8,
    ),
    st.dates(min_value=date(2016, 1, 1), max_value=date(2017, 1, 31)),
)
def test_filtered_allowed_sum_monotone_without_negatives(events, cutoff):
    claims = [
        ClaimSpec(f"c{i}", d, d, amt, 0.0, CareSetting.OUTPATIENT)
        for i, (d, amt) in enumerate(events)
    ]
    record = build_record(
        "M1", date(1980, 1, 1), Sex.F,
        [CoverageSpan("G1", date(2016, 1, 1), date(2016, 12, 31), "PPO")], claims,
    )
    window = (date(2015, 1, 1), date(2017, 12, 31))
    earlier = allowed_in_window(filter_claims_by_date(record, cutoff), window)
    later = allowed_in_window(filter_claims_by_date(record, cutoff + timedelta(days=40)), window)
    assert earlier <= later + 1e-9


def test_reversal_nets_to_zero_over_full_horizon():
    record = sample_record(extra_claims=[
        ClaimSpec("bR", date(2016, 9, 5), date(2016, 9, 15), -200.0, -150.0, CareSetting.INPATIENT),
    ])
    window = (date(2015, 1, 1), date(2017, 12, 31))
    assert allowed_in_window(record, window) == 100.0  # 100 + 200 - 200


# ---------------------------------------------------------------------------
# QA fields and reconciliation


def test_compute_qa_fields_ignores_claim_order(small_book, small_slices):
    baseline = compute_qa_fields(small_book, small_slices)
    rng = random.Random(3)
    shuffled = []
    for record in small_book:
        claims = list(record.claims)
        rng.shuffle(claims)
        shuffled.append(dataclasses.replace(record, claims=tuple(claims)))
    assert compute_qa_fields(shuffled, small_slices) == baseline


def test_qa_fields_match_manifest_bookkeeping(small_book, small_slices, small_manifest):
    fields = {q.group_id: q for q in compute_qa_fields(small_book, small_slices)}
    for gid, truth in small_manifest["groups"].items():
        q = fields[gid]
        assert q.n_members_end_experience == truth["n_members_end_experience"]
        assert q.member_months_experience == truth["experience_member_months"]
        assert round(q.true_allowed_experience * 100) == truth["experience_allowed_cents"]


def test_reconcile_passes_exact_and_flags_drift():
    qa = [QaFields("G1", 10, 120, 50_000.0), QaFields("G2", 5, 60, 10_000.0)]
    report = reconcile(qa, qa)
    assert report.passed and report.max_rel_diff == 0.0

    drifted = [QaFields("G1", 10, 120, 50_000.0), QaFields("G2", 5, 60, 10_600.0)]
    report = reconcile(qa, drifted)  # 6% off on one money field
    assert not report.passed
    assert [(r.group_id, r.field) for r in report.failures()] == [
        ("G2", "true_allowed_experience")
    ]

    within = [QaFields("G1", 10, 120, 50_000.0), QaFields("G2", 5, 60, 10_400.0)]
    assert reconcile(qa, within).passed  # 4% sits inside the 5% gate


def test_reconcile_reports_missing_group():
    qa = [QaFields("G1", 10, 120, 50_000.0)]
    report = reconcile(qa, [])
    assert not report.passed
    assert [(r.group_id, r.field) for r in report.failures()] == [
        ("G1", "<missing group>")
    ]
