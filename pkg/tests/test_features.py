"""Member featurization: windows, code counts, labs, and the catalog."""

from __future__ import annotations

import logging
import math
from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupcast.features import (
    AGE_FEATURE,
    FeatureCatalog,
    FeatureConfig,
    SEX_FEATURE,
    WINDOWS,
    build_matrix,
    extract_member_features,
    fit_catalog,
    lab_trend,
    project,
    read_matrix_csv,
    write_matrix_csv,
)
from groupcast.records import (
    CareSetting,
    ClaimSpec,
    CodeSystem,
    CoverageSpan,
    LabInterpretation,
    Sex,
    build_record,
    filter_claims_by_date,
)
from groupcast.slicing import GroupSlice
from oracles import lab_trend_linregress

SLICE = GroupSlice(
    group_id="G1",
    renewal_date=date(2017, 1, 1),
    slice_date=date(2016, 8, 31),
    experience_start=date(2015, 9, 1),
    projection_end=date(2017, 12, 31),
    roster=("M1",),
)
FULL_COVER = [CoverageSpan("G1", date(2015, 9, 1), date(2017, 12, 31), "PPO")]


def record_with(claims=(), labs=()):
    return build_record("M1", date(1986, 8, 31), Sex.F, FULL_COVER, claims, labs)


def med_claim(claim_id, when, allowed, codes=(), setting=CareSetting.OUTPATIENT,
              revenue=()):
    return ClaimSpec(claim_id, when, when + timedelta(days=10), allowed,
                     round(allowed * 0.8, 2), setting, revenue_codes=revenue,
                     codes=codes)


# ---------------------------------------------------------------------------
# demographics and empty histories


def test_empty_history_yields_demographics_and_coverage_only():
    vector = extract_member_features(record_with(), SLICE)
    assert vector.entries[AGE_FEATURE] == 30.0
    assert vector.entries[SEX_FEATURE] == 1.0
    expected = {AGE_FEATURE, SEX_FEATURE} | {
        f"coverage|{w}|days|length" for w in WINDOWS
    }
    assert set(vector.entries) == expected


def test_age_counts_whole_years_at_slice():
    young = build_record("M1", date(1986, 9, 1), Sex.M, FULL_COVER)
    vector = extract_member_features(young, SLICE)
    assert vector.entries[AGE_FEATURE] == 29.0
    assert vector.entries[SEX_FEATURE] == 0.0


def test_no_coverage_in_windows_emits_zero_lengths():
    record = build_record("M1", date(1980, 1, 1), Sex.F,
                          [CoverageSpan("G1", date(2017, 1, 1), date(2017, 12, 31), "PPO")])
    vector = extract_member_features(record, SLICE)
    for w in WINDOWS:
        assert vector.entries[f"coverage|{w}|days|length"] == 0.0


# ---------------------------------------------------------------------------
# code counts across windows


def test_log_counts_nest_across_windows():
    codes = ((CodeSystem.ICD10, "E11.9"),)
    claims = [
        med_claim("a", date(2016, 7, 10), 50.0, codes),
        med_claim("b", date(2016, 7, 20), 60.0, codes),
        med_claim("c", date(2016, 8, 5), 70.0, codes),
    ]
    vector = extract_member_features(record_with(claims), SLICE)
    expected = math.log(4)
    for w in WINDOWS:
        assert vector.entries[f"logcount|{w}|ICD10|E11.9"] == pytest.approx(expected)
        # the prefix grouper runs in parallel at 3 characters
        assert vector.entries[f"logcount|{w}|GROUPED|ICD10:E11"] == pytest.approx(expected)


def test_window_boundaries_are_exclusive_lower_inclusive_upper():
    codes = ((CodeSystem.CPT, "99213"),)
    claims = [
        med_claim("edge", date(2016, 8, 31), 10.0, codes),      # slice date: in
        med_claim("lower", date(2016, 5, 31), 10.0, codes),     # exactly 3 months back: out of m3
        med_claim("inside", date(2016, 6, 1), 10.0, codes),     # first day inside m3
        med_claim("post", date(2016, 9, 1), 10.0, codes),       # after slice: never seen
    ]
    censored = filter_claims_by_date(record_with(claims), date(2016, 9, 1))
    vector = extract_member_features(censored, SLICE)
    assert vector.entries["logcount|m3|CPT|99213"] == pytest.approx(math.log(3))
    assert vector.entries["logcount|m6|CPT|99213"] == pytest.approx(math.log(4))
    assert vector.entries["logcount|anytime|CPT|99213"] == pytest.approx(math.log(4))


def test_cost_features_split_by_setting_and_add_up():
    claims = [
        med_claim("o", date(2016, 3, 10), 100.0, setting=CareSetting.OUTPATIENT),
        med_claim("i", date(2016, 4, 10), 200.0, setting=CareSetting.INPATIENT),
    ]
    vector = extract_member_features(record_with(claims), SLICE)
    assert vector.entries["cost|y1|allowed|total"] == pytest.approx(300.0)
    assert vector.entries["cost|y1|allowed|inpatient"] == pytest.approx(200.0)
    assert vector.entries["cost|y1|allowed|outpatient"] == pytest.approx(100.0)
    assert "cost|m3|allowed|total" not in vector.entries  # zero values are dropped


def test_stats_features_summarize_anytime_counts():
    claims = [
        med_claim("a", date(2016, 2, 1), 10.0, ((CodeSystem.CPT, "99213"),)),
        med_claim("b", date(2016, 3, 1), 10.0, ((CodeSystem.CPT, "99213"),)),
        med_claim("c", date(2016, 4, 1), 10.0, ((CodeSystem.CPT, "93000"),)),
    ]
    vector = extract_member_features(record_with(claims), SLICE)
    assert vector.entries["stats|anytime|CPT|total_count"] == 3.0
    assert vector.entries["stats|anytime|CPT|unique_count"] == 2.0
    assert vector.entries["stats|anytime|CPT|min_count"] == 1.0
    assert vector.entries["stats|anytime|CPT|max_count"] == 2.0
    assert vector.entries["stats|anytime|CPT|mean_count"] == pytest.approx(1.5)


def test_revenue_code_presence_flags():
    claims = [
        med_claim("er", date(2016, 6, 1), 500.0, setting=CareSetting.EMERGENCY,
                  revenue=("0450",)),
    ]
    vector = extract_member_features(record_with(claims), SLICE)
    assert vector.entries["revcode|anytime|REV|0450"] == 1.0


@settings(max_examples=60, deadline=None)
@given(st.lists(
    st.tuples(
        st.dates(min_value=date(2015, 9, 1), max_value=date(2016, 8, 31)),
        st.sampled_from(["E11.9", "I10", "J06.9"]),
    ),
    min_size=0, max_size=15,
))
def test_window_nesting_holds_for_any_history(events):
    claims = [
        med_claim(f"c{i}", when, 25.0, ((CodeSystem.ICD10, code),))
        for i, (when, code) in enumerate(events)
    ]
    vector = extract_member_features(record_with(claims), SLICE)
    by_code: dict[str, dict[str, float]] = {}
    for name, value in vector.entries.items():
        family, window, system, code = name.split("|", 3)
        if family == "logcount":
            by_code.setdefault(f"{system}|{code}", {})[window] = value
    for windows in by_code.values():
        chain = [windows.get(w, 0.0) for w in ("m3", "m6", "y1", "anytime")]
        assert chain == sorted(chain)


def test_extraction_ignores_post_slice_claims():
    base_claims = [med_claim("a", date(2016, 5, 1), 100.0, ((CodeSystem.ICD10, "I10"),))]
    marker_claims = base_claims + [
        med_claim("marker", date(2016, 9, 15), 9e6, ((CodeSystem.ICD10, "Z99.9"),)),
        med_claim("marker2", date(2016, 12, 1), 9e6, ((CodeSystem.CPT, "99999"),)),
    ]
    cutoff = SLICE.slice_date + timedelta(days=1)
    before = extract_member_features(
        filter_claims_by_date(record_with(base_claims), cutoff), SLICE)
    after = extract_member_features(
        filter_claims_by_date(record_with(marker_claims), cutoff), SLICE)
    assert before.entries == after.entries


# ---------------------------------------------------------------------------
# labs


def lab_claim(claim_id, when, code, value, interp):
    return ClaimSpec(claim_id, when, when, 12.0, 10.0, CareSetting.ANCILLARY,
                     codes=((CodeSystem.LOINC, code),), lab_value=value,
                     lab_interpretation=interp)


def test_lab_trend_frozen_cases():
    base = date(2016, 1, 1)
    flat = [(base + timedelta(days=30 * i), 1.0) for i in range(4)]
    rising = [(base + timedelta(days=30 * i), 1.0 + i) for i in range(5)]
    falling = [(base + timedelta(days=30 * i), 5.0 - i) for i in range(5)]
    assert lab_trend(flat) == "flat"
    assert lab_trend(rising) == "increasing"
    assert lab_trend(falling) == "decreasing"
    assert lab_trend(rising[:2]) == "flat"  # not enough points
    assert lab_trend([(base, 1.0), (base, 2.0), (base, 3.0)]) == "flat"  # no time axis


@settings(max_examples=150, deadline=None)
@given(st.lists(
    st.floats(min_value=-100, max_value=100, allow_nan=False),
    min_size=0, max_size=10,
))
def test_lab_trend_matches_scipy_regression(values):
    base = date(2016, 1, 1)
    points = [(base + timedelta(days=17 * i), v) for i, v in enumerate(values)]
    assert lab_trend(points) == lab_trend_linregress(points)


def test_lab_features_interpretation_counts_and_trend():
    claims = [
        lab_claim("l1", date(2016, 2, 15), "4548-4", 6.8, LabInterpretation.HIGH),
        lab_claim("l2", date(2016, 4, 15), "4548-4", 7.4, LabInterpretation.HIGH),
        lab_claim("l3", date(2016, 6, 15), "4548-4", 8.1, LabInterpretation.HIGH),
        lab_claim("l4", date(2016, 8, 15), "4548-4", 8.9, LabInterpretation.HIGH),
    ]
    vector = extract_member_features(record_with(claims), SLICE)
    assert vector.entries["labinterp|anytime|LOINC|high"] == pytest.approx(math.log(5))
    assert vector.entries["labinterp|m3|LOINC|high"] == pytest.approx(math.log(3))
    assert vector.entries["labtrend|anytime|LOINC|4548-4:increasing"] == 1.0
    assert "labtrend|anytime|LOINC|4548-4:flat" not in vector.entries


def test_lab_fluctuation_flag_needs_two_direction_changes():
    wobble = [
        lab_claim("l1", date(2016, 2, 1), "2160-0", 1.0, LabInterpretation.NORMAL),
        lab_claim("l2", date(2016, 3, 1), "2160-0", 1.8, LabInterpretation.HIGH),
        lab_claim("l3", date(2016, 4, 1), "2160-0", 1.0, LabInterpretation.NORMAL),
        lab_claim("l4", date(2016, 5, 1), "2160-0", 1.8, LabInterpretation.HIGH),
    ]
    vector = extract_member_features(record_with(wobble), SLICE)
    assert vector.entries["labfluct|y1|LOINC|any"] == 1.0

    steady = wobble[:2]
    vector = extract_member_features(record_with(steady), SLICE)
    assert "labfluct|y1|LOINC|any" not in vector.entries


# ---------------------------------------------------------------------------
# catalog


def vector_population():
    vectors = []
    for i in range(2000):
        claims = []
        if i < 1:
            claims.append(med_claim("rare", date(2016, 5, 1), 10.0,
                                    ((CodeSystem.ICD10, "Q00.0"),)))
        if i < 600:
            claims.append(med_claim("common", date(2016, 5, 1), 10.0,
                                    ((CodeSystem.ICD10, "I10"),)))
        record = build_record(f"M{i}", date(1980, 1, 1), Sex.F if i % 2 else Sex.M,
                              FULL_COVER, claims)
        vectors.append(extract_member_features(record, SLICE))
    return vectors


def test_catalog_prevalence_threshold():
    vectors = vector_population()
    catalog = fit_catalog(vectors, prevalence_threshold=0.001)
    assert catalog.prevalence["logcount|m6|ICD10|Q00.0"] == pytest.approx(1 / 2000)
    assert catalog.prevalence[SEX_FEATURE] == pytest.approx(0.5)
    assert catalog.prevalence[AGE_FEATURE] == 1.0
    assert "logcount|m6|ICD10|Q00.0" not in catalog.selected
    assert "logcount|m6|ICD10|I10" in catalog.selected
    assert AGE_FEATURE in catalog.selected
    # 1/2000 passes a looser threshold
    loose = fit_catalog(vectors, prevalence_threshold=0.0001)
    assert "logcount|m6|ICD10|Q00.0" in loose.selected


def test_catalog_sizes_shrink_as_threshold_grows():
    vectors = vector_population()
    sizes = [
        len(fit_catalog(vectors, prevalence_threshold=t).selected)
        for t in (0.0003, 0.001, 0.003, 0.01)
    ]
    assert sizes == sorted(sizes, reverse=True)


def test_catalog_cap_keeps_most_prevalent():
    vectors = vector_population()
    capped = fit_catalog(vectors, prevalence_threshold=0.0, max_features=3)
    assert len(capped.selected) == 3
    full = fit_catalog(vectors, prevalence_threshold=0.0)
    ranked = sorted(full.prevalence.items(), key=lambda kv: (-kv[1], kv[0]))
    assert sorted(capped.selected) == sorted(name for name, _ in ranked[:3])


def test_catalog_selected_order_is_lexicographic():
    catalog = fit_catalog(vector_population())
    assert catalog.selected == sorted(catalog.selected)


def test_project_drops_unselected_and_unseen_features(caplog):
    vectors = vector_population()
    catalog = fit_catalog(vectors, prevalence_threshold=0.001)
    rare = vectors[0]  # the one member carrying the dropped rare code
    projected = project(rare, catalog)
    assert all(name in catalog.index for name in projected.entries)
    assert projected.entries == project(rare, catalog).entries  # idempotent

    stranger = extract_member_features(
        build_record("MX", date(1970, 1, 1), Sex.F, FULL_COVER, [
            med_claim("new", date(2016, 5, 1), 10.0, ((CodeSystem.ICD10, "Z77.9"),)),
        ]),
        SLICE,
    )
    with caplog.at_level(logging.WARNING, logger="groupcast.features"):
        project(stranger, catalog)
        project(stranger, catalog)
    hits = [r for r in caplog.records if "unseen" in r.getMessage().lower()]
    assert len(hits) <= 1


def test_catalog_csv_round_trip(tmp_path):
    catalog = fit_catalog(vector_population(), prevalence_threshold=0.001)
    path = str(tmp_path / "catalog.csv")
    catalog.to_csv(path)
    again = FeatureCatalog.from_csv(path)
    assert again.selected == catalog.selected
    assert again.prevalence == catalog.prevalence


def test_matrix_round_trip(tmp_path):
    vectors = vector_population()[:50]
    catalog = fit_catalog(vectors, prevalence_threshold=0.0)
    X = build_matrix(vectors, catalog)
    assert X.shape == (50, len(catalog.selected))
    col = catalog.index[AGE_FEATURE]
    assert (X[:, col] == 36.0).all()

    path = str(tmp_path / "matrix.csv")
    write_matrix_csv(path, vectors, catalog)
    again = read_matrix_csv(path)
    rebuilt = build_matrix(again, catalog)
    assert np.array_equal(X, rebuilt)
