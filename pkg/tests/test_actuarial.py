"""Experience rate, manual rate, credibility blend, and factor tables.

Expected values are frozen from longhand evaluation of the rate
formulas; nothing here recomputes them through the module under test.
"""

from __future__ import annotations

import math

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from groupcast.actuarial import (
    CredibilityCurve,
    FactorTables,
    GroupCensus,
    GroupExperience,
    RatingFactors,
    blend,
    credibility,
    experience_rate,
    manual_rate,
    shock_split,
    utilization_dampening_medical,
    utilization_dampening_pharmacy,
)

REL = 1e-9


def rel_ok(value, expected):
    return value == pytest.approx(expected, rel=REL)


# ---------------------------------------------------------------------------
# experience rate


def test_experience_rate_general_scenario():
    exp = GroupExperience(TC=500_000, TSC=120_000, n_s=2, mm=1200, m=16, S=0.3)
    f = RatingFactors(
        AT=0.05, x_m=1.02, x_b=0.99, x_d=1.01, x_p=100_000,
        BC_p=30, AT_L=0.07, x_ph=1.03, x_gp=0.98, x_dp=1.00, x_ip=1.01,
    )
    assert rel_ok(experience_rate(exp, f), 653778.2678202289)


def test_experience_rate_identity_reduction():
    exp = GroupExperience(TC=250_000, TSC=0, n_s=0, mm=1200, m=16, S=0.5)
    assert rel_ok(experience_rate(exp, RatingFactors()), 250_000.0)


def test_experience_rate_zero_trend_factors_active():
    exp = GroupExperience(TC=100_000, TSC=40_000, n_s=1, mm=800, m=16, S=0.2)
    f = RatingFactors(x_m=1.10, x_b=0.95, x_d=1.05, x_p=50_000, BC_p=12)
    assert rel_ok(experience_rate(exp, f), 125_435.0)


def test_experience_rate_zero_midpoint_months_disables_trend():
    exp = GroupExperience(TC=90_000, TSC=10_000, n_s=0, mm=100, m=0, S=0.0)
    f = RatingFactors(AT=0.25, AT_L=0.30, BC_p=5)
    assert rel_ok(experience_rate(exp, f), 80_500.0)


def test_experience_rate_linear_in_claims_dampening():
    exp = GroupExperience(TC=200_000, TSC=50_000, n_s=0, mm=900, m=16, S=0.4)
    one = experience_rate(exp, RatingFactors(AT=0.06, x_d=1.0))
    two = experience_rate(exp, RatingFactors(AT=0.06, x_d=2.0))
    assert rel_ok(two, 2 * one)


def test_experience_rate_rejects_nonpositive_member_months():
    with pytest.raises(ValueError):
        experience_rate(GroupExperience(TC=1, TSC=0, n_s=0, mm=0, m=16, S=0), RatingFactors())


@settings(max_examples=100)
@given(st.floats(min_value=0, max_value=1e8, allow_nan=False))
def test_experience_rate_identity_property(tc):
    exp = GroupExperience(TC=tc, TSC=0, n_s=0, mm=10, m=16, S=0.5)
    assert experience_rate(exp, RatingFactors()) == pytest.approx(tc, rel=1e-12, abs=1e-9)


# ---------------------------------------------------------------------------
# manual rate and dampening


def test_manual_rate_general_scenario():
    census = GroupCensus(mm=900, m=16, S=0.5)
    f = RatingFactors(
        BC_med=350, BC_cap=25, BC_ph=80, AT_med=0.06, AT_ph=0.09,
        x_gm=1.04, x_dm=0.97, x_im=1.02, x_gph=1.01, x_dph=0.99, x_iph=1.00,
    )
    assert rel_ok(manual_rate(census, f), 378787.53233611735)


def test_manual_rate_zero_cost_share():
    census = GroupCensus(mm=1000, m=0, S=0.0)
    f = RatingFactors(BC_med=200, BC_ph=50)
    # x_udm = 1.2 and the pharmacy table's first bucket is 1.10
    assert rel_ok(manual_rate(census, f), 295_000.0)


def test_manual_rate_full_cost_share():
    census = GroupCensus(mm=600, m=16, S=1.0)
    f = RatingFactors(BC_med=400, BC_cap=10, BC_ph=90, AT_med=0.03, AT_ph=0.02)
    assert rel_ok(manual_rate(census, f), 182433.498491649)


def test_manual_rate_explicit_dampening_overrides():
    census = GroupCensus(mm=100, m=0, S=0.3)
    f = RatingFactors(BC_med=300, BC_cap=5, BC_ph=40, x_udm=0.8, x_udph=0.6)
    assert rel_ok(manual_rate(census, f), 26_900.0)


def test_medical_dampening_frozen_points():
    assert rel_ok(utilization_dampening_medical(0.0), 1.2)
    assert rel_ok(utilization_dampening_medical(0.5), 0.8043840552427671)
    assert rel_ok(utilization_dampening_medical(1.0), 0.5391947569406659)


@settings(max_examples=100)
@given(st.floats(min_value=0, max_value=1, exclude_max=True), st.floats(min_value=1e-9, max_value=1))
def test_medical_dampening_strictly_decreasing(s, step):
    s2 = min(1.0, s + step)
    # clamping can shrink the gap below float resolution; the curve's
    # slope is ~0.43..0.96 so any resolvable gap must strictly decrease
    assume(s2 - s >= 1e-12)
    assert utilization_dampening_medical(s) > utilization_dampening_medical(s2)


def test_pharmacy_dampening_step_table():
    assert utilization_dampening_pharmacy(0.0) == 1.10
    assert utilization_dampening_pharmacy(0.19) == 1.10
    assert utilization_dampening_pharmacy(0.2) == 1.00
    assert utilization_dampening_pharmacy(0.4) == 0.90
    assert utilization_dampening_pharmacy(0.6) == 0.82
    assert utilization_dampening_pharmacy(0.8) == 0.75
    assert utilization_dampening_pharmacy(1.0) == 0.75


def test_pharmacy_dampening_custom_table():
    table = ((0.5, 2.0), (1.000000000001, 0.5))
    assert utilization_dampening_pharmacy(0.25, table) == 2.0
    assert utilization_dampening_pharmacy(0.75, table) == 0.5


# ---------------------------------------------------------------------------
# blend and credibility


def test_blend_endpoints_and_frozen_midpoint():
    assert blend(100.0, 200.0, 1.0) == 100.0
    assert blend(100.0, 200.0, 0.0) == 200.0
    assert rel_ok(blend(100.0, 200.0, 0.25), 175.0)
    assert rel_ok(blend(480_000.0, 390_000.0, 0.4), 426_000.0)


def test_blend_rejects_weights_outside_unit_interval():
    with pytest.raises(ValueError):
        blend(1.0, 2.0, -0.01)
    with pytest.raises(ValueError):
        blend(1.0, 2.0, 1.01)


@settings(max_examples=100)
@given(
    st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
    st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
    st.floats(min_value=0, max_value=1),
    st.floats(min_value=0, max_value=1),
)
def test_blend_monotone_toward_experience(er, mr, c1, c2):
    lo, hi = min(c1, c2), max(c1, c2)
    if er >= mr:
        assert blend(er, mr, hi) >= blend(er, mr, lo) - 1e-9
    else:
        assert blend(er, mr, hi) <= blend(er, mr, lo) + 1e-9


def test_credibility_frozen_points():
    assert credibility(0) == 0.0
    assert credibility(12_000) == 1.0
    assert credibility(24_000) == 1.0
    assert rel_ok(credibility(3_000), 0.5)
    assert rel_ok(credibility(300), 0.15811388300841897)


def test_credibility_depends_only_on_member_months():
    # 1000 members for 6 months vs 200 members for 30 months
    assert credibility(1000 * 6) == credibility(200 * 30)


@settings(max_examples=100)
@given(st.floats(min_value=0, max_value=1e6), st.floats(min_value=0, max_value=1e6))
def test_credibility_monotone_and_bounded(a, b):
    ca, cb = credibility(a), credibility(b)
    assert 0.0 <= ca <= 1.0
    if a <= b:
        assert ca <= cb


def test_credibility_custom_curve():
    curve = CredibilityCurve(full_credibility_member_months=4_800)
    assert credibility(1_200, curve) == 0.5
    assert credibility(4_800, curve) == 1.0


# ---------------------------------------------------------------------------
# shock split


def test_shock_split_frozen_example():
    s = shock_split([50_000, 120_000], 100_000)
    assert (s.TC, s.TSC, s.n_s) == (170_000, 20_000, 1)


def test_shock_split_no_shocks():
    s = shock_split([10_000, 20_000], 100_000)
    assert (s.TC, s.TSC, s.n_s) == (30_000, 0, 0)


def test_shock_split_zero_pooling_limit():
    s = shock_split([10_000, 0.0, 20_000], 0.0)
    assert (s.TC, s.TSC, s.n_s) == (30_000, 30_000, 2)


def test_shock_split_negative_member_total_never_pools():
    s = shock_split([-5_000, 120_000], 100_000)
    assert (s.TC, s.TSC, s.n_s) == (115_000, 20_000, 1)


@settings(max_examples=100)
@given(
    st.lists(st.floats(min_value=0, max_value=1e6, allow_nan=False), max_size=12),
    st.floats(min_value=0, max_value=2e5),
)
def test_shock_split_bounds(totals, level):
    s = shock_split(totals, level)
    assert 0 <= s.TSC <= s.TC + 1e-6 if s.TC >= 0 else s.TSC >= 0
    assert 0 <= s.n_s <= len(totals)
    assert s.TC == pytest.approx(math.fsum(totals), rel=1e-12, abs=1e-9)


# ---------------------------------------------------------------------------
# factor tables


def test_factor_tables_lookup_defaults_to_one(tmp_path):
    path = tmp_path / "factors.csv"
    path.write_text(
        "table_name,key,factor\n"
        "geography,west,1.08\n"
        "industry,mining,1.22\n"
    )
    tables = FactorTables.from_csv(str(path))
    assert tables.lookup("geography", "west") == 1.08
    assert tables.lookup("industry", "mining") == 1.22
    assert tables.lookup("geography", "unknown") == 1.0
    assert tables.lookup("missing_table", "west") == 1.0


def test_factor_tables_reject_nonpositive(tmp_path):
    path = tmp_path / "factors.csv"
    path.write_text("table_name,key,factor\ngeography,west,0\n")
    with pytest.raises(ValueError):
        FactorTables.from_csv(str(path))
