"""Actuarial rating: experience and manual rates, credibility blending.

Implements the desk formulas a group underwriter applies to one
renewal. Both rates produce a projection-period total cost in dollars;
the final quote blends them with a credibility weight driven by the
group's experience member months. Shock (pooled) claims are removed
from the experience at a pooling level and replaced by book-level
pooled charges so one catastrophic member does not dominate the quote.

All multiplicative adjustment factors default to 1 and can be sourced
from editable CSV factor tables keyed by group attributes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

__all__ = [
    "GroupExperience",
    "GroupCensus",
    "RatingFactors",
    "CredibilityCurve",
    "ShockSplit",
    "FactorTables",
    "DEFAULT_UDPH_TABLE",
    "shock_split",
    "utilization_dampening_medical",
    "utilization_dampening_pharmacy",
    "experience_rate",
    "manual_rate",
    "credibility",
    "blend",
]


# ---------------------------------------------------------------------------
# inputs


@dataclass(frozen=True)
class GroupExperience:
    """One group's experience-period aggregates, shock claims removed.

    TC is the total allowed cost, TSC the shock (pooled) excess above
    the pooling level, n_s the count of shocked members, mm the member
    months, m the months between the experience and projection period
    midpoints, and S the member cost share (fraction of allowed that
    members paid out of pocket).
    """

    TC: float
    TSC: float
    n_s: int
    mm: float
    m: float
    S: float

    def __post_init__(self):
        if self.mm <= 0:
            raise ValueError("member months must be positive")
        if self.n_s < 0:
            raise ValueError("shock count must be non-negative")
        if not 0.0 <= self.S <= 1.0:
            raise ValueError("cost share S must lie in [0, 1]")


@dataclass(frozen=True)
class GroupCensus:
    """What the manual rate may use: exposure, trend horizon, cost share."""

    mm: float
    m: float
    S: float

    def __post_init__(self):
        if self.mm < 0:
            raise ValueError("member months must be non-negative")
        if not 0.0 <= self.S <= 1.0:
            raise ValueError("cost share S must lie in [0, 1]")


# S -> pharmacy utilization dampening factor, upper bounds inclusive-exclusive
DEFAULT_UDPH_TABLE: tuple[tuple[float, float], ...] = (
    (0.2, 1.10),
    (0.4, 1.00),
    (0.6, 0.90),
    (0.8, 0.82),
    (1.0 + 1e-12, 0.75),  # closed top bucket: S == 1.0 maps to 0.75
)


@dataclass(frozen=True)
class RatingFactors:
    """Adjustment factors and base rates feeding the two rating formulas.

    Base rates (BC_*) are book-level pmpm costs by claim class; AT_*
    are annual trend fractions; x_* are dimensionless multiplicative
    factors. x_udm and x_udph are the utilization dampening factors;
    leave them None to derive both from the group's cost share S.
    """

    # base pmpm rates
    BC_med: float = 0.0
    BC_cap: float = 0.0
    BC_ph: float = 0.0
    BC_p: float = 0.0
    # annual trend fractions
    AT: float = 0.0
    AT_L: float = 0.0
    AT_med: float = 0.0
    AT_ph: float = 0.0
    # pooling level (per member per experience period)
    x_p: float = 100_000.0
    # experience-rate factors
    x_m: float = 1.0
    x_b: float = 1.0
    x_d: float = 1.0
    x_ph: float = 1.0
    x_gp: float = 1.0
    x_dp: float = 1.0
    x_ip: float = 1.0
    # manual-rate factors
    x_gm: float = 1.0
    x_dm: float = 1.0
    x_im: float = 1.0
    x_gph: float = 1.0
    x_dph: float = 1.0
    x_iph: float = 1.0
    # utilization dampening overrides (None -> derived from S)
    x_udm: float | None = None
    x_udph: float | None = None
    udph_table: tuple[tuple[float, float], ...] = DEFAULT_UDPH_TABLE

    def __post_init__(self):
        for name in (
            "x_p", "x_m", "x_b", "x_d", "x_ph", "x_gp", "x_dp", "x_ip",
            "x_gm", "x_dm", "x_im", "x_gph", "x_dph", "x_iph",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"factor {name} must be positive")
        for name in ("x_udm", "x_udph"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"factor {name} must be positive")
        for name in ("BC_med", "BC_cap", "BC_ph", "BC_p"):
            if getattr(self, name) < 0:
                raise ValueError(f"base rate {name} must be non-negative")


# ---------------------------------------------------------------------------
# shock claims


@dataclass(frozen=True)
class ShockSplit:
    TC: float
    TSC: float
    n_s: int


def shock_split(member_totals: Iterable[float], pooling_level: float) -> ShockSplit:
    """Split experience cost into total and shock excess at the pooling level.

    Input is per-member experience-period totals. A member is shocked
    when their total strictly exceeds the pooling level; the shock cost
    is the excess above it: TSC = sum(max(0, total - x_p)).
    """
    if pooling_level < 0:
        raise ValueError("pooling level must be non-negative")
    tc = 0.0
    tsc = 0.0
    n_s = 0
    for total in member_totals:
        tc += total
        excess = total - pooling_level
        if excess > 0:
            tsc += excess
            n_s += 1
    return ShockSplit(TC=tc, TSC=tsc, n_s=n_s)


# ---------------------------------------------------------------------------
# utilization dampening


def utilization_dampening_medical(S: float) -> float:
    """Medical utilization dampening: x_udm = 1.2 * exp(-0.8 * S).

    Higher member cost share damps utilization; S = 0 gives 1.2 and the
    factor decays exponentially toward 1.2 * e^-0.8 at S = 1.
    """
    if not 0.0 <= S <= 1.0:
        raise ValueError("cost share S must lie in [0, 1]")
    return 1.2 * math.exp(-0.8 * S)


def utilization_dampening_pharmacy(
    S: float, table: Sequence[tuple[float, float]] = DEFAULT_UDPH_TABLE
) -> float:
    """Pharmacy utilization dampening from a step table on cost share S.

    The table lists (upper_bound, factor) steps; the factor of the first
    bucket whose upper bound exceeds S applies.
    """
    if not 0.0 <= S <= 1.0:
        raise ValueError("cost share S must lie in [0, 1]")
    for upper, factor in table:
        if S < upper:
            return factor
    return table[-1][1]


# ---------------------------------------------------------------------------
# rates


def experience_rate(exp: GroupExperience, f: RatingFactors) -> float:
    """Experience rate in projection-period dollars.

    ER = (TC - TSC) * (1 + AT)^(m/12) * x_m * x_b * x_d
         + n_s * x_p
         + BC_p * (1 + AT_L)^(m/12) * x_ph * x_gp * x_dp * x_ip * mm

    The first term trends the group's own non-shock experience forward,
    the second restores a charge per shocked member at the pooling
    level, and the third adds the book-level pooled claims cost.
    """
    trended = (exp.TC - exp.TSC) * (1.0 + f.AT) ** (exp.m / 12.0)
    trended *= f.x_m * f.x_b * f.x_d
    pooled_charge = exp.n_s * f.x_p
    pooled_base = f.BC_p * (1.0 + f.AT_L) ** (exp.m / 12.0)
    pooled_base *= f.x_ph * f.x_gp * f.x_dp * f.x_ip * exp.mm
    return trended + pooled_charge + pooled_base


def manual_rate(census: GroupCensus, f: RatingFactors) -> float:
    """Manual rate in projection-period dollars.

    MR = [ BC_med * (1 + AT_med)^(m/12) * x_gm * x_dm * x_im * x_udm
         + BC_cap * (1 + AT_med)^(m/12)
         + BC_ph  * (1 + AT_ph)^(m/12) * x_gph * x_dph * x_iph * x_udph ] * mm

    Book-level base pmpm rates are trended to the projection midpoint,
    adjusted, and scaled by the group's member months. When the
    dampening factors are not overridden they derive from cost share:
    x_udm = 1.2 * exp(-0.8 * S) and x_udph from the step table.
    """
    x_udm = f.x_udm if f.x_udm is not None else utilization_dampening_medical(census.S)
    x_udph = (
        f.x_udph
        if f.x_udph is not None
        else utilization_dampening_pharmacy(census.S, f.udph_table)
    )
    med_trend = (1.0 + f.AT_med) ** (census.m / 12.0)
    ph_trend = (1.0 + f.AT_ph) ** (census.m / 12.0)
    medical = f.BC_med * med_trend * f.x_gm * f.x_dm * f.x_im * x_udm
    capitation = f.BC_cap * med_trend
    pharmacy = f.BC_ph * ph_trend * f.x_gph * f.x_dph * f.x_iph * x_udph
    return (medical + capitation + pharmacy) * census.mm


# ---------------------------------------------------------------------------
# credibility


@dataclass(frozen=True)
class CredibilityCurve:
    """Square-root credibility: c = min(1, sqrt(mm / full_credibility_mm))."""

    full_credibility_member_months: float = 12_000.0

    def __post_init__(self):
        if self.full_credibility_member_months <= 0:
            raise ValueError("full credibility member months must be positive")


def credibility(mm: float, curve: CredibilityCurve = CredibilityCurve()) -> float:
    """Credibility weight on the experience rate for a group's exposure."""
    if mm < 0:
        raise ValueError("member months must be non-negative")
    return min(1.0, math.sqrt(mm / curve.full_credibility_member_months))


def blend(er: float, mr: float, c: float) -> float:
    """Credibility-weighted quote: c * ER + (1 - c) * MR."""
    if not 0.0 <= c <= 1.0:
        raise ValueError("credibility must lie in [0, 1]")
    return c * er + (1.0 - c) * mr


# ---------------------------------------------------------------------------
# factor tables


class FactorTables:
    """Factor lookups from an editable CSV (table_name, key, factor).

    Unknown keys fall back to 1.0 so a missing row never changes a
    quote silently in a surprising direction.
    """

    def __init__(self, entries: Mapping[tuple[str, str], float] | None = None):
        self._entries = dict(entries or {})

    @classmethod
    def from_csv(cls, path: str) -> "FactorTables":
        entries: dict[tuple[str, str], float] = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                factor = float(row["factor"])
                if factor <= 0:
                    raise ValueError(
                        f"factor table {row['table_name']}[{row['key']}] must be positive"
                    )
                entries[(row["table_name"].strip(), row["key"].strip())] = factor
        return cls(entries)

    def lookup(self, table_name: str, key: str, default: float = 1.0) -> float:
        return self._entries.get((table_name, key), default)

    def __len__(self) -> int:
        return len(self._entries)
