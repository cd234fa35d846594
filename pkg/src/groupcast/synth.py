"""Synthetic book-of-business generator with known ground truth.

Members carry latent condition profiles that drive gamma-distributed
monthly costs, diagnosis/procedure/medication codes, and drifting lab
series, so the feature extractor has real signal to find. Groups renew
on a configurable date; enrollment churns monthly; rare shock claims
and reversal pairs that straddle the blackout boundary exercise the
pooling and censoring logic downstream.

The manifest written next to the CSVs records every latent label and,
per group, the exact experience- and projection-window cost in integer
cents, bookkept with the same enrolled-on-the-first attribution rule
the rest of the package uses.

Concession groups ramp their cost level down over the final months of
the experience window and stay at the reduced level through the
projection year. The decline is therefore visible (faintly) in the
features a model sees before the blackout, while the baseline rater,
anchored on the full experience period, keeps pricing the old level.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from typing import Sequence

import numpy as np

from .records import (
    Book,
    CareSetting,
    ClaimSpec,
    CodeSystem,
    CoverageSpan,
    LabInterpretation,
    Sex,
    add_months,
    build_record,
    export_book,
    month_index,
)

__all__ = [
    "LabSpec",
    "ConditionProfile",
    "DEFAULT_PROFILES",
    "SynthConfig",
    "SynthResult",
    "inject_concessions",
    "generate_book",
    "generate",
]


@dataclass(frozen=True)
class LabSpec:
    code: str  # LOINC
    base_value: float
    drift_per_month: float
    noise_sd: float
    high_threshold: float
    every_months: int = 3

    def __post_init__(self):
        if self.noise_sd < 0 or self.every_months < 1:
            raise ValueError("invalid lab spec")


@dataclass(frozen=True)
class ConditionProfile:
    name: str
    weight: float
    gamma_shape: float
    gamma_scale: float
    zero_month_prob: float
    diagnosis_codes: tuple[str, ...]
    procedure_codes: tuple[str, ...]
    medication_codes: tuple[str, ...] = ()
    lab: LabSpec | None = None
    # sampling weights over (outpatient, primary, specialty, ancillary,
    # emergency, inpatient)
    setting_weights: tuple[float, ...] = (0.45, 0.25, 0.15, 0.08, 0.05, 0.02)

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("profile weight must be non-negative")
        if self.gamma_shape <= 0 or self.gamma_scale <= 0:
            raise ValueError("gamma parameters must be positive")
        if not 0.0 <= self.zero_month_prob <= 1.0:
            raise ValueError("zero_month_prob must lie in [0, 1]")
        if len(self.setting_weights) != 6 or min(self.setting_weights) < 0:
            raise ValueError("setting_weights must be 6 non-negative values")


_SETTINGS = (
    CareSetting.OUTPATIENT,
    CareSetting.PRIMARY,
    CareSetting.SPECIALTY,
    CareSetting.ANCILLARY,
    CareSetting.EMERGENCY,
    CareSetting.INPATIENT,
)

DEFAULT_PROFILES: tuple[ConditionProfile, ...] = (
    ConditionProfile(
        name="healthy",
        weight=0.62,
        gamma_shape=0.4,
        gamma_scale=300.0,
        zero_month_prob=0.55,
        diagnosis_codes=("Z00.00", "J06.9", "M54.5"),
        procedure_codes=("99213", "99395"),
    ),
    ConditionProfile(
        name="diabetes",
        weight=0.18,
        gamma_shape=0.8,
        gamma_scale=700.0,
        zero_month_prob=0.25,
        diagnosis_codes=("E11.9", "E11.65", "E11.40", "I10"),
        procedure_codes=("99214", "83036", "82947"),
        medication_codes=("00002751001", "00088222033"),
        lab=LabSpec("4548-4", base_value=7.1, drift_per_month=0.015, noise_sd=0.45, high_threshold=6.5),
    ),
    ConditionProfile(
        name="cardiac",
        weight=0.12,
        gamma_shape=0.9,
        gamma_scale=900.0,
        zero_month_prob=0.20,
        diagnosis_codes=("I25.10", "I10", "E78.5", "I48.91"),
        procedure_codes=("99214", "93000", "93306"),
        medication_codes=("00071015523", "00186077660"),
        lab=LabSpec("2089-1", base_value=128.0, drift_per_month=0.6, noise_sd=14.0, high_threshold=130.0),
        setting_weights=(0.40, 0.18, 0.22, 0.08, 0.08, 0.04),
    ),
    ConditionProfile(
        name="renal",
        weight=0.08,
        gamma_shape=1.1,
        gamma_scale=1400.0,
        zero_month_prob=0.15,
        diagnosis_codes=("N18.3", "N18.4", "I12.9", "D63.1"),
        procedure_codes=("99215", "82565", "90935"),
        medication_codes=("00069805541",),
        lab=LabSpec("2160-0", base_value=1.55, drift_per_month=0.012, noise_sd=0.22, high_threshold=1.40),
        setting_weights=(0.35, 0.15, 0.22, 0.15, 0.08, 0.05),
    ),
)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_groups: int = 200
    # group size ~ lognormal(ln(median), sigma), floored at min_group_size
    group_size_median: float = 55.0
    group_size_sigma: float = 0.6
    min_group_size: int = 20
    renewal_date: date = date(2017, 1, 1)  # first of a month
    renewal_spread_months: int = 1  # renewals uniform over this many months
    experience_months: int = 12
    blackout_months: int = 4
    projection_months: int = 12
    history_months: int = 6  # lead-in before the experience window
    profiles: tuple[ConditionProfile, ...] = DEFAULT_PROFILES
    monthly_drop_prob: float = 0.012
    monthly_add_rate: float = 0.012
    annual_cost_trend: float = 0.04
    shock_rate: float = 0.01  # per member-year
    shock_gamma: tuple[float, float] = (2.0, 15000.0)
    pharmacy_monthly_prob: float = 0.85
    pharmacy_gamma: tuple[float, float] = (1.5, 90.0)
    reversal_rate: float = 0.05  # per member
    concession_fraction: float = 0.0
    concession_scale_range: tuple[float, float] = (0.72, 0.88)
    concession_ramp_months: int = 4

    def __post_init__(self):
        if self.n_groups < 1:
            raise ValueError("n_groups must be positive")
        if self.group_size_median <= 0 or self.group_size_sigma <= 0:
            raise ValueError("group size distribution parameters must be positive")
        if self.renewal_date.day != 1:
            raise ValueError("renewal_date must fall on the first of a month")
        if self.renewal_spread_months < 1:
            raise ValueError("renewal_spread_months must be at least 1")
        for name in ("monthly_drop_prob", "monthly_add_rate", "pharmacy_monthly_prob",
                     "reversal_rate", "concession_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.shock_rate < 0:
            raise ValueError("shock_rate must be non-negative")
        for shape, scale in (self.shock_gamma, self.pharmacy_gamma):
            if shape <= 0 or scale <= 0:
                raise ValueError("gamma parameters must be positive")
        lo, hi = self.concession_scale_range
        if not 0.0 < lo <= hi < 0.95:
            raise ValueError("concession scales must lie in (0, 0.95) with lo <= hi")
        if not self.profiles or abs(sum(p.weight for p in self.profiles)) <= 0:
            raise ValueError("profiles must carry positive total weight")
        if min(self.experience_months, self.blackout_months, self.projection_months) < 1:
            raise ValueError("window lengths must be positive")
        if self.concession_ramp_months < 1:
            raise ValueError("concession_ramp_months must be positive")


@dataclass
class SynthResult:
    book: Book
    manifest: dict
    claims_path: str | None = None
    eligibility_path: str | None = None
    labs_path: str | None = None
    manifest_path: str | None = None


def _month_start(idx: int) -> date:
    year, month0 = divmod(idx, 12)
    return date(year, month0 + 1, 1)


def _month_end(idx: int) -> date:
    return _month_start(idx + 1) - timedelta(days=1)


def _cents(x: float) -> int:
    return int(round(x * 100.0))


def inject_concessions(
    manifest: dict,
    fraction: float,
    seed: int | None = None,
    scale_range: tuple[float, float] = (0.72, 0.88),
) -> dict:
    """Label a fraction of manifest groups as planted concessions.

    Each labeled group gets a cost_scale drawn uniformly from
    scale_range; the generator realizes that scale as a cost decline
    starting late in the experience window, so the labeled group's
    projection cost lands well below what experience-level pricing
    expects. Operating on the manifest before materialization keeps
    the bookkeeping exact. Returns a new manifest; the input is not
    modified.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    out = json.loads(json.dumps(manifest))
    groups = out["groups"]
    gids = sorted(groups)
    n_pick = int(round(fraction * len(gids)))
    rng = np.random.default_rng(seed if seed is not None else 0)
    picked = rng.choice(len(gids), size=n_pick, replace=False)
    chosen = {gids[i] for i in np.sort(picked)}
    lo, hi = scale_range
    for gid in gids:
        if gid in chosen:
            groups[gid]["concession"] = True
            groups[gid]["cost_scale"] = float(lo + (hi - lo) * rng.random())
        else:
            groups[gid]["concession"] = False
            groups[gid]["cost_scale"] = 1.0
    out["concession_fraction"] = fraction
    return out


@dataclass
class _GroupPlan:
    group_id: str
    renewal_idx: int
    size: int
    cost_scale: float


def _plan_groups(cfg: SynthConfig, rng: np.random.Generator) -> list[_GroupPlan]:
    base_idx = month_index(cfg.renewal_date)
    plans = []
    for i in range(cfg.n_groups):
        gid = f"G{i + 1:04d}"
        offset = int(rng.integers(cfg.renewal_spread_months))
        size = max(cfg.min_group_size,
                   int(rng.lognormal(math.log(cfg.group_size_median), cfg.group_size_sigma)))
        plans.append(_GroupPlan(gid, base_idx + offset, size, 1.0))
    return plans


def _cost_multipliers(cfg: SynthConfig, plan: _GroupPlan, start_idx: int, n_months: int) -> np.ndarray:
    """Per-month factor: secular trend times the concession ramp."""
    months = np.arange(start_idx, start_idx + n_months)
    mult = (1.0 + cfg.annual_cost_trend) ** ((months - plan.renewal_idx) / 12.0)
    s = plan.cost_scale
    if s != 1.0:
        blackout_start = plan.renewal_idx - cfg.blackout_months
        ramp_start = blackout_start - cfg.concession_ramp_months
        ramp_frac = np.clip((months - ramp_start + 1) / cfg.concession_ramp_months, 0.0, 1.0)
        mult *= 1.0 + ramp_frac * (s - 1.0)
    return mult


def _generate_member(
    cfg: SynthConfig,
    plan: _GroupPlan,
    member_id: str,
    start_idx: int,
    group_start_idx: int,
    group_end_idx: int,
    mult_all: np.ndarray,
    profile: ConditionProfile,
    rng: np.random.Generator,
):
    end_idx = min(group_end_idx, start_idx + int(rng.geometric(cfg.monthly_drop_prob)) - 1)
    months = np.arange(start_idx, end_idx + 1)
    n = months.size
    mult = mult_all[start_idx - group_start_idx : end_idx - group_start_idx + 1]

    age_years = int(rng.integers(25, 65))
    renewal = _month_start(plan.renewal_idx)
    birthday = renewal - timedelta(days=age_years * 365 + int(rng.integers(365)))
    sex = Sex.F if rng.random() < 0.5 else Sex.M
    coverage = CoverageSpan(
        group_id=plan.group_id,
        start_date=_month_start(start_idx),
        end_date=_month_end(end_idx),
        plan_type="PPO",
    )

    claims: list[ClaimSpec] = []
    labs: list[tuple] = []
    n_claims = 0

    def next_claim_id() -> str:
        nonlocal n_claims
        n_claims += 1
        return f"{member_id}-c{n_claims:03d}"

    def paid_part(amount: float) -> float:
        # members pay ~15% out of pocket; insurer-paid share, cent-exact
        return int(round(amount * 100 * 0.85)) / 100.0

    util = rng.random(n) >= profile.zero_month_prob
    med_costs = rng.gamma(profile.gamma_shape, profile.gamma_scale, n) * mult
    days = rng.integers(1, 29, size=n)
    lags = rng.integers(5, 26, size=n)
    weights = np.asarray(profile.setting_weights, dtype=np.float64)
    weights = weights / weights.sum()
    setting_draws = rng.choice(len(_SETTINGS), size=n, p=weights)
    n_dx = rng.integers(1, 3, size=n)
    shock_mask = rng.random(n) < cfg.shock_rate / 12.0
    if profile.medication_codes:
        pharm_mask = rng.random(n) < cfg.pharmacy_monthly_prob
        pharm_costs = rng.gamma(cfg.pharmacy_gamma[0], cfg.pharmacy_gamma[1], n) * mult
    else:
        pharm_mask = np.zeros(n, dtype=bool)
        pharm_costs = med_costs  # unused

    for k in range(n):
        m = int(months[k])
        when = _month_start(m) + timedelta(days=int(days[k]) - 1)
        paid = when + timedelta(days=int(lags[k]))
        if util[k] and med_costs[k] > 0.005:
            amount = _cents(med_costs[k]) / 100.0
            setting = _SETTINGS[int(setting_draws[k])]
            codes = [(CodeSystem.ICD10, profile.diagnosis_codes[int(rng.integers(len(profile.diagnosis_codes)))])]
            if int(n_dx[k]) == 2 and len(profile.diagnosis_codes) > 1:
                other = profile.diagnosis_codes[int(rng.integers(len(profile.diagnosis_codes)))]
                if (CodeSystem.ICD10, other) not in codes:
                    codes.append((CodeSystem.ICD10, other))
            codes.append((CodeSystem.CPT, profile.procedure_codes[int(rng.integers(len(profile.procedure_codes)))]))
            rev: tuple[str, ...] = ()
            if setting is CareSetting.INPATIENT:
                rev = ("0100",)
            elif setting is CareSetting.EMERGENCY:
                rev = ("0450",)
            claims.append(ClaimSpec(
                claim_id=next_claim_id(),
                encounter_date=when,
                paid_date=paid,
                allowed_amount=amount,
                paid_amount=paid_part(amount),
                care_setting=setting,
                revenue_codes=rev,
                codes=tuple(codes),
            ))
        if pharm_mask[k] and pharm_costs[k] > 0.005:
            amount = _cents(pharm_costs[k]) / 100.0
            ndc = profile.medication_codes[int(rng.integers(len(profile.medication_codes)))]
            claims.append(ClaimSpec(
                claim_id=next_claim_id(),
                encounter_date=when,
                paid_date=paid,
                allowed_amount=amount,
                paid_amount=paid_part(amount),
                care_setting=CareSetting.ANCILLARY,
                is_pharmacy=True,
                codes=((CodeSystem.NDC, ndc),),
            ))
        if shock_mask[k]:
            amount = _cents(float(rng.gamma(*cfg.shock_gamma)) * mult[k]) / 100.0
            if amount > 0:
                claims.append(ClaimSpec(
                    claim_id=next_claim_id(),
                    encounter_date=when,
                    paid_date=paid,
                    allowed_amount=amount,
                    paid_amount=paid_part(amount),
                    care_setting=CareSetting.INPATIENT,
                    revenue_codes=("0100",),
                    codes=(
                        (CodeSystem.ICD10, profile.diagnosis_codes[0]),
                        (CodeSystem.CPT, "99223"),
                    ),
                ))

    if profile.lab is not None:
        spec = profile.lab
        for k in range(0, n, spec.every_months):
            m = int(months[k])
            when = _month_start(m) + timedelta(days=14)
            value = spec.base_value + spec.drift_per_month * k + spec.noise_sd * float(rng.standard_normal())
            value = round(value, 3)
            interp = (LabInterpretation.HIGH if value > spec.high_threshold
                      else LabInterpretation.NORMAL)
            labs.append((when, CodeSystem.LOINC, spec.code, value, interp))

    n_reversals = 0
    if cfg.reversal_rate > 0 and rng.random() < cfg.reversal_rate:
        blackout_start_idx = plan.renewal_idx - cfg.blackout_months
        lo = blackout_start_idx - 3
        candidates = [
            c for c in claims
            if lo <= month_index(c.encounter_date) < blackout_start_idx
            and c.allowed_amount > 0
        ]
        if candidates:
            target = max(candidates, key=lambda c: c.allowed_amount)
            reversal_paid = _month_start(blackout_start_idx) + timedelta(days=14)
            claims.append(ClaimSpec(
                claim_id=target.claim_id + "R",
                encounter_date=target.encounter_date,
                paid_date=reversal_paid,
                allowed_amount=-target.allowed_amount,
                paid_amount=-target.paid_amount,
                care_setting=target.care_setting,
                is_pharmacy=target.is_pharmacy,
            ))
            n_reversals = 1

    record = build_record(member_id, birthday, sex, [coverage], claims, labs)
    info = {
        "group_id": plan.group_id,
        "profile": profile.name,
        "start_month": _month_start(start_idx).isoformat(),
        "end_month": _month_start(end_idx).isoformat(),
        "n_shocks": int(shock_mask.sum()),
        "n_reversals": n_reversals,
    }
    return record, info, (start_idx, end_idx)


def generate_book(config: SynthConfig) -> tuple[Book, dict]:
    """Build the synthetic book in memory along with its manifest."""
    cfg = config
    root = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    plans = _plan_groups(cfg, root)

    manifest: dict = {
        "format_version": 1,
        "seed": cfg.seed,
        "n_groups": cfg.n_groups,
        "concession_fraction": cfg.concession_fraction,
        "groups": {
            p.group_id: {
                "renewal_date": _month_start(p.renewal_idx).isoformat(),
                "concession": False,
                "cost_scale": 1.0,
            }
            for p in plans
        },
        "members": {},
    }
    if cfg.concession_fraction > 0:
        manifest = inject_concessions(
            manifest, cfg.concession_fraction,
            seed=cfg.seed + 1, scale_range=cfg.concession_scale_range,
        )
        for p in plans:
            p.cost_scale = manifest["groups"][p.group_id]["cost_scale"]

    spawn_keys = np.random.SeedSequence(cfg.seed).spawn(len(plans) + 1)
    book: Book = []
    member_serial = 0
    for plan, seq in zip(plans, spawn_keys[1:]):
        rng = np.random.default_rng(seq)
        blackout_start_idx = plan.renewal_idx - cfg.blackout_months
        exp_start_idx = blackout_start_idx - cfg.experience_months
        group_start_idx = exp_start_idx - cfg.history_months
        group_end_idx = plan.renewal_idx + cfg.projection_months - 1
        n_months = group_end_idx - group_start_idx + 1
        mult_all = _cost_multipliers(cfg, plan, group_start_idx, n_months)
        slice_idx = blackout_start_idx - 1

        starts = [group_start_idx] * plan.size
        for m in range(group_start_idx + 1, group_end_idx + 1):
            for _ in range(int(rng.poisson(plan.size * cfg.monthly_add_rate))):
                starts.append(m)

        exp_cents = proj_cents = 0
        exp_mm = proj_mm = 0
        members_end = 0
        g = manifest["groups"][plan.group_id]
        for start_idx in starts:
            member_serial += 1
            member_id = f"M{member_serial:06d}"
            record, info, (s_idx, e_idx) = _generate_member(
                cfg, plan, member_id, start_idx,
                group_start_idx, group_end_idx, mult_all,
                _pick_profile(cfg.profiles, rng), rng,
            )
            book.append(record)
            manifest["members"][member_id] = info
            exp_mm += max(0, min(e_idx, blackout_start_idx - 1) - max(s_idx, exp_start_idx) + 1)
            proj_mm += max(0, min(e_idx, group_end_idx) - max(s_idx, plan.renewal_idx) + 1)
            if s_idx <= slice_idx <= e_idx:
                members_end += 1
            for claim in record.claims:
                eidx = month_index(claim.encounter_date)
                if not s_idx <= eidx <= e_idx:
                    continue
                cents = _cents(claim.allowed_amount)
                if exp_start_idx <= eidx < blackout_start_idx:
                    exp_cents += cents
                if plan.renewal_idx <= eidx <= group_end_idx:
                    proj_cents += cents

        g.update({
            "n_members_total": len(starts),
            "n_members_end_experience": members_end,
            "experience_start": _month_start(exp_start_idx).isoformat(),
            "slice_date": _month_end(slice_idx).isoformat(),
            "projection_start": _month_start(plan.renewal_idx).isoformat(),
            "projection_end": _month_end(group_end_idx).isoformat(),
            "experience_allowed_cents": exp_cents,
            "experience_member_months": exp_mm,
            "projection_allowed_cents": proj_cents,
            "projection_member_months": proj_mm,
        })
        if exp_mm > 0 and proj_mm > 0 and exp_cents > 0:
            exp_pmpm = exp_cents / 100.0 / exp_mm
            proj_pmpm = proj_cents / 100.0 / proj_mm
            g["experience_pmpm"] = exp_pmpm
            g["projection_pmpm"] = proj_pmpm
            g["true_trend"] = proj_pmpm / exp_pmpm

    book.sort(key=lambda r: r.member_id)
    return book, manifest


def _pick_profile(profiles: Sequence[ConditionProfile], rng: np.random.Generator) -> ConditionProfile:
    weights = np.array([p.weight for p in profiles], dtype=np.float64)
    return profiles[int(rng.choice(len(profiles), p=weights / weights.sum()))]


def generate(config: SynthConfig, out_dir: str) -> SynthResult:
    """Generate the book and write claims, eligibility, labs, manifest."""
    book, manifest = generate_book(config)
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "claims": os.path.join(out_dir, "claims.csv"),
        "eligibility": os.path.join(out_dir, "eligibility.csv"),
        "labs": os.path.join(out_dir, "labs.csv"),
        "manifest": os.path.join(out_dir, "manifest.json"),
    }
    export_book(book, paths["claims"], paths["eligibility"], paths["labs"])
    with open(paths["manifest"], "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return SynthResult(
        book=book,
        manifest=manifest,
        claims_path=paths["claims"],
        eligibility_path=paths["eligibility"],
        labs_path=paths["labs"],
        manifest_path=paths["manifest"],
    )
