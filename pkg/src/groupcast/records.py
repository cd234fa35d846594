"""Longitudinal member records: ingest, censoring views, and QA aggregates.

The record layer owns the raw book of business. Everything downstream
(slicing, features, rating) works off immutable ``PatientRecord`` objects
built here. Ingest is row-forgiving: every input row either lands on a
record or is written to a rejects report with a reason, and a malformed
row never aborts the run.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from enum import Enum
from typing import Iterable, Mapping, Sequence

__all__ = [
    "CareSetting",
    "CodeSystem",
    "Sex",
    "LabInterpretation",
    "CoverageSpan",
    "TermEvent",
    "Claim",
    "PatientRecord",
    "Reject",
    "IngestConfig",
    "IngestResult",
    "QaFields",
    "ReconcileRow",
    "ReconcileReport",
    "add_months",
    "month_index",
    "first_covered_month",
    "months_in_window",
    "merge_date_spans",
    "ClaimSpec",
    "build_record",
    "ingest_book",
    "export_book",
    "write_rejects",
    "filter_claims_by_date",
    "member_months",
    "allowed_in_window",
    "compute_qa_fields",
    "reconcile",
]


# ---------------------------------------------------------------------------
# calendar helpers

DAYS_PER_MONTH = 30.4375  # mean Gregorian month, used for fractional spans


def add_months(d: date, n: int) -> date:
    """Shift a date by whole months, clamping the day to the month length."""
    total = d.year * 12 + (d.month - 1) + n
    year, month = divmod(total, 12)
    month += 1
    day = min(d.day, _days_in_month(year, month))
    return date(year, month, day)


def _days_in_month(year: int, month: int) -> int:
    if month == 12:
        return 31
    return (date(year, month + 1, 1) - timedelta(days=1)).day


def month_index(d: date) -> int:
    """Serial month number; January 0001 is index 12."""
    return d.year * 12 + (d.month - 1)


def first_covered_month(d: date) -> int:
    """Index of the first month whose 1st falls on or after ``d``."""
    return month_index(d) if d.day == 1 else month_index(d) + 1


def months_in_window(start: date, end: date, window: tuple[date, date]) -> int:
    """Member months contributed by a span inside a window.

    A member contributes one member month for each calendar month where
    they are covered on the 1st of that month, and the 1st lies inside
    the window (both window bounds inclusive).
    """
    lo = max(first_covered_month(start), first_covered_month(window[0]))
    hi = min(month_index(end), month_index(window[1]))
    return max(0, hi - lo + 1)


def merge_date_spans(spans: Iterable[tuple[date, date]]) -> list[tuple[date, date]]:
    """Union of date intervals: sorted, overlapping or adjacent spans merged."""
    merged: list[tuple[date, date]] = []
    for start, end in sorted(spans):
        if merged and start <= merged[-1][1] + timedelta(days=1):
            prev_start, prev_end = merged[-1]
            merged[-1] = (prev_start, max(prev_end, end))
        else:
            merged.append((start, end))
    return merged


# ---------------------------------------------------------------------------
# domain model


class CareSetting(str, Enum):
    INPATIENT = "inpatient"
    OUTPATIENT = "outpatient"
    ANCILLARY = "ancillary"
    EMERGENCY = "emergency"
    PRIMARY = "primary"
    SPECIALTY = "specialty"


class CodeSystem(str, Enum):
    ICD9 = "ICD9"
    ICD10 = "ICD10"
    CPT = "CPT"
    NDC = "NDC"
    LOINC = "LOINC"
    REV = "REV"


class Sex(str, Enum):
    F = "F"
    M = "M"


class LabInterpretation(str, Enum):
    HIGH = "high"
    LOW = "low"
    ABNORMAL = "abnormal"
    NORMAL = "normal"


@dataclass(frozen=True)
class CoverageSpan:
    group_id: str
    start_date: date
    end_date: date  # inclusive
    plan_type: str

    def covers(self, d: date) -> bool:
        return self.start_date <= d <= self.end_date


@dataclass(frozen=True)
class TermEvent:
    """A coded clinical event; lab fields appear only on LOINC events."""

    term_id: str
    date: date
    system: CodeSystem
    code: str
    lab_value: float | None = None
    lab_interpretation: LabInterpretation | None = None


@dataclass(frozen=True)
class Claim:
    claim_id: str
    encounter_date: date
    paid_date: date
    allowed_amount: float  # may be negative (reversals)
    paid_amount: float
    care_setting: CareSetting
    is_pharmacy: bool
    is_capitation: bool
    revenue_codes: tuple[str, ...] = ()
    term_refs: tuple[str, ...] = ()


@dataclass(frozen=True)
class PatientRecord:
    member_id: str
    birthday: date
    sex: Sex
    coverages: tuple[CoverageSpan, ...]
    claims: tuple[Claim, ...]
    terms: tuple[TermEvent, ...]

    def group_ids(self) -> list[str]:
        return sorted({c.group_id for c in self.coverages})

    def spans_for_group(self, group_id: str) -> list[CoverageSpan]:
        return [c for c in self.coverages if c.group_id == group_id]

    def covered_on(self, d: date, group_id: str | None = None) -> bool:
        for span in self.coverages:
            if group_id is not None and span.group_id != group_id:
                continue
            if span.covers(d):
                return True
        return False

    def age_on(self, d: date) -> int:
        """Completed years of age on a date."""
        years = d.year - self.birthday.year
        if (d.month, d.day) < (self.birthday.month, self.birthday.day):
            years -= 1
        return years


Book = list[PatientRecord]


# ---------------------------------------------------------------------------
# ingest

CLAIMS_COLUMNS = [
    "member_id", "claim_id", "encounter_date", "paid_date",
    "allowed_amount", "paid_amount", "care_setting",
    "is_pharmacy", "is_capitation", "revenue_codes", "codes",
    "lab_value", "lab_interpretation",
]
ELIGIBILITY_COLUMNS = [
    "member_id", "group_id", "birthday", "sex",
    "start_date", "end_date", "plan_type",
]
LABS_COLUMNS = [
    "member_id", "date", "system", "code", "lab_value", "lab_interpretation",
]


@dataclass(frozen=True)
class IngestConfig:
    delimiter: str = ","


@dataclass(frozen=True)
class Reject:
    source: str  # "claims" | "eligibility" | "labs"
    line_no: int  # physical line number in the source file (header is 1)
    reason: str


@dataclass
class IngestResult:
    records: Book
    rejects: list[Reject]

    def by_member(self) -> dict[str, PatientRecord]:
        return {r.member_id: r for r in self.records}

    def rejects_for(self, source: str) -> list[Reject]:
        return [r for r in self.rejects if r.source == source]


class _MemberBuilder:
    __slots__ = ("member_id", "birthday", "sex", "coverages", "claims", "terms")

    def __init__(self, member_id: str, birthday: date, sex: Sex):
        self.member_id = member_id
        self.birthday = birthday
        self.sex = sex
        self.coverages: list[CoverageSpan] = []
        # claims stored as (claim fields, [term tuples]) until finalization
        self.claims: list[dict] = []
        self.terms: list[tuple] = []  # standalone events


def _parse_date(text: str) -> date:
    return date.fromisoformat(text.strip())


def _parse_money(text: str) -> float:
    return float(text.strip())


_TRUE = {"1", "true", "t", "yes"}
_FALSE = {"0", "false", "f", "no"}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_codes(text: str) -> list[tuple[CodeSystem, str]]:
    out = []
    for token in text.split("|"):
        token = token.strip()
        if not token:
            continue
        system_text, sep, code = token.partition(":")
        if not sep or not code:
            raise ValueError(f"bad code token {token!r}")
        out.append((CodeSystem(system_text), code))
    return out


def ingest_book(
    claims_file: str,
    eligibility_file: str,
    labs_file: str | None = None,
    config: IngestConfig | None = None,
) -> IngestResult:
    """Read the book of business from CSV inputs.

    Eligibility is read first so that claim and lab rows can be checked
    against member demographics. Rows that cannot land on a record are
    collected as rejects with a one-line reason; nothing raises on bad
    data. Claim rows sharing a claim_id are deduplicated when identical
    and rejected in full when they conflict.
    """
    cfg = config or IngestConfig()
    members: dict[str, _MemberBuilder] = {}
    rejects: list[Reject] = []

    with open(eligibility_file, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=cfg.delimiter)
        for row in reader:
            line = reader.line_num
            try:
                member_id = row["member_id"].strip()
                birthday = _parse_date(row["birthday"])
                sex = Sex(row["sex"].strip())
                start = _parse_date(row["start_date"])
                end = _parse_date(row["end_date"])
                group_id = row["group_id"].strip()
                plan_type = row["plan_type"].strip()
                if not member_id or not group_id:
                    raise ValueError("empty id")
            except (KeyError, ValueError, AttributeError) as exc:
                rejects.append(Reject("eligibility", line, f"malformed row: {exc}"))
                continue
            if end < start:
                rejects.append(Reject("eligibility", line, "coverage dates out of order"))
                continue
            builder = members.get(member_id)
            if builder is None:
                members[member_id] = builder = _MemberBuilder(member_id, birthday, sex)
            elif builder.birthday != birthday or builder.sex != sex:
                rejects.append(Reject("eligibility", line, "conflicting demographics"))
                continue
            builder.coverages.append(CoverageSpan(group_id, start, end, plan_type))

    # claim bookkeeping for duplicate handling: claim_id -> (member_id, index) or None (tombstone)
    seen_claims: dict[str, tuple[str, int] | None] = {}
    claim_payload: dict[str, tuple] = {}

    with open(claims_file, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=cfg.delimiter)
        for row in reader:
            line = reader.line_num
            try:
                member_id = row["member_id"].strip()
                claim_id = row["claim_id"].strip()
                encounter = _parse_date(row["encounter_date"])
                paid = _parse_date(row["paid_date"])
                allowed = _parse_money(row["allowed_amount"])
                paid_amt = _parse_money(row["paid_amount"])
                setting = CareSetting(row["care_setting"].strip())
                is_pharmacy = _parse_bool(row["is_pharmacy"])
                is_capitation = _parse_bool(row["is_capitation"])
                revenue = tuple(t.strip() for t in (row.get("revenue_codes") or "").split("|") if t.strip())
                codes = _parse_codes(row.get("codes") or "")
                lab_value_text = (row.get("lab_value") or "").strip()
                lab_interp_text = (row.get("lab_interpretation") or "").strip()
                lab_value = float(lab_value_text) if lab_value_text else None
                lab_interp = LabInterpretation(lab_interp_text) if lab_interp_text else None
                if not member_id or not claim_id:
                    raise ValueError("empty id")
            except (KeyError, ValueError, AttributeError) as exc:
                rejects.append(Reject("claims", line, f"malformed row: {exc}"))
                continue

            builder = members.get(member_id)
            if builder is None:
                rejects.append(Reject("claims", line, "unknown member"))
                continue
            if paid < encounter:
                rejects.append(Reject("claims", line, "paid before encounter"))
                continue
            if allowed >= 0 and paid_amt >= 0 and allowed < paid_amt:
                rejects.append(Reject("claims", line, "allowed less than paid"))
                continue
            if encounter < builder.birthday:
                rejects.append(Reject("claims", line, "encounter before birth"))
                continue
            if lab_value is not None or lab_interp is not None:
                loinc = [c for c in codes if c[0] is CodeSystem.LOINC]
                if len(loinc) != 1:
                    rejects.append(Reject("claims", line, "lab value without unique LOINC code"))
                    continue

            payload = (
                member_id, encounter, paid, allowed, paid_amt, setting,
                is_pharmacy, is_capitation, revenue, tuple(codes),
                lab_value, lab_interp,
            )
            prior = seen_claims.get(claim_id, "missing")
            if prior != "missing":
                if prior is None:
                    rejects.append(Reject("claims", line, "conflicting duplicate claim_id"))
                    continue
                if claim_payload[claim_id] == payload:
                    continue  # identical duplicate, drop silently
                # conflicting duplicate: evict the accepted claim and reject both
                prior_member, prior_index = prior
                members[prior_member].claims[prior_index] = None
                seen_claims[claim_id] = None
                rejects.append(Reject("claims", line, "conflicting duplicate claim_id"))
                continue

            builder.claims.append({
                "claim_id": claim_id,
                "encounter_date": encounter,
                "paid_date": paid,
                "allowed_amount": allowed,
                "paid_amount": paid_amt,
                "care_setting": setting,
                "is_pharmacy": is_pharmacy,
                "is_capitation": is_capitation,
                "revenue_codes": revenue,
                "codes": codes,
                "lab_value": lab_value,
                "lab_interpretation": lab_interp,
            })
            seen_claims[claim_id] = (member_id, len(builder.claims) - 1)
            claim_payload[claim_id] = payload

    if labs_file is not None:
        with open(labs_file, newline="") as fh:
            reader = csv.DictReader(fh, delimiter=cfg.delimiter)
            for row in reader:
                line = reader.line_num
                try:
                    member_id = row["member_id"].strip()
                    when = _parse_date(row["date"])
                    system = CodeSystem(row["system"].strip())
                    code = row["code"].strip()
                    lab_value_text = (row.get("lab_value") or "").strip()
                    lab_interp_text = (row.get("lab_interpretation") or "").strip()
                    lab_value = float(lab_value_text) if lab_value_text else None
                    lab_interp = LabInterpretation(lab_interp_text) if lab_interp_text else None
                    if not member_id or not code:
                        raise ValueError("empty id")
                except (KeyError, ValueError, AttributeError) as exc:
                    rejects.append(Reject("labs", line, f"malformed row: {exc}"))
                    continue
                builder = members.get(member_id)
                if builder is None:
                    rejects.append(Reject("labs", line, "unknown member"))
                    continue
                if when < builder.birthday:
                    rejects.append(Reject("labs", line, "event before birth"))
                    continue
                if (lab_value is not None or lab_interp is not None) and system is not CodeSystem.LOINC:
                    rejects.append(Reject("labs", line, "lab value on non-LOINC system"))
                    continue
                builder.terms.append((when, system, code, lab_value, lab_interp))

    records = [_finalize(b) for _, b in sorted(members.items())]
    return IngestResult(records=records, rejects=rejects)


def _finalize(builder: _MemberBuilder) -> PatientRecord:
    """Normalize one member: merge coverage, order everything canonically.

    Canonical form makes ingest(export(book)) reproduce the book exactly:
    coverage spans are merged per group when overlapping or adjacent,
    claims sort by (encounter, paid, claim_id), and term events get
    record-local ids assigned in canonical term order.
    """
    by_group: dict[str, list[CoverageSpan]] = {}
    for span in builder.coverages:
        by_group.setdefault(span.group_id, []).append(span)
    coverages: list[CoverageSpan] = []
    for group_id in sorted(by_group):
        spans = sorted(by_group[group_id], key=lambda s: (s.start_date, s.end_date))
        merged: list[CoverageSpan] = []
        for span in spans:
            if merged and span.start_date <= merged[-1].end_date + timedelta(days=1):
                prev = merged[-1]
                merged[-1] = CoverageSpan(
                    group_id, prev.start_date,
                    max(prev.end_date, span.end_date), prev.plan_type,
                )
            else:
                merged.append(span)
        coverages.extend(merged)
    coverages.sort(key=lambda s: (s.group_id, s.start_date))

    claim_rows = [c for c in builder.claims if c is not None]
    claim_rows.sort(key=lambda c: (c["encounter_date"], c["paid_date"], c["claim_id"]))

    # term events: claim-attached first (in claim order), then standalone
    term_specs: list[tuple] = []  # (date, system, code, value, interp, claim_slot)
    for slot, c in enumerate(claim_rows):
        codes = sorted(c["codes"], key=lambda sc: (sc[0].value, sc[1]))
        for system, code in codes:
            value = interp = None
            if system is CodeSystem.LOINC and (c["lab_value"] is not None or c["lab_interpretation"] is not None):
                value, interp = c["lab_value"], c["lab_interpretation"]
            term_specs.append((c["encounter_date"], system, code, value, interp, slot))
    for when, system, code, value, interp in sorted(
        builder.terms, key=lambda t: (t[0], t[1].value, t[2], t[3] is None, t[3] or 0.0)
    ):
        term_specs.append((when, system, code, value, interp, None))

    term_specs.sort(key=lambda t: (
        t[0], t[1].value, t[2],
        t[5] is None, "" if t[5] is None else claim_rows[t[5]]["claim_id"],
    ))
    terms: list[TermEvent] = []
    refs_by_slot: dict[int, list[str]] = {}
    for i, (when, system, code, value, interp, slot) in enumerate(term_specs):
        term_id = f"t{i}"
        terms.append(TermEvent(term_id, when, system, code, value, interp))
        if slot is not None:
            refs_by_slot.setdefault(slot, []).append(term_id)

    claims = tuple(
        Claim(
            claim_id=c["claim_id"],
            encounter_date=c["encounter_date"],
            paid_date=c["paid_date"],
            allowed_amount=c["allowed_amount"],
            paid_amount=c["paid_amount"],
            care_setting=c["care_setting"],
            is_pharmacy=c["is_pharmacy"],
            is_capitation=c["is_capitation"],
            revenue_codes=c["revenue_codes"],
            term_refs=tuple(refs_by_slot.get(slot, ())),
        )
        for slot, c in enumerate(claim_rows)
    )
    return PatientRecord(
        member_id=builder.member_id,
        birthday=builder.birthday,
        sex=builder.sex,
        coverages=tuple(coverages),
        claims=claims,
        terms=tuple(terms),
    )


@dataclass(frozen=True)
class ClaimSpec:
    """Constructor input for one claim with its attached coded events."""

    claim_id: str
    encounter_date: date
    paid_date: date
    allowed_amount: float
    paid_amount: float
    care_setting: CareSetting
    is_pharmacy: bool = False
    is_capitation: bool = False
    revenue_codes: tuple[str, ...] = ()
    codes: tuple[tuple[CodeSystem, str], ...] = ()
    lab_value: float | None = None
    lab_interpretation: LabInterpretation | None = None


def build_record(
    member_id: str,
    birthday: date,
    sex: Sex,
    coverages: Iterable[CoverageSpan],
    claims: Iterable[ClaimSpec] = (),
    lab_events: Iterable[tuple[date, CodeSystem, str, float | None, LabInterpretation | None]] = (),
) -> PatientRecord:
    """Assemble a record in canonical form without going through CSV.

    Runs the same normalization as ingestion, so a book built this way
    exports and re-ingests byte-identically with zero rejects (claim
    inputs must already satisfy the ingest validity rules).
    """
    builder = _MemberBuilder(member_id, birthday, sex)
    builder.coverages.extend(coverages)
    for spec in claims:
        builder.claims.append({
            "claim_id": spec.claim_id,
            "encounter_date": spec.encounter_date,
            "paid_date": spec.paid_date,
            "allowed_amount": spec.allowed_amount,
            "paid_amount": spec.paid_amount,
            "care_setting": spec.care_setting,
            "is_pharmacy": spec.is_pharmacy,
            "is_capitation": spec.is_capitation,
            "revenue_codes": tuple(spec.revenue_codes),
            "codes": list(spec.codes),
            "lab_value": spec.lab_value,
            "lab_interpretation": spec.lab_interpretation,
        })
    builder.terms.extend(lab_events)
    return _finalize(builder)


# ---------------------------------------------------------------------------
# export

def _money(x: float) -> str:
    return f"{x:.2f}"


def export_book(
    book: Book,
    claims_file: str,
    eligibility_file: str,
    labs_file: str,
    config: IngestConfig | None = None,
) -> None:
    """Write a book back to the three CSV inputs in canonical order."""
    cfg = config or IngestConfig()
    with open(eligibility_file, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=cfg.delimiter)
        writer.writerow(ELIGIBILITY_COLUMNS)
        for record in book:
            for span in record.coverages:
                writer.writerow([
                    record.member_id, span.group_id,
                    record.birthday.isoformat(), record.sex.value,
                    span.start_date.isoformat(), span.end_date.isoformat(),
                    span.plan_type,
                ])

    with open(claims_file, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=cfg.delimiter)
        writer.writerow(CLAIMS_COLUMNS)
        for record in book:
            terms_by_id = {t.term_id: t for t in record.terms}
            for claim in record.claims:
                events = [terms_by_id[tid] for tid in claim.term_refs]
                codes = "|".join(f"{t.system.value}:{t.code}" for t in events)
                lab_value = ""
                lab_interp = ""
                for t in events:
                    if t.lab_value is not None:
                        lab_value = repr(t.lab_value)
                    if t.lab_interpretation is not None:
                        lab_interp = t.lab_interpretation.value
                writer.writerow([
                    record.member_id, claim.claim_id,
                    claim.encounter_date.isoformat(), claim.paid_date.isoformat(),
                    _money(claim.allowed_amount), _money(claim.paid_amount),
                    claim.care_setting.value,
                    "1" if claim.is_pharmacy else "0",
                    "1" if claim.is_capitation else "0",
                    "|".join(claim.revenue_codes), codes,
                    lab_value, lab_interp,
                ])

    with open(labs_file, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=cfg.delimiter)
        writer.writerow(LABS_COLUMNS)
        for record in book:
            attached = {tid for c in record.claims for tid in c.term_refs}
            for t in record.terms:
                if t.term_id in attached:
                    continue
                writer.writerow([
                    record.member_id, t.date.isoformat(), t.system.value, t.code,
                    "" if t.lab_value is None else repr(t.lab_value),
                    "" if t.lab_interpretation is None else t.lab_interpretation.value,
                ])


def write_rejects(rejects: Sequence[Reject], source: str, path: str) -> None:
    """Write the rejects report for one input file as (line_no, reason)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["line_no", "reason"])
        for r in rejects:
            if r.source == source:
                writer.writerow([r.line_no, r.reason])


# ---------------------------------------------------------------------------
# censoring and window sums


def filter_claims_by_date(
    record: PatientRecord, cutoff: date, date_field: str = "encounter"
) -> PatientRecord:
    """Censored view: keep exactly the claims whose selected date < cutoff.

    ``date_field`` is "encounter" or "paid". The original record is left
    unchanged; coverage and term events are shared with the view.
    """
    if date_field == "encounter":
        kept = tuple(c for c in record.claims if c.encounter_date < cutoff)
    elif date_field == "paid":
        kept = tuple(c for c in record.claims if c.paid_date < cutoff)
    else:
        raise ValueError(f"unknown date_field: {date_field!r}")
    return replace(record, claims=kept)


def member_months(
    record: PatientRecord,
    window: tuple[date, date],
    group_id: str | None = None,
) -> int:
    """Member months inside a window, optionally restricted to one group.

    Counts calendar months whose 1st lies in the window with the member
    covered on that 1st. Spans are unioned first so stacked coverage in
    different groups never double counts when group_id is None.
    """
    if group_id is None:
        spans = merge_date_spans((s.start_date, s.end_date) for s in record.coverages)
    else:
        spans = [
            (s.start_date, s.end_date)
            for s in record.coverages
            if s.group_id == group_id
        ]
    return sum(months_in_window(start, end, window) for start, end in spans)


def allowed_in_window(
    record: PatientRecord,
    window: tuple[date, date],
    date_field: str = "encounter",
) -> float:
    """Algebraic sum of allowed amounts for claims dated inside the window."""
    start, end = window
    if date_field == "encounter":
        return sum(
            c.allowed_amount for c in record.claims if start <= c.encounter_date <= end
        )
    if date_field == "paid":
        return sum(
            c.allowed_amount for c in record.claims if start <= c.paid_date <= end
        )
    raise ValueError(f"unknown date_field: {date_field!r}")


# ---------------------------------------------------------------------------
# QA aggregates


@dataclass
class QaFields:
    """Per-group reconciliation numbers shipped alongside predictions."""

    group_id: str
    n_members_end_experience: int
    member_months_experience: int
    true_allowed_experience: float
    predicted_allowed_projection: float = 0.0
    empty_roster: bool = False


def compute_qa_fields(
    book: Book,
    slices: Sequence,
    predictions: Mapping[str, float] | None = None,
    date_field: str = "encounter",
) -> list[QaFields]:
    """Aggregate the non-prediction QA fields per group slice.

    Claims are attributed to a group month by month: a claim counts for
    the group when its member was covered by that group on the 1st of
    the encounter (or paid) month. The result is independent of claim
    and record ordering.
    """
    by_group = {s.group_id: s for s in slices}
    heads = {gid: 0 for gid in by_group}
    months = {gid: 0 for gid in by_group}
    # amounts are collected and summed once with fsum so claim order
    # cannot perturb the float result
    allowed_parts: dict[str, list[float]] = {gid: [] for gid in by_group}

    for record in book:
        spans_by_group: dict[str, list[CoverageSpan]] = {}
        for span in record.coverages:
            if span.group_id in by_group:
                spans_by_group.setdefault(span.group_id, []).append(span)
        if not spans_by_group:
            continue
        for gid, spans in spans_by_group.items():
            s = by_group[gid]
            window = (s.experience_start, s.slice_date)
            if any(span.covers(s.slice_date) for span in spans):
                heads[gid] += 1
            months[gid] += sum(
                months_in_window(span.start_date, span.end_date, window)
                for span in spans
            )
        for claim in record.claims:
            when = claim.encounter_date if date_field == "encounter" else claim.paid_date
            claim_month = month_index(when)
            for gid, spans in spans_by_group.items():
                s = by_group[gid]
                if not (s.experience_start <= when <= s.slice_date):
                    continue
                for span in spans:
                    if first_covered_month(span.start_date) <= claim_month <= month_index(span.end_date):
                        allowed_parts[gid].append(claim.allowed_amount)
                        break

    out = []
    for gid in sorted(by_group):
        fields = QaFields(
            group_id=gid,
            n_members_end_experience=heads[gid],
            member_months_experience=months[gid],
            true_allowed_experience=math.fsum(allowed_parts[gid]),
            empty_roster=heads[gid] == 0,
        )
        if predictions is not None and gid in predictions:
            fields.predicted_allowed_projection = predictions[gid]
        out.append(fields)
    return out


# ---------------------------------------------------------------------------
# reconciliation

QA_DATA_FIELDS = (
    "n_members_end_experience",
    "member_months_experience",
    "true_allowed_experience",
)


@dataclass(frozen=True)
class ReconcileRow:
    group_id: str
    field: str
    value_a: float
    value_b: float
    rel_diff: float
    ok: bool


@dataclass
class ReconcileReport:
    rows: list[ReconcileRow]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(r.ok for r in self.rows)

    @property
    def max_rel_diff(self) -> float:
        return max((r.rel_diff for r in self.rows), default=0.0)

    def failures(self) -> list[ReconcileRow]:
        return [r for r in self.rows if not r.ok]


def relative_difference(a: float, b: float) -> float:
    """|a - b| / max(|a|, |b|), defined as 0 when both values are 0."""
    denom = max(abs(a), abs(b))
    if denom == 0.0:
        return 0.0
    return abs(a - b) / denom


def reconcile(
    qa_a: Sequence[QaFields],
    qa_b: Sequence[QaFields],
    tolerance: float = 0.05,
    fields: Sequence[str] = QA_DATA_FIELDS,
) -> ReconcileReport:
    """Field-by-field relative comparison of two QA runs.

    A group present on one side only is a failure row. The tolerance
    boundary is inclusive: rel_diff == tolerance passes.
    """
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    a_map = {q.group_id: q for q in qa_a}
    b_map = {q.group_id: q for q in qa_b}
    rows: list[ReconcileRow] = []
    for gid in sorted(set(a_map) | set(b_map)):
        if gid not in a_map or gid not in b_map:
            rows.append(ReconcileRow(gid, "<missing group>", float("nan"), float("nan"), float("inf"), False))
            continue
        for name in fields:
            va = float(getattr(a_map[gid], name))
            vb = float(getattr(b_map[gid], name))
            diff = relative_difference(va, vb)
            rows.append(ReconcileRow(gid, name, va, vb, diff, diff <= tolerance))
    return ReconcileReport(rows=rows, tolerance=tolerance)
