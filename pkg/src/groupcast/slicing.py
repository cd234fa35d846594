"""Renewal-anchored time slicing and group splits.

A slice freezes what the desk could see when quoting a renewal: the
blackout covers the months immediately before the renewal date where
claims have not finished paying out, the slice date is the last day
before the blackout, and the experience period is the year ending on
the slice date. Fixed mode uses one renewal date for the whole book;
dynamic mode reads a per-group renewal table.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from datetime import date, timedelta
from fractions import Fraction
from typing import Mapping, Sequence

from .records import Book, PatientRecord, add_months, member_months, month_index

__all__ = [
    "SliceSpec",
    "GroupSlice",
    "SliceError",
    "SplitAssignment",
    "MemberTarget",
    "TargetTable",
    "resolve_slices",
    "largest_remainder",
    "split_groups",
    "training_targets",
    "SPLIT_NAMES",
]

SPLIT_NAMES = ("train", "test", "evaluate")


class SliceError(ValueError):
    """Raised when a slice cannot be resolved from the inputs."""


@dataclass(frozen=True)
class SliceSpec:
    mode: str = "fixed"  # "fixed" | "dynamic"
    renewal_date: date | None = None  # required in fixed mode
    blackout_months: int = 4
    experience_months: int = 12
    projection_months: int = 12

    def __post_init__(self):
        if self.mode not in ("fixed", "dynamic"):
            raise SliceError(f"unknown slice mode: {self.mode!r}")
        if self.blackout_months < 0 or self.experience_months <= 0 or self.projection_months <= 0:
            raise SliceError("window lengths must be positive (blackout may be 0)")


@dataclass(frozen=True)
class GroupSlice:
    group_id: str
    renewal_date: date
    slice_date: date        # experience period end, last day before blackout
    experience_start: date
    projection_end: date
    roster: tuple[str, ...]  # member_ids covered by the group on slice_date

    @property
    def projection_start(self) -> date:
        return self.renewal_date

    @property
    def experience_window(self) -> tuple[date, date]:
        return (self.experience_start, self.slice_date)

    @property
    def projection_window(self) -> tuple[date, date]:
        return (self.renewal_date, self.projection_end)


def _slice_for(group_id: str, renewal: date, spec: SliceSpec, roster: tuple[str, ...]) -> GroupSlice:
    blackout_start = add_months(renewal, -spec.blackout_months)
    slice_date = blackout_start - timedelta(days=1)
    experience_start = add_months(blackout_start, -spec.experience_months)
    projection_end = add_months(renewal, spec.projection_months) - timedelta(days=1)
    if not (experience_start < slice_date <= renewal < projection_end):
        raise SliceError(f"degenerate windows for group {group_id} at renewal {renewal}")
    return GroupSlice(
        group_id=group_id,
        renewal_date=renewal,
        slice_date=slice_date,
        experience_start=experience_start,
        projection_end=projection_end,
        roster=roster,
    )


def resolve_slices(
    book: Book,
    spec: SliceSpec,
    renewal_table: Mapping[str, date] | None = None,
) -> list[GroupSlice]:
    """Build one slice per group found in the book's coverage spans."""
    groups = sorted({span.group_id for record in book for span in record.coverages})
    if spec.mode == "fixed":
        if spec.renewal_date is None:
            raise SliceError("fixed mode needs a renewal_date")
        renewals = {gid: spec.renewal_date for gid in groups}
    else:
        if renewal_table is None:
            raise SliceError("dynamic mode needs a renewal table")
        missing = [gid for gid in groups if gid not in renewal_table]
        if missing:
            raise SliceError(f"renewal table missing groups: {', '.join(missing)}")
        renewals = {gid: renewal_table[gid] for gid in groups}

    slices = []
    for gid in groups:
        blackout_start = add_months(renewals[gid], -spec.blackout_months)
        slice_date = blackout_start - timedelta(days=1)
        roster = tuple(
            record.member_id
            for record in book
            if record.covered_on(slice_date, group_id=gid)
        )
        slices.append(_slice_for(gid, renewals[gid], spec, roster))
    return slices


def largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    """Apportion n items to ratio buckets by the largest-remainder rule.

    Quotas are exact fractions of n; floors are assigned first and the
    leftover items go to the largest fractional remainders. Ties break
    toward the larger ratio, then the earlier bucket, so the result is
    deterministic.
    """
    quotas = [Fraction(r).limit_denominator(10**9) * n for r in ratios]
    if any(q < 0 for q in quotas):
        raise ValueError("ratios must be non-negative")
    if sum(quotas) != n:
        raise ValueError("ratios must sum to 1")
    counts = [int(q) for q in quotas]
    leftover = n - sum(counts)
    order = sorted(
        range(len(ratios)),
        key=lambda i: (quotas[i] - counts[i], ratios[i], -i),
        reverse=True,
    )
    for i in order[:leftover]:
        counts[i] += 1
    return counts


@dataclass
class SplitAssignment:
    assignment: dict[str, str]  # group_id -> split name
    seed: int
    counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.counts:
            self.counts = {name: 0 for name in SPLIT_NAMES}
            for split in self.assignment.values():
                self.counts[split] += 1

    def of(self, group_id: str) -> str:
        return self.assignment[group_id]

    def groups(self, split: str) -> list[str]:
        return sorted(g for g, s in self.assignment.items() if s == split)


def split_groups(
    group_ids: Sequence[str],
    ratios: Sequence[float] = (0.7, 0.2, 0.1),
    seed: int = 0,
) -> SplitAssignment:
    """Randomly assign groups to train/test/evaluate at the group level.

    Splitting happens on groups, never members, so every member of a
    group lands in the same split. Counts follow the largest-remainder
    apportionment of the ratios and the shuffle is seeded.
    """
    if len(ratios) != len(SPLIT_NAMES):
        raise ValueError(f"need {len(SPLIT_NAMES)} ratios")
    ids = sorted(set(group_ids))
    if len(ids) != len(list(group_ids)):
        raise ValueError("duplicate group ids")
    if len(ids) < len(SPLIT_NAMES):
        raise ValueError("need at least one group per split")
    counts = largest_remainder(len(ids), ratios)
    rng = random.Random(seed)
    rng.shuffle(ids)
    assignment: dict[str, str] = {}
    cursor = 0
    for name, count in zip(SPLIT_NAMES, counts):
        for gid in ids[cursor:cursor + count]:
            assignment[gid] = name
        cursor += count
    return SplitAssignment(assignment=assignment, seed=seed)


@dataclass(frozen=True)
class MemberTarget:
    member_id: str
    group_id: str
    split: str
    target_pmpm: float  # allowed per enrolled month over the projection, floored at 0
    projection_months: int


@dataclass
class TargetTable:
    rows: list[MemberTarget]
    dropped: dict[str, int]  # reason -> count

    def for_split(self, split: str) -> list[MemberTarget]:
        return [r for r in self.rows if r.split == split]


def training_targets(
    book: Book,
    slices: Sequence[GroupSlice],
    split: SplitAssignment | None = None,
    date_field: str = "encounter",
) -> TargetTable:
    """Member-level regression targets over each group's projection window.

    target = total allowed in the projection window / months enrolled in
    the window, floored at 0. Members not enrolled on the renewal date
    (they left during the blackout) and members with zero projection
    months are dropped and tallied by reason. Enrollment for the filter
    and the month count uses any coverage, not just the sliced group.
    """
    by_member = {r.member_id: r for r in book}
    rows: list[MemberTarget] = []
    dropped = {"not_enrolled_at_renewal": 0, "zero_projection_months": 0}
    seen: set[str] = set()
    for s in sorted(slices, key=lambda s: s.group_id):
        split_name = split.of(s.group_id) if split is not None else "train"
        for member_id in s.roster:
            if member_id in seen:
                continue
            seen.add(member_id)
            record = by_member[member_id]
            if not record.covered_on(s.renewal_date):
                dropped["not_enrolled_at_renewal"] += 1
                continue
            months = member_months(record, s.projection_window)
            if months <= 0:
                dropped["zero_projection_months"] += 1
                continue
            total = _allowed_between(record, s.projection_window, date_field)
            rows.append(MemberTarget(
                member_id=member_id,
                group_id=s.group_id,
                split=split_name,
                target_pmpm=max(0.0, total / months),
                projection_months=months,
            ))
    return TargetTable(rows=rows, dropped=dropped)


def _allowed_between(record: PatientRecord, window: tuple[date, date], date_field: str) -> float:
    start, end = window
    if date_field == "paid":
        return sum(c.allowed_amount for c in record.claims if start <= c.paid_date <= end)
    return sum(c.allowed_amount for c in record.claims if start <= c.encounter_date <= end)
