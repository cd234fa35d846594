"""Independent recomputation of the QA fields from raw CSV inputs.

This module cross-checks the package's own aggregation before any
numbers ship: it reads the claims and eligibility files directly with
the csv module, re-derives the reporting windows with local calendar
arithmetic, and re-counts heads, member months, and experience cost
from scratch. Nothing here imports the record structures or window
helpers used by the main path, so a bookkeeping bug on either side
shows up as a reconciliation failure instead of cancelling out.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import date, timedelta

from .records import QaFields

__all__ = ["OracleWindows", "oracle_windows", "qa_fields_from_csv"]


def _shift_months(d: date, n: int) -> date:
    month0 = d.year * 12 + (d.month - 1) + n
    year, month = divmod(month0, 12)
    day = d.day
    while True:
        try:
            return date(year, month + 1, day)
        except ValueError:
            day -= 1


@dataclass(frozen=True)
class OracleWindows:
    experience_start: date
    slice_date: date


def oracle_windows(
    renewal: date, blackout_months: int = 4, experience_months: int = 12
) -> OracleWindows:
    blackout_start = _shift_months(renewal, -blackout_months)
    return OracleWindows(
        experience_start=_shift_months(blackout_start, -experience_months),
        slice_date=blackout_start - timedelta(days=1),
    )


def qa_fields_from_csv(
    claims_path: str,
    eligibility_path: str,
    renewal_by_group: dict[str, date] | date,
    blackout_months: int = 4,
    experience_months: int = 12,
    date_field: str = "encounter",
) -> list[QaFields]:
    """Per-group heads, member months, and experience cost from raw files.

    Groups come from the eligibility file; ``renewal_by_group`` may be
    a single date applied to every group. Malformed rows are skipped
    (the main ingest path owns reject reporting); a claim counts for a
    group when its member was covered by that group on the first of the
    claim month and the claim date falls inside the group's experience
    window.
    """
    if date_field not in ("encounter", "paid"):
        raise ValueError(f"unknown date_field: {date_field!r}")

    spans: dict[str, list[tuple[str, date, date]]] = {}
    group_ids: set[str] = set()
    with open(eligibility_path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                gid = row["group_id"].strip()
                start = date.fromisoformat(row["start_date"].strip())
                end = date.fromisoformat(row["end_date"].strip())
            except (KeyError, ValueError, AttributeError):
                continue
            if end < start:
                continue
            group_ids.add(gid)
            spans.setdefault(row["member_id"].strip(), []).append((gid, start, end))

    if isinstance(renewal_by_group, date):
        renewals = {gid: renewal_by_group for gid in group_ids}
    else:
        renewals = dict(renewal_by_group)
    windows = {
        gid: oracle_windows(renewals[gid], blackout_months, experience_months)
        for gid in group_ids
        if gid in renewals
    }

    def covered(member_id: str, gid: str, d: date) -> bool:
        for g, start, end in spans.get(member_id, ()):
            if g == gid and start <= d <= end:
                return True
        return False

    heads = {gid: 0 for gid in windows}
    months = {gid: 0 for gid in windows}
    # deferred fsum keeps the total independent of row order
    allowed = {gid: [] for gid in windows}

    members_by_group: dict[str, set[str]] = {gid: set() for gid in windows}
    for member_id, member_spans in spans.items():
        for gid, _, _ in member_spans:
            if gid in windows:
                members_by_group[gid].add(member_id)

    for gid, win in windows.items():
        first = date(win.experience_start.year, win.experience_start.month, 1)
        if first < win.experience_start:
            first = _shift_months(first, 1)
        for member_id in members_by_group[gid]:
            if covered(member_id, gid, win.slice_date):
                heads[gid] += 1
            probe = first
            while probe <= win.slice_date:
                if covered(member_id, gid, probe):
                    months[gid] += 1
                probe = _shift_months(probe, 1)

    column = "encounter_date" if date_field == "encounter" else "paid_date"
    with open(claims_path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                member_id = row["member_id"].strip()
                when = date.fromisoformat(row[column].strip())
                amount = float(row["allowed_amount"].strip())
            except (KeyError, ValueError, AttributeError):
                continue
            month_first = date(when.year, when.month, 1)
            credited: set[str] = set()
            for gid, start, end in spans.get(member_id, ()):
                win = windows.get(gid)
                if win is None or gid in credited:
                    continue
                if not win.experience_start <= when <= win.slice_date:
                    continue
                if start <= month_first <= end:
                    allowed[gid].append(amount)
                    credited.add(gid)

    return [
        QaFields(
            group_id=gid,
            n_members_end_experience=heads[gid],
            member_months_experience=months[gid],
            true_allowed_experience=math.fsum(allowed[gid]),
            empty_roster=heads[gid] == 0,
        )
        for gid in sorted(windows)
    ]
