"""Automated vs official registry comparison and discrepancy report."""
from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .buildings import Address
from .errors import EmptyMatch, NonPositiveCapacity, ParseError
from .raster import medape
from .registry import DEFAULT_CONSTANTS, RegistryEntry

OFFICIAL_COLUMNS = ("entry_id", "street", "house_number", "postal_code", "city",
                    "capacity_kwp", "commissioning_date")

DUPLICATE_REL_TOL = 0.005
INFLATION_RATIO = 3.0
RELINK_TOLERANCE = 0.25


@dataclass(frozen=True)
class OfficialEntry:
    entry_id: str
    address: Address
    capacity_kwp: float
    commissioning_date: dt.date | None = None

    @property
    def canonical_key(self) -> str:
        return self.address.canonical_key


def parse_official(data: bytes | str) -> list[OfficialEntry]:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"official registry is not UTF-8: {exc}") from None
    reader = csv.DictReader(io.StringIO(data))
    if reader.fieldnames is None or tuple(reader.fieldnames) != OFFICIAL_COLUMNS:
        raise ParseError(f"official registry: expected header {','.join(OFFICIAL_COLUMNS)}, "
                         f"got {reader.fieldnames}")
    entries = []
    seen = set()
    for lineno, row in enumerate(reader, 2):
        if None in row or any(v is None for v in row.values()):
            raise ParseError(f"official registry line {lineno}: wrong number of fields")
        eid = row["entry_id"].strip()
        if not eid:
            raise ParseError(f"official registry line {lineno}: empty entry_id")
        if eid in seen:
            raise ParseError(f"official registry line {lineno}: duplicate entry_id {eid!r}")
        seen.add(eid)
        try:
            cap = float(row["capacity_kwp"])
        except ValueError:
            raise ParseError(f"official registry line {lineno}: bad capacity {row['capacity_kwp']!r}") from None
        if not cap > 0 or not math.isfinite(cap):
            raise NonPositiveCapacity(f"official registry line {lineno}: capacity must be positive, got {cap}")
        date = None
        if row["commissioning_date"].strip():
            try:
                date = dt.date.fromisoformat(row["commissioning_date"].strip())
            except ValueError:
                raise ParseError(f"official registry line {lineno}: bad date "
                                 f"{row['commissioning_date']!r}") from None
        addr = Address(row["street"], row["house_number"], row["postal_code"], row["city"])
        entries.append(OfficialEntry(eid, addr, cap, date))
    return entries


def write_official(entries: Iterable[OfficialEntry]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(OFFICIAL_COLUMNS)
    for e in entries:
        a = e.address
        w.writerow([e.entry_id, a.street, a.house_number, a.postal_code, a.city, repr(e.capacity_kwp),
                    e.commissioning_date.isoformat() if e.commissioning_date else ""])
    return buf.getvalue().encode("utf-8")


def _same_system(a: OfficialEntry, b: OfficialEntry, rel_tol: float) -> bool:
    if abs(a.capacity_kwp - b.capacity_kwp) > rel_tol * max(a.capacity_kwp, b.capacity_kwp):
        return False
    if a.commissioning_date and b.commissioning_date:
        return a.commissioning_date == b.commissioning_date
    return True


def find_duplicates(entries: Sequence[OfficialEntry],
                    rel_tol: float = DUPLICATE_REL_TOL) -> list[tuple[str, ...]]:
    """Groups of entries describing the same system; the first id in each group is kept."""
    by_key = defaultdict(list)
    for e in entries:
        by_key[e.canonical_key].append(e)
    groups = []
    for key in sorted(by_key):
        reps = []
        for e in sorted(by_key[key], key=lambda e: e.entry_id):
            for group in reps:
                if _same_system(group[0], e, rel_tol):
                    group.append(e)
                    break
            else:
                reps.append([e])
        groups.extend(tuple(x.entry_id for x in g) for g in reps if len(g) > 1)
    return sorted(groups)


def drop_duplicates(entries, groups):
    flagged = {eid for g in groups for eid in g[1:]}
    return [e for e in entries if e.entry_id not in flagged]


@dataclass(frozen=True)
class MatchedPair:
    canonical_key: str
    official_capacity_kwp: float
    estimated_capacity_kwp: float
    estimated_capacity_no_tilt_kwp: float
    entries: tuple[tuple[str, float], ...]


def match_addresses(auto: Sequence[RegistryEntry], official: Sequence[OfficialEntry],
                    m2_per_kwp: float = DEFAULT_CONSTANTS.m2_per_kwp):
    """Exact canonical-key join; official capacities are summed per address.

    Returns ``(matched, auto_only, official_only)``.
    """
    auto_by_key = {e.canonical_key: e for e in auto}
    off_by_key = defaultdict(list)
    for e in official:
        off_by_key[e.canonical_key].append(e)
    matched = []
    for key in sorted(set(auto_by_key) & set(off_by_key)):
        a = auto_by_key[key]
        offs = sorted(off_by_key[key], key=lambda e: e.entry_id)
        matched.append(MatchedPair(
            canonical_key=key,
            official_capacity_kwp=math.fsum(e.capacity_kwp for e in offs),
            estimated_capacity_kwp=a.total_capacity_kwp,
            estimated_capacity_no_tilt_kwp=a.total_area_2d_m2 / m2_per_kwp,
            entries=tuple((e.entry_id, e.capacity_kwp) for e in offs),
        ))
    auto_only = [auto_by_key[k] for k in sorted(set(auto_by_key) - set(off_by_key))]
    official_only = sorted((e for k in set(off_by_key) - set(auto_by_key) for e in off_by_key[k]),
                           key=lambda e: e.entry_id)
    return matched, auto_only, official_only


def multi_entry_addresses(official: Sequence[OfficialEntry]) -> list[tuple[str, tuple[str, ...]]]:
    by_key = defaultdict(list)
    for e in official:
        by_key[e.canonical_key].append(e.entry_id)
    return [(k, tuple(sorted(ids))) for k, ids in sorted(by_key.items()) if len(ids) > 1]


@dataclass(frozen=True)
class InflatedEntry:
    entry_id: str
    registered_kwp: float
    estimated_kwp: float
    ratio: float


def flag_inflated(matched: Sequence[MatchedPair],
                  ratio_threshold: float = INFLATION_RATIO) -> list[InflatedEntry]:
    """Entries at addresses where registered / estimated capacity exceeds the ratio.

    At multi-entry addresses the estimate is shared in proportion to the
    registered capacities, so the shares sum to the address estimate.
    """
    if not ratio_threshold > 1:
        raise ValueError("ratio_threshold must exceed 1")
    out = []
    for m in matched:
        ratio = m.official_capacity_kwp / m.estimated_capacity_kwp
        if ratio <= ratio_threshold:
            continue
        for eid, cap in m.entries:
            out.append(InflatedEntry(eid, cap, m.estimated_capacity_kwp * cap / m.official_capacity_kwp, ratio))
    return sorted(out, key=lambda x: x.entry_id)


def false_address_candidates(official_only: Sequence[OfficialEntry],
                             threshold: float = DEFAULT_CONSTANTS.public_capacity_threshold_kwp) -> list[str]:
    return sorted(e.entry_id for e in official_only if e.capacity_kwp > threshold)


def link_relocated(candidates: Sequence[OfficialEntry], auto_only: Sequence[RegistryEntry],
                   tolerance: float = RELINK_TOLERANCE,
                   threshold: float = DEFAULT_CONSTANTS.public_capacity_threshold_kwp) -> list[tuple[str, str]]:
    """Pair false-address candidates with unregistered large detections of similar capacity.

    Minimum-cost one-to-one assignment on relative capacity difference; pairs
    above ``tolerance`` are rejected. Nothing is relocated, the pairing only
    keeps the real site of a mislocated record out of the missing list.
    """
    large = [a for a in auto_only if a.total_capacity_kwp > threshold]
    if not candidates or not large:
        return []
    off = np.array([c.capacity_kwp for c in candidates])
    est = np.array([a.total_capacity_kwp for a in large])
    cost = np.abs(off[:, None] - est[None, :]) / est[None, :]
    gated = np.where(cost <= tolerance, cost, 1e6)
    rows, cols = linear_sum_assignment(gated)
    pairs = [(candidates[r].entry_id, large[c].canonical_key)
             for r, c in zip(rows, cols) if cost[r, c] <= tolerance]
    return sorted(pairs)


def missing_and_undetected(auto_only: Sequence[RegistryEntry], official_only: Sequence[OfficialEntry],
                           threshold: float = DEFAULT_CONSTANTS.public_capacity_threshold_kwp,
                           false_address_ids: Iterable[str] = (),
                           relocated_keys: Iterable[str] = ()):
    """Large detections absent from the official registry, and official entries not detected.

    ``undetected`` holds ``(entry_id, is_large)`` for official-only entries that
    are not false-address candidates.
    """
    skip_keys = set(relocated_keys)
    missing = sorted(a.canonical_key for a in auto_only
                     if a.total_capacity_kwp > threshold and a.canonical_key not in skip_keys)
    skip_ids = set(false_address_ids)
    undetected = sorted((e.entry_id, e.capacity_kwp > threshold)
                        for e in official_only if e.entry_id not in skip_ids)
    return missing, undetected


def capacity_medape(matched: Sequence[MatchedPair], use_tilt: bool = True) -> float:
    if not matched:
        raise EmptyMatch("no matched addresses to compare")
    est = [m.estimated_capacity_kwp if use_tilt else m.estimated_capacity_no_tilt_kwp for m in matched]
    return medape(est, [m.official_capacity_kwp for m in matched])


@dataclass(frozen=True)
class Totals:
    official_entries_raw: int
    official_entries_corrected: int
    automated_entries: int
    official_kwp_raw: float
    official_kwp_corrected: float
    automated_kwp: float
    difference_pct: float | None


@dataclass(frozen=True)
class ReconciliationReport:
    duplicates: tuple[tuple[str, ...], ...]
    inflated: tuple[InflatedEntry, ...]
    multi_entry_addresses: tuple[tuple[str, tuple[str, ...]], ...]
    false_address_candidates: tuple[str, ...]
    relocated: tuple[tuple[str, str], ...]
    missing_in_official: tuple[str, ...]
    undetected_by_pipeline: tuple[tuple[str, bool], ...]
    matched_keys: tuple[str, ...]
    totals: Totals
    medape_with_tilt: float | None
    medape_without_tilt: float | None

    @property
    def duplicate_ids(self) -> list[str]:
        return sorted(eid for g in self.duplicates for eid in g[1:])


def build_report(auto: Sequence[RegistryEntry], official: Sequence[OfficialEntry], *,
                 ratio_threshold: float = INFLATION_RATIO,
                 threshold_kwp: float = DEFAULT_CONSTANTS.public_capacity_threshold_kwp,
                 relink_tolerance: float = RELINK_TOLERANCE,
                 duplicate_rel_tol: float = DUPLICATE_REL_TOL,
                 m2_per_kwp: float = DEFAULT_CONSTANTS.m2_per_kwp) -> ReconciliationReport:
    groups = find_duplicates(official, duplicate_rel_tol)
    kept = drop_duplicates(official, groups)
    matched, auto_only, official_only = match_addresses(auto, kept, m2_per_kwp)
    inflated = flag_inflated(matched, ratio_threshold)
    candidates = false_address_candidates(official_only, threshold_kwp)
    cand_set = set(candidates)
    relocated = link_relocated([e for e in official_only if e.entry_id in cand_set], auto_only,
                               relink_tolerance, threshold_kwp)
    missing, undetected = missing_and_undetected(auto_only, official_only, threshold_kwp,
                                                 candidates, [k for _, k in relocated])

    inflated_keys = {m.canonical_key for m in matched if m.official_capacity_kwp / m.estimated_capacity_kwp > ratio_threshold}
    clean = [m for m in matched if m.canonical_key not in inflated_keys]
    medape_tilt = capacity_medape(clean, True) if clean else None
    medape_flat = capacity_medape(clean, False) if clean else None

    replaced = {x.entry_id: x.estimated_kwp for x in inflated}
    raw = math.fsum(e.capacity_kwp for e in official)
    corrected = math.fsum(replaced.get(e.entry_id, e.capacity_kwp) for e in kept)
    automated = math.fsum(e.total_capacity_kwp for e in auto)
    totals = Totals(
        official_entries_raw=len(official),
        official_entries_corrected=len(kept),
        automated_entries=len(auto),
        official_kwp_raw=raw,
        official_kwp_corrected=corrected,
        automated_kwp=automated,
        difference_pct=(automated - corrected) / corrected * 100.0 if corrected > 0 else None,
    )
    return ReconciliationReport(
        duplicates=tuple(groups),
        inflated=tuple(inflated),
        multi_entry_addresses=tuple(multi_entry_addresses(kept)),
        false_address_candidates=tuple(candidates),
        relocated=tuple(relocated),
        missing_in_official=tuple(missing),
        undetected_by_pipeline=tuple(undetected),
        matched_keys=tuple(m.canonical_key for m in matched),
        totals=totals,
        medape_with_tilt=medape_tilt,
        medape_without_tilt=medape_flat,
    )


def report_to_json(report: ReconciliationReport) -> bytes:
    doc = asdict(report)
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")


def report_from_json(data: bytes | str) -> ReconciliationReport:
    try:
        d = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"report JSON: {exc}") from None
    try:
        return ReconciliationReport(
            duplicates=tuple(tuple(g) for g in d["duplicates"]),
            inflated=tuple(InflatedEntry(**x) for x in d["inflated"]),
            multi_entry_addresses=tuple((k, tuple(ids)) for k, ids in d["multi_entry_addresses"]),
            false_address_candidates=tuple(d["false_address_candidates"]),
            relocated=tuple((a, b) for a, b in d["relocated"]),
            missing_in_official=tuple(d["missing_in_official"]),
            undetected_by_pipeline=tuple((a, bool(b)) for a, b in d["undetected_by_pipeline"]),
            matched_keys=tuple(d["matched_keys"]),
            totals=Totals(**d["totals"]),
            medape_with_tilt=d["medape_with_tilt"],
            medape_without_tilt=d["medape_without_tilt"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"report JSON missing or malformed field: {exc}") from None


def render_summary(report: ReconciliationReport) -> str:
    t = report.totals
    rows = [
        ("Official registry", t.official_entries_raw, t.official_kwp_raw),
        ("Official registry (corrected)", t.official_entries_corrected, t.official_kwp_corrected),
        ("This work", t.automated_entries, t.automated_kwp),
    ]
    lines = [f"{'Dataset':<32}{'# entries':>10}{'Capacity [kWp]':>17}", "-" * 59]
    lines += [f"{name:<32}{n:>10,}{kwp:>17,.1f}" for name, n, kwp in rows]
    lines.append("-" * 59)
    if t.difference_pct is not None:
        lines.append(f"Automated vs corrected official: {t.difference_pct:+.1f}%")

    def pct(v):
        return "n/a" if v is None else f"{v:.1f}%"

    lines += [
        f"MedAPE without tilt: {pct(report.medape_without_tilt)}",
        f"MedAPE with tilt:    {pct(report.medape_with_tilt)}",
        "",
        f"Duplicated entries:          {len(report.duplicate_ids)}",
        f"Inflated capacities:         {len(report.inflated)}",
        f"Multi-entry addresses:       {len(report.multi_entry_addresses)}",
        f"False-address candidates:    {len(report.false_address_candidates)}",
        f"Missing in official:         {len(report.missing_in_official)}",
        f"Undetected by pipeline:      {len(report.undetected_by_pipeline)}",
    ]
    return "\n".join(lines) + "\n"
