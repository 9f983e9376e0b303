"""Partner-facing outputs: a per-entity summary table and per-entity detail blocks.

Both are built from the final component assignment joined back to the ad
records, so the summary's ``component_id`` is the key into the detail output.
"""
from __future__ import annotations

import datetime as dt
import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Mapping

from .gazetteer import FIPS_RE, STATE_CODES, CanonicalLocation, normalize_key
from .gcfilter import ComponentAssignment
from .ingest import AdRecord, Dataset, filter_window

UNRESOLVED = "unresolved"
UNDATED = "undated"


class ReportError(ValueError):
    pass


@dataclass
class SummaryRow:
    component_id: int
    ad_count: int
    region_ads: int
    region_target_proportion: float
    recent_contacts: list[tuple[int, str]]  # (phone, last seen), most recent first
    sites: list[int]


@dataclass
class DetailBlock:
    component_id: int
    ad_count: int
    recent_posts: list[str]
    recent_urls: list[int]
    # month -> state code (or "unresolved") -> ads
    matrix: dict[str, dict[str, int]] = field(default_factory=dict)

    def total(self) -> int:
        return sum(sum(row.values()) for row in self.matrix.values())

    def states(self) -> list[str]:
        return sorted({s for row in self.matrix.values() for s in row})


def _component_of(assignment: ComponentAssignment | Mapping[int, int]) -> dict[int, int]:
    return assignment.as_dict() if isinstance(assignment, ComponentAssignment) else dict(assignment)


def _window(dataset: Dataset, window_days: int | None, as_of: dt.date | None) -> Dataset:
    return dataset if window_days is None else filter_window(dataset, window_days, as_of)


def _grouped(dataset: Dataset, comp: Mapping[int, int]) -> dict[int, list[AdRecord]]:
    groups: dict[int, list[AdRecord]] = defaultdict(list)
    for r in dataset.records:
        try:
            groups[comp[r.post_key]].append(r)
        except KeyError:
            raise ReportError(f"post_key {r.post_key} (url {r.url_id}) missing from the assignment") from None
    return groups


def _region_matcher(region: str, mapping: Mapping[str, CanonicalLocation | None],
                    valid_fips: frozenset[str] | None):
    code = region.strip().upper()
    known_fips = valid_fips if valid_fips is not None else frozenset(
        loc.fips for loc in mapping.values() if loc is not None)
    if code in STATE_CODES:
        return lambda loc: loc is not None and loc.state == code
    if FIPS_RE.match(code) and code in known_fips:
        return lambda loc: loc is not None and loc.fips == code
    raise ReportError(f"unknown region {region!r}; valid state codes: {', '.join(sorted(STATE_CODES))}; "
                      f"valid FIPS codes: {', '.join(sorted(known_fips)) or '(none)'}")


def _location(r: AdRecord, mapping: Mapping[str, CanonicalLocation | None]) -> CanonicalLocation | None:
    return mapping.get(normalize_key(r.target_city, r.target_state))


def _date_str(d: dt.date | None) -> str:
    return d.isoformat() if d is not None else ""


def _recency(r: AdRecord) -> tuple:
    # newest first; undated last
    return (r.post_date is None, -(r.post_date.toordinal() if r.post_date else 0), r.url_id)


def summary_report(assignment: ComponentAssignment | Mapping[int, int], dataset: Dataset,
                   mapping: Mapping[str, CanonicalLocation | None], region: str | None = None, *,
                   min_frequency: int = 1, min_proportion: float = 0.0, window_days: int | None = 90,
                   as_of: dt.date | None = None, max_contacts: int = 5,
                   valid_fips: frozenset[str] | None = None) -> list[SummaryRow]:
    """One row per component with at least ``min_frequency`` in-window ads targeting ``region``.

    ``region`` is a two-letter state code or a five-digit county FIPS code;
    ``None`` means every ad counts as in-region. Ads whose location did not
    resolve never match a region. Rows are ordered by ad count, descending,
    then component id.
    """
    if min_frequency < 0 or not 0.0 <= min_proportion <= 1.0:
        raise ReportError("min_frequency must be >= 0 and min_proportion in [0, 1]")
    in_region = (lambda loc: True) if region is None else _region_matcher(region, mapping, valid_fips)
    comp = _component_of(assignment)
    rows = []
    for cid, recs in _grouped(_window(dataset, window_days, as_of), comp).items():
        hits = sum(1 for r in recs if in_region(_location(r, mapping)))
        prop = hits / len(recs)
        if hits < min_frequency or prop < min_proportion or hits == 0:
            continue
        last_seen: dict[int, dt.date | None] = {}
        for r in recs:
            for p in r.phones:
                prev = last_seen.get(p)
                if p not in last_seen or (r.post_date is not None and (prev is None or r.post_date > prev)):
                    last_seen[p] = r.post_date
        contacts = sorted(last_seen.items(),
                          key=lambda kv: (kv[1] is None, -(kv[1].toordinal() if kv[1] else 0), kv[0]))
        rows.append(SummaryRow(
            component_id=int(cid), ad_count=len(recs), region_ads=hits, region_target_proportion=prop,
            recent_contacts=[(int(p), _date_str(d)) for p, d in contacts[:max_contacts]],
            sites=sorted({r.site_id for r in recs}),
        ))
    rows.sort(key=lambda r: (-r.ad_count, r.component_id))
    return rows


def _detail_block(component_id: int, recs: list[AdRecord], mapping, max_posts: int, max_urls: int
                  ) -> DetailBlock:
    recs = sorted(recs, key=_recency)
    matrix: dict[str, Counter] = defaultdict(Counter)
    for r in recs:
        loc = _location(r, mapping)
        month = r.post_date.strftime("%Y-%m") if r.post_date else UNDATED
        matrix[month][loc.state if loc is not None else UNRESOLVED] += 1
    posts = list(dict.fromkeys(r.post_text for r in recs))
    return DetailBlock(
        component_id=int(component_id), ad_count=len(recs), recent_posts=posts[:max_posts],
        recent_urls=[r.url_id for r in recs[:max_urls]],
        matrix={m: dict(sorted(matrix[m].items())) for m in sorted(matrix)},
    )


def detail_report(assignment: ComponentAssignment | Mapping[int, int], dataset: Dataset, component_id: int,
                  mapping: Mapping[str, CanonicalLocation | None], *, window_days: int | None = 90,
                  as_of: dt.date | None = None, max_posts: int = 10, max_urls: int = 20) -> DetailBlock:
    """Recent posts, URLs and the month-by-state ad counts for one component.

    Ads whose location did not resolve are counted under ``"unresolved"`` so
    the matrix total always equals the component's in-window ad count.
    """
    comp = _component_of(assignment)
    if component_id not in set(comp.values()):
        raise ReportError(f"unknown component_id {component_id}")
    recs = _grouped(_window(dataset, window_days, as_of), comp).get(component_id, [])
    return _detail_block(component_id, recs, mapping, max_posts, max_urls)


def detail_reports(assignment, dataset: Dataset, rows: list[SummaryRow], mapping, *,
                   window_days: int | None = 90, as_of: dt.date | None = None, max_posts: int = 10,
                   max_urls: int = 20) -> list[DetailBlock]:
    """Detail blocks for every summary row, in summary order."""
    groups = _grouped(_window(dataset, window_days, as_of), _component_of(assignment))
    return [_detail_block(r.component_id, groups.get(r.component_id, []), mapping, max_posts, max_urls)
            for r in rows]


SUMMARY_COLUMNS = ("component_id", "ad_count", "region_ads", "region_target_proportion", "recent_contacts",
                   "sites")


def write_summary(rows: list[SummaryRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(SUMMARY_COLUMNS) + "\n")
        for r in rows:
            contacts = ";".join(f"{p}@{d}" if d else str(p) for p, d in r.recent_contacts)
            fh.write(f"{r.component_id}\t{r.ad_count}\t{r.region_ads}\t{r.region_target_proportion:.6f}\t"
                     f"{contacts}\t{','.join(map(str, r.sites))}\n")


def write_json(items: list, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump([asdict(x) for x in items], fh, indent=2, ensure_ascii=False)
        fh.write("\n")
