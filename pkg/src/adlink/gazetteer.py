"""City/state standardization against a county gazetteer with a manual overlay."""
from __future__ import annotations

import csv
import re
import unicodedata
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

from .ingest import Dataset

STATE_CODES = frozenset(
    "AL AK AZ AR CA CO CT DE DC FL GA HI ID IL IN IA KS KY LA ME MD MA MI MN MS MO MT NE NV "
    "NH NJ NM NY NC ND OH OK OR PA RI SC SD TN TX UT VT VA WA WV WI WY "
    "AS GU MP PR VI UM".split()
)
FIPS_RE = re.compile(r"^[0-9]{5}$")

BUILTIN = "builtin"

_DROP = str.maketrans("", "", ".'’")


class GazetteerError(ValueError):
    """Malformed or self-contradictory gazetteer/overlay table."""


@dataclass(frozen=True, slots=True)
class CanonicalLocation:
    city: str
    state: str
    county: str
    fips: str

    def __post_init__(self):
        if not FIPS_RE.match(self.fips):
            raise GazetteerError(f"bad FIPS code {self.fips!r}")
        if self.state not in STATE_CODES:
            raise GazetteerError(f"unknown state code {self.state!r}")


@dataclass(frozen=True, slots=True)
class OverlayRule:
    raw_city: str
    raw_state: str
    target: CanonicalLocation


def _norm_part(s: str) -> str:
    s = unicodedata.normalize("NFKC", s or "").casefold().translate(_DROP)
    s = "".join(ch if ch.isalnum() or ch.isspace() else " " for ch in s)
    return " ".join(s.split())


def normalize_key(city: str, state: str) -> str:
    """Case-, whitespace- and punctuation-folded ``city|state`` key.

    Periods and apostrophes are deleted; other punctuation becomes a space.
    """
    return f"{_norm_part(city)}|{_norm_part(state)}"


def _is_empty_key(key: str) -> bool:
    city, _, state = key.partition("|")
    return not city or not state


def _read_rows(path) -> list[dict]:
    if path == BUILTIN or path is None:
        raise TypeError("use load_builtin_* for packaged fixtures")
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _index(pairs: Iterable[tuple[str, CanonicalLocation]], what: str) -> dict[str, CanonicalLocation]:
    table: dict[str, CanonicalLocation] = {}
    for key, loc in pairs:
        prev = table.get(key)
        if prev is not None and prev != loc:
            raise GazetteerError(f"conflicting {what} rows for {key!r}: {prev} vs {loc}")
        table[key] = loc
    return table


class Gazetteer:
    """Exact-match table keyed by :func:`normalize_key`."""

    def __init__(self, rows: Iterable[CanonicalLocation]):
        self.table = _index(((normalize_key(r.city, r.state), r) for r in rows), "gazetteer")

    def __len__(self) -> int:
        return len(self.table)

    def get(self, key: str) -> CanonicalLocation | None:
        return self.table.get(key)

    def locations(self) -> list[CanonicalLocation]:
        return sorted(set(self.table.values()), key=lambda l: (l.state, l.city, l.fips))

    @property
    def fips_codes(self) -> frozenset[str]:
        return frozenset(l.fips for l in self.table.values())

    @classmethod
    def from_rows(cls, rows: Iterable[dict]) -> "Gazetteer":
        try:
            locs = [CanonicalLocation(r["city"].strip(), r["state_code"].strip().upper(),
                                      r["county"].strip(), r["fips"].strip()) for r in rows]
        except KeyError as exc:
            raise GazetteerError(f"gazetteer missing column {exc}") from None
        return cls(locs)

    @classmethod
    def load(cls, path) -> "Gazetteer":
        if str(path) == BUILTIN:
            return load_builtin_gazetteer()
        return cls.from_rows(_read_rows(path))


class Overlay:
    """Manual ``raw city/state -> canonical location`` rules."""

    def __init__(self, rules: Iterable[OverlayRule] = ()):
        self.rules = list(rules)
        self.table = _index(((normalize_key(r.raw_city, r.raw_state), r.target) for r in self.rules),
                            "overlay")

    def __len__(self) -> int:
        return len(self.table)

    def get(self, key: str) -> CanonicalLocation | None:
        return self.table.get(key)

    def with_rule(self, rule: OverlayRule) -> "Overlay":
        return Overlay([*self.rules, rule])

    @classmethod
    def from_rows(cls, rows: Iterable[dict]) -> "Overlay":
        try:
            rules = [OverlayRule(r["raw_city"], r["raw_state"],
                                 CanonicalLocation(r["city"].strip(), r["state_code"].strip().upper(),
                                                   r["county"].strip(), r["fips"].strip()))
                     for r in rows]
        except KeyError as exc:
            raise GazetteerError(f"overlay missing column {exc}") from None
        return cls(rules)

    @classmethod
    def load(cls, path) -> "Overlay":
        if str(path) == BUILTIN:
            return load_builtin_overlay()
        return cls.from_rows(_read_rows(path))


def _builtin_rows(name: str) -> list[dict]:
    text = resources.files("adlink.data").joinpath(name).read_text(encoding="utf-8")
    return list(csv.DictReader(text.splitlines()))


def load_builtin_gazetteer() -> Gazetteer:
    return Gazetteer.from_rows(_builtin_rows("gazetteer_us.csv"))


def load_builtin_overlay() -> Overlay:
    return Overlay.from_rows(_builtin_rows("overlay_us.csv"))


def resolve(city: str, state: str, gazetteer: Gazetteer, overlay: Overlay | None = None
            ) -> CanonicalLocation | None:
    return resolve_key(normalize_key(city, state), gazetteer, overlay)


def resolve_key(key: str, gazetteer: Gazetteer, overlay: Overlay | None = None
                ) -> CanonicalLocation | None:
    if _is_empty_key(key):
        return None
    if overlay is not None:
        hit = overlay.get(key)
        if hit is not None:
            return hit
    return gazetteer.get(key)


def url_counts_by_key(dataset: Dataset) -> dict[str, int]:
    counts: dict[str, int] = {}
    for r in dataset.records:
        k = normalize_key(r.target_city, r.target_state)
        counts[k] = counts.get(k, 0) + 1
    return counts


def unmatched_report(dataset: Dataset, gazetteer: Gazetteer, overlay: Overlay | None = None
                     ) -> tuple[list[dict], float]:
    """Unresolved location keys by affected URLs, largest first.

    Returns ``(rows, unmatched_fraction)``; each row carries ``key``, ``urls``
    and ``fraction`` (of all URLs), so fractions sum to the unmatched fraction.
    """
    counts = url_counts_by_key(dataset)
    total = sum(counts.values())
    rows = [{"key": k, "urls": n, "fraction": n / total}
            for k, n in counts.items() if resolve_key(k, gazetteer, overlay) is None]
    rows.sort(key=lambda r: (-r["urls"], r["key"]))
    unmatched = sum(r["urls"] for r in rows)
    return rows, (unmatched / total if total else 0.0)


def write_unmatched_report(rows: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("key\turls\tpercent\n")
        for r in rows:
            fh.write(f"{r['key']}\t{r['urls']}\t{100 * r['fraction']:.4f}\n")


MAPPING_COLUMNS = ("key", "city", "state_code", "county", "fips")


def location_mapping(dataset: Dataset, gazetteer: Gazetteer, overlay: Overlay | None = None
                     ) -> dict[str, CanonicalLocation | None]:
    return {k: resolve_key(k, gazetteer, overlay) for k in sorted(url_counts_by_key(dataset))}


def write_mapping(mapping: dict[str, CanonicalLocation | None], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(MAPPING_COLUMNS) + "\n")
        for key in sorted(mapping):
            loc = mapping[key]
            vals = (key, "", "", "", "") if loc is None else (key, loc.city, loc.state, loc.county, loc.fips)
            fh.write("\t".join(vals) + "\n")


def read_mapping(path) -> dict[str, CanonicalLocation | None]:
    out: dict[str, CanonicalLocation | None] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != MAPPING_COLUMNS:
            raise GazetteerError(f"unexpected mapping header {header}")
        for line in fh:
            key, city, state, county, fips = line.rstrip("\n").split("\t")
            out[key] = CanonicalLocation(city, state, county, fips) if fips else None
    return out
