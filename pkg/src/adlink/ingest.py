"""Parsing, validation and deduplication of core ad records.

Input is line-delimited JSON using the open multi-site dataset column names
(``url``, ``site``, ``post_masked``, ``post_int``, ``phone_int``, ``phash16``)
plus optional ``post_date``, ``city`` and ``state``. The open dataset stores one
row per (url, image); :func:`dedupe_by_url` folds those rows back into one
record per ad.
"""
from __future__ import annotations

import datetime as dt
import io
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Iterator

log = logging.getLogger(__name__)

PHASH_RE = re.compile(r"^[0-9a-fA-F]{16}$")

_DATE_KEYS = ("post_date", "date")
_CITY_KEYS = ("city", "target_city")
_STATE_KEYS = ("state", "target_state")


class IngestError(Exception):
    """The input stream could not be read at all."""


class RecordError(ValueError):
    """A single line failed validation. ``reason`` is a short tally key."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass(frozen=True, slots=True)
class AdRecord:
    url_id: int
    site_id: int
    post_text: str
    post_key: int
    phashes: tuple[int, ...] = ()
    phones: tuple[int, ...] = ()
    post_date: dt.date | None = None
    target_city: str = ""
    target_state: str = ""

    @property
    def phash(self) -> int | None:
        return self.phashes[0] if self.phashes else None

    @property
    def phone_key(self) -> int | None:
        return self.phones[0] if self.phones else None


@dataclass
class Dataset:
    records: list[AdRecord]
    source_tag: str = ""
    rejected: Counter = field(default_factory=Counter)
    duplicates: int = 0

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_rejected(self) -> int:
        return sum(self.rejected.values())

    def post_texts(self) -> dict[int, str]:
        """post_key -> text (first occurrence)."""
        out: dict[int, str] = {}
        for r in self.records:
            out.setdefault(r.post_key, r.post_text)
        return out


def format_phash(value: int) -> str:
    return f"{value:016x}"


def parse_phash(text: str) -> int:
    if not isinstance(text, str) or not PHASH_RE.match(text):
        raise RecordError("bad_phash", repr(text))
    return int(text, 16)


def _int_field(obj: dict, name: str, *, required: bool, nonneg: bool = False) -> int | None:
    value = obj.get(name)
    if value is None:
        if required:
            raise RecordError(f"missing_{name}")
        return None
    # bool is an int subclass; reject it explicitly
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise RecordError(f"bad_{name}", repr(value))
    if nonneg and value < 0:
        raise RecordError(f"bad_{name}", repr(value))
    return value


def _first(obj: dict, keys: tuple[str, ...]):
    for k in keys:
        if k in obj:
            return obj[k]
    return None


def record_from_obj(obj: dict) -> AdRecord:
    """Validate one decoded row. Unknown fields are ignored."""
    if not isinstance(obj, dict):
        raise RecordError("not_an_object")
    url = _int_field(obj, "url", required=True)
    site = _int_field(obj, "site", required=True)
    post_key = _int_field(obj, "post_int", required=True, nonneg=True)
    text = obj.get("post_masked")
    if not isinstance(text, str):
        raise RecordError("bad_post_masked", repr(text))
    phone = _int_field(obj, "phone_int", required=False, nonneg=True)
    raw_phash = obj.get("phash16")
    phash = None if raw_phash is None else parse_phash(raw_phash)

    raw_date = _first(obj, _DATE_KEYS)
    post_date = None
    if raw_date is not None:
        try:
            post_date = dt.date.fromisoformat(str(raw_date)[:10])
        except ValueError:
            raise RecordError("bad_post_date", repr(raw_date)) from None
    city = _first(obj, _CITY_KEYS) or ""
    state = _first(obj, _STATE_KEYS) or ""
    if not isinstance(city, str) or not isinstance(state, str):
        raise RecordError("bad_location")

    return AdRecord(
        url_id=url,
        site_id=site,
        post_text=text,
        post_key=post_key,
        phashes=() if phash is None else (phash,),
        phones=() if phone is None else (phone,),
        post_date=post_date,
        target_city=city,
        target_state=state,
    )


def parse_line(line: str) -> AdRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RecordError("bad_json", str(exc)) from None
    return record_from_obj(obj)


def _lines(stream) -> Iterator[str]:
    if isinstance(stream, (str, Path)):
        try:
            fh = open(stream, encoding="utf-8")
        except OSError as exc:
            raise IngestError(f"cannot open {stream}: {exc}") from exc
        with fh:
            yield from fh
        return
    try:
        yield from stream
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestError(f"stream read failed: {exc}") from exc


def parse_records(stream: IO[str] | str | Path | Iterable[str], *, strict_keys: bool = True,
                  source_tag: str = "") -> Dataset:
    """Parse every well-formed line, tallying rejects by reason.

    With ``strict_keys`` a line whose ``post_int`` is already bound to another
    text (or whose text is bound to another key) is rejected as
    ``post_key_conflict``, keeping text and key in one-to-one correspondence.
    Blank lines are not records and are not counted.
    """
    records: list[AdRecord] = []
    rejected: Counter = Counter()
    text_of: dict[int, str] = {}
    key_of: dict[str, int] = {}
    for lineno, line in enumerate(_lines(stream), 1):
        if not line.strip():
            continue
        try:
            rec = parse_line(line)
        except RecordError as exc:
            rejected[exc.reason] += 1
            log.debug("line %d rejected: %s", lineno, exc)
            continue
        known = text_of.get(rec.post_key)
        if known is None:
            if strict_keys and key_of.get(rec.post_text, rec.post_key) != rec.post_key:
                rejected["post_key_conflict"] += 1
                continue
            text_of[rec.post_key] = rec.post_text
            key_of.setdefault(rec.post_text, rec.post_key)
        elif known != rec.post_text:
            if strict_keys:
                rejected["post_key_conflict"] += 1
                continue
        else:
            # share one str object per distinct post
            rec = replace(rec, post_text=known)
        records.append(rec)
    if rejected:
        log.warning("%d lines rejected: %s", sum(rejected.values()), dict(rejected))
    return Dataset(records, source_tag=source_tag, rejected=rejected)


def read_table(path: str | Path, *, strict_keys: bool = True) -> Dataset:
    """Columnar reader (CSV or Parquet) for the same schema."""
    import pandas as pd

    path = Path(path)
    if path.suffix in (".parquet", ".pq"):
        df = pd.read_parquet(path)
    else:
        df = pd.read_csv(path, sep=None, engine="python", dtype={"phash16": str, "post_masked": str})
    df = df.astype(object).where(df.notna(), None)
    lines = (json.dumps(row, default=str) for row in df.to_dict(orient="records"))
    return parse_records(lines, strict_keys=strict_keys, source_tag=str(path))


def dedupe_by_url(dataset: Dataset) -> Dataset:
    """Keep one record per url_id.

    The first row for a url wins for every scalar field. Later rows of the same
    url and post contribute their phash/phone values (open-dataset rows are one
    per image); a later row carrying a different post is dropped. Every folded
    or dropped row counts as a duplicate.
    """
    first: dict[int, int] = {}
    out: list[AdRecord] = []
    extra_ph: dict[int, list[int]] = {}
    extra_pn: dict[int, list[int]] = {}
    dups = 0
    for rec in dataset.records:
        i = first.get(rec.url_id)
        if i is None:
            first[rec.url_id] = len(out)
            out.append(rec)
            continue
        dups += 1
        if out[i].post_key != rec.post_key:
            continue
        if rec.phashes:
            extra_ph.setdefault(i, []).extend(rec.phashes)
        if rec.phones:
            extra_pn.setdefault(i, []).extend(rec.phones)
    for i in set(extra_ph) | set(extra_pn):
        r = out[i]
        out[i] = replace(
            r,
            phashes=tuple(dict.fromkeys(r.phashes + tuple(extra_ph.get(i, ())))),
            phones=tuple(dict.fromkeys(r.phones + tuple(extra_pn.get(i, ())))),
        )
    if dups:
        log.info("dedupe_by_url: %d duplicate rows folded", dups)
    return Dataset(out, source_tag=dataset.source_tag, rejected=Counter(dataset.rejected),
                   duplicates=dataset.duplicates + dups)


def filter_window(dataset: Dataset, window_days: int, as_of: dt.date | None = None) -> Dataset:
    """Keep records posted within ``window_days`` of ``as_of`` (default: latest date).

    Undated records are dropped when a window is active.
    """
    dates = [r.post_date for r in dataset.records if r.post_date is not None]
    if as_of is None:
        if not dates:
            return Dataset([], dataset.source_tag, Counter(dataset.rejected), dataset.duplicates)
        as_of = max(dates)
    keep = [r for r in dataset.records
            if r.post_date is not None and 0 <= (as_of - r.post_date).days < window_days]
    return Dataset(keep, dataset.source_tag, Counter(dataset.rejected), dataset.duplicates)


def record_rows(rec: AdRecord) -> Iterator[dict]:
    """Serialize one record as one row per (phash, phone) slot, open-dataset style."""
    n = max(len(rec.phashes), len(rec.phones), 1)
    for i in range(n):
        row = {
            "url": rec.url_id,
            "site": rec.site_id,
            "post_masked": rec.post_text,
            "post_int": rec.post_key,
            "phone_int": rec.phones[i] if i < len(rec.phones) else None,
            "phash16": format_phash(rec.phashes[i]) if i < len(rec.phashes) else None,
            "post_date": rec.post_date.isoformat() if rec.post_date else None,
            "city": rec.target_city,
            "state": rec.target_state,
        }
        yield row


def serialize(dataset: Dataset, out: IO[str]) -> None:
    dumps = json.JSONEncoder(ensure_ascii=False, separators=(",", ":")).encode
    for rec in dataset.records:
        for row in record_rows(rec):
            out.write(dumps(row))
            out.write("\n")


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        serialize(dataset, fh)


def dumps_dataset(dataset: Dataset) -> str:
    buf = io.StringIO()
    serialize(dataset, buf)
    return buf.getvalue()


def load_dataset(path: str | Path, *, strict_keys: bool = True) -> Dataset:
    """Read a JSONL dataset and fold its per-image rows (parse + dedupe)."""
    return dedupe_by_url(parse_records(path, strict_keys=strict_keys, source_tag=str(path)))


SUMMARY_COLUMNS = ("site", "urls", "unique_posts", "unique_phashes", "unique_phones")


def summarize(dataset: Dataset) -> list[dict]:
    """Per-site URL/post/phash/phone counts plus an ``All`` row over the union."""
    per_site: dict[int, tuple[set, set, set, set]] = {}
    every = (set(), set(), set(), set())
    for r in dataset.records:
        s = per_site.get(r.site_id)
        if s is None:
            s = per_site[r.site_id] = (set(), set(), set(), set())
        for bucket in (s, every):
            bucket[0].add(r.url_id)
            bucket[1].add(r.post_key)
            bucket[2].update(r.phashes)
            bucket[3].update(r.phones)
    rows = []
    for site in sorted(per_site):
        u, p, h, c = per_site[site]
        rows.append(dict(site=str(site), urls=len(u), unique_posts=len(p),
                         unique_phashes=len(h), unique_phones=len(c)))
    u, p, h, c = every
    rows.append(dict(site="All", urls=len(u), unique_posts=len(p),
                     unique_phashes=len(h), unique_phones=len(c)))
    return rows


def write_summary(rows: list[dict], tsv_path: str | Path, json_path: str | Path | None = None,
                  extra: dict | None = None) -> None:
    with open(tsv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(SUMMARY_COLUMNS) + "\n")
        for row in rows:
            fh.write("\t".join(str(row[c]) for c in SUMMARY_COLUMNS) + "\n")
    if json_path is not None:
        payload = {"sites": rows, **(extra or {})}
        Path(json_path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
