"""Synthetic ad datasets with planted posting entities and known ground truth.

Each entity owns a token pool, a set of post texts drawn mostly from that
pool, a pHash pool and a few phone numbers. Ads reuse the entity's artifacts,
so an entity on its own forms one connected component. Cross-entity links come
from two noise sources that build the giant component: generic pHashes
attached to ads of any entity, and misappropriated pHashes copied from another
entity's pool.
"""
from __future__ import annotations

import dataclasses
import datetime as dt
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .gazetteer import CanonicalLocation, Gazetteer, OverlayRule, load_builtin_gazetteer
from .ingest import AdRecord, Dataset

STATE_NAMES = {
    "AL": "Alabama", "AK": "Alaska", "AZ": "Arizona", "AR": "Arkansas", "CA": "California",
    "CO": "Colorado", "CT": "Connecticut", "DE": "Delaware", "DC": "District of Columbia",
    "FL": "Florida", "GA": "Georgia", "HI": "Hawaii", "ID": "Idaho", "IL": "Illinois", "IN": "Indiana",
    "IA": "Iowa", "KS": "Kansas", "KY": "Kentucky", "LA": "Louisiana", "ME": "Maine", "MD": "Maryland",
    "MA": "Massachusetts", "MI": "Michigan", "MN": "Minnesota", "MS": "Mississippi", "MO": "Missouri",
    "MT": "Montana", "NE": "Nebraska", "NV": "Nevada", "NH": "New Hampshire", "NJ": "New Jersey",
    "NM": "New Mexico", "NY": "New York", "NC": "North Carolina", "ND": "North Dakota", "OH": "Ohio",
    "OK": "Oklahoma", "OR": "Oregon", "PA": "Pennsylvania", "RI": "Rhode Island", "SC": "South Carolina",
    "SD": "South Dakota", "TN": "Tennessee", "TX": "Texas", "UT": "Utah", "VT": "Vermont",
    "VA": "Virginia", "WA": "Washington", "WV": "West Virginia", "WI": "Wisconsin", "WY": "Wyoming",
    "PR": "Puerto Rico",
}

# informal names a site may offer instead of the gazetteer spelling
CITY_ALIASES = {
    ("New York", "NY"): ["NYC", "Manhattan", "New York City"],
    ("Los Angeles", "CA"): ["LA", "L.A."],
    ("Las Vegas", "NV"): ["Vegas"],
    ("San Francisco", "CA"): ["SF", "San Fran"],
    ("Dallas", "TX"): ["Dallas/Fort Worth", "DFW"],
    ("Washington", "DC"): ["Washington DC", "DC"],
    ("Oklahoma City", "OK"): ["OKC"],
    ("Salt Lake City", "UT"): ["SLC"],
    ("Philadelphia", "PA"): ["Philly"],
    ("Minneapolis", "MN"): ["Minneapolis/St Paul", "Twin Cities"],
    ("Kansas City", "MO"): ["KC"],
    ("New Orleans", "LA"): ["NOLA"],
    ("Honolulu", "HI"): ["Oahu"],
    ("Atlanta", "GA"): ["ATL"],
    ("Houston", "TX"): ["H-Town"],
    ("Jersey City", "NJ"): ["North Jersey"],
    ("Miami", "FL"): ["Miami Beach"],
    ("San Jose", "CA"): ["South Bay"],
    ("Fort Lauderdale", "FL"): ["Ft Lauderdale", "Lauderdale"],
}

GENERIC_WORDS = (
    "new available now tonight call text me sweet real special visit incall outcall best fun here "
    "today only hot upscale discreet friendly private girl lady relax massage open late 24/7 "
    "come see ask for info ** *** **** ****-***-**** 100% ❤️ 🔥 ✨ 💯"
).split()
EMOJI = "💋 🌹 🍒 🍑 💕 😘 🥰 👑 💎 🌸 🦋 🌺 🍓 😍 💦 🎀 🌟 💖 🍭 🥂".split()
_ONSETS = "b c d f g h j k l m n p r s t v w y z br ch cl dr fl gr kr pl pr sh st tr".split()
_VOWELS = "a e i o u ai ee oo ia ou".split()


class SynthConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    n_entities: int = 500
    posts_per_entity: tuple[int, int] = (8, 30)
    ads_per_entity: tuple[int, int] = (40, 160)
    phashes_per_entity: tuple[int, int] = (10, 60)
    phones_per_entity: tuple[int, int] = (1, 3)
    images_per_ad: tuple[int, int] = (1, 4)
    phone_probability: float = 0.85
    generic_phash_count: int = 3
    attach_probability: float = 0.02
    misappropriation_probability: float = 0.01
    vocab_size: int = 6000
    entity_pool_size: int = 10
    tokens_per_post: tuple[int, int] = (10, 16)
    own_token_probability: float = 0.8
    location_noise_rate: float = 0.15
    unfixable_noise_share: float = 0.04
    home_locations: tuple[int, int] = (1, 2)
    home_probability: float = 0.9
    scatter_entities: int = 0
    scatter_states: int = 40
    n_sites: int = 9
    sites_per_entity: tuple[int, int] = (1, 2)
    start_date: str = "2022-05-01"
    end_date: str = "2022-08-01"
    seed: int = 7

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name.endswith("probability") or f.name in ("location_noise_rate", "unfixable_noise_share"):
                if not 0.0 <= v <= 1.0:
                    raise SynthConfigError(f"{f.name} must lie in [0, 1], got {v}")
            if isinstance(v, (tuple, list)):
                lo, hi = v
                if lo > hi or lo < 0:
                    raise SynthConfigError(f"{f.name} range {v} is empty or negative")
                setattr(self, f.name, (int(lo), int(hi)))
        for name in ("posts_per_entity", "ads_per_entity", "phashes_per_entity", "images_per_ad",
                     "tokens_per_post", "home_locations", "sites_per_entity"):
            if getattr(self, name)[0] < 1:
                raise SynthConfigError(f"{name} lower bound must be >= 1")
        if self.entity_pool_size < 1 or self.n_sites < 1:
            raise SynthConfigError("entity_pool_size and n_sites must be >= 1")
        if self.sites_per_entity[1] > self.n_sites:
            raise SynthConfigError("sites_per_entity exceeds n_sites")
        if dt.date.fromisoformat(self.end_date) < dt.date.fromisoformat(self.start_date):
            raise SynthConfigError("end_date precedes start_date")

    @classmethod
    def from_mapping(cls, data: Mapping) -> "SynthConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SynthConfigError(f"unknown synth options: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


PROFILES = {
    "ci": {},
    "100k": {"n_entities": 1000},
    "1m": {"n_entities": 10000},
}


def profile(name: str, **overrides) -> SynthConfig:
    try:
        base = PROFILES[name]
    except KeyError:
        raise SynthConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None
    return SynthConfig(**{**base, **overrides})


@dataclass
class GroundTruth:
    post_entity: dict[int, int]
    artifact_owners: dict[tuple[int, int], set[int]] = field(default_factory=dict)
    scatter: set[int] = field(default_factory=set)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("post_key\tentity_id\n")
            for k in sorted(self.post_entity):
                fh.write(f"{k}\t{self.post_entity[k]}\n")

    @classmethod
    def read(cls, path) -> "GroundTruth":
        out = {}
        with open(path, encoding="utf-8") as fh:
            fh.readline()
            for line in fh:
                k, e = line.split("\t")
                out[int(k)] = int(e)
        return cls(out)


def _vocabulary(rng: np.random.Generator, size: int) -> list[str]:
    words: set[str] = set()
    out = []
    while len(out) < size:
        n = int(rng.integers(2, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(n))
        if w not in words:
            words.add(w)
            out.append(w)
    return out + EMOJI


def location_variants(loc: CanonicalLocation) -> list[tuple[str, str]]:
    """Curatable raw spellings of a location that do not normalize to its gazetteer key."""
    cities = [loc.city]
    if loc.city.startswith("Fort "):
        cities += ["Ft " + loc.city[5:], "Ft. " + loc.city[5:]]
    if loc.city.startswith("Saint "):
        cities += ["St. " + loc.city[6:]]
    cities += CITY_ALIASES.get((loc.city, loc.state), [])
    states = [loc.state, STATE_NAMES.get(loc.state, loc.state)]
    out = []
    for c in cities:
        for s in states:
            if (c, s) != (loc.city, loc.state):
                out.append((c, s))
    return out


def curated_overlay_rules(gazetteer: Gazetteer) -> list[OverlayRule]:
    """Overlay rules covering every variant :func:`location_variants` can emit.

    Variants that normalize to the same key are emitted once.
    """
    from .gazetteer import normalize_key

    seen: dict[str, OverlayRule] = {}
    for loc in gazetteer.locations():
        for c, s in location_variants(loc):
            k = normalize_key(c, s)
            if k not in seen and gazetteer.get(k) is None:
                seen[k] = OverlayRule(c, s, loc)
    return [seen[k] for k in sorted(seen)]


def _typo(rng: np.random.Generator, city: str) -> str:
    letters = [i for i, ch in enumerate(city) if ch.isalpha()]
    if len(letters) < 2:
        return city + "x"
    i = letters[int(rng.integers(len(letters)))]
    # doubled letter: "Dalllas", never a real city name in the fixture
    return city[:i] + city[i] + city[i:]


def _post_text(rng, pool: list[str], shared: list[str], cfg: SynthConfig) -> str:
    n = int(rng.integers(cfg.tokens_per_post[0], cfg.tokens_per_post[1] + 1))
    own = rng.random(n) < cfg.own_token_probability
    toks = [pool[rng.integers(len(pool))] if o else shared[rng.integers(len(shared))] for o in own]
    return " ".join(toks)


def _rint(rng, bounds: tuple[int, int]) -> int:
    return int(rng.integers(bounds[0], bounds[1] + 1))


def generate(config: SynthConfig | None = None, gazetteer: Gazetteer | None = None
             ) -> tuple[Dataset, GroundTruth]:
    """Build a dataset of ads with planted entities. Deterministic in ``config.seed``."""
    cfg = config or SynthConfig()
    gaz = gazetteer or load_builtin_gazetteer()
    rng = np.random.default_rng(cfg.seed)
    locations = gaz.locations()
    vocab = _vocabulary(rng, cfg.vocab_size)
    shared = list(GENERIC_WORDS)
    start = dt.date.fromisoformat(cfg.start_date)
    span = (dt.date.fromisoformat(cfg.end_date) - start).days + 1

    used_phash: set[int] = set()

    def fresh_phashes(n: int) -> list[int]:
        out = []
        while len(out) < n:
            h = int(rng.integers(0, 2**64, dtype=np.uint64))
            if h not in used_phash:
                used_phash.add(h)
                out.append(h)
        return out

    used_phone: set[int] = set()

    def fresh_phones(n: int) -> list[int]:
        out = []
        while len(out) < n:
            p = int(rng.integers(10**9, 10**10))
            if p not in used_phone:
                used_phone.add(p)
                out.append(p)
        return out

    generic = fresh_phashes(cfg.generic_phash_count)
    n_total = cfg.n_entities + cfg.scatter_entities

    # entity-level draws
    used_text: set[str] = set()
    ent_posts: list[list[str]] = []
    ent_phash: list[list[int]] = []
    ent_phone: list[list[int]] = []
    ent_sites: list[np.ndarray] = []
    ent_homes: list[list[CanonicalLocation]] = []
    for e in range(n_total):
        pool = [vocab[i] for i in rng.choice(len(vocab), size=min(cfg.entity_pool_size, len(vocab)),
                                             replace=False)]
        texts = []
        for _ in range(_rint(rng, cfg.posts_per_entity)):
            for _attempt in range(50):
                t = _post_text(rng, pool, shared, cfg)
                if t not in used_text:
                    break
            else:
                t = f"{t} {pool[0]}{e}"
            used_text.add(t)
            texts.append(t)
        ent_posts.append(texts)
        ent_phash.append(fresh_phashes(_rint(rng, cfg.phashes_per_entity)))
        ent_phone.append(fresh_phones(_rint(rng, cfg.phones_per_entity)))
        ent_sites.append(np.sort(rng.choice(np.arange(1, cfg.n_sites + 1), size=_rint(rng, cfg.sites_per_entity),
                                            replace=False)))
        homes = rng.choice(len(locations), size=min(_rint(rng, cfg.home_locations), len(locations)), replace=False)
        ent_homes.append([locations[i] for i in homes])

    post_key_of: dict[str, int] = {}
    post_entity: dict[int, int] = {}
    for e, texts in enumerate(ent_posts):
        for t in texts:
            k = len(post_key_of) + 1
            post_key_of[t] = k
            post_entity[k] = e

    scatter_ids = set(range(cfg.n_entities, n_total))
    states = sorted({l.state for l in locations})
    # scatter entities pick a state uniformly, then a city within it
    scatter_locs = [[l for l in locations if l.state == st] for st in states[: cfg.scatter_states]]

    owners: dict[tuple[int, int], set[int]] = {}
    records: list[AdRecord] = []
    url = 0
    for e in range(n_total):
        texts = ent_posts[e]
        n_ads = _rint(rng, cfg.ads_per_entity)
        post_idx = rng.integers(len(texts), size=n_ads)
        n_img = rng.integers(cfg.images_per_ad[0], cfg.images_per_ad[1] + 1, size=n_ads)
        has_phone = rng.random(n_ads) < cfg.phone_probability
        phone_idx = rng.integers(len(ent_phone[e]), size=n_ads)
        # noise is a property of the post template, so it recurs on every ad reusing it
        tmpl_generic = [generic[rng.integers(len(generic))] if generic and rng.random() < cfg.attach_probability
                        else None for _ in texts]
        tmpl_misapp = []
        for _ in texts:
            if n_total > 1 and rng.random() < cfg.misappropriation_probability:
                other = int(rng.integers(n_total - 1))
                other += other >= e
                theirs = ent_phash[other]
                tmpl_misapp.append(theirs[rng.integers(len(theirs))])
            else:
                tmpl_misapp.append(None)
        site_idx = rng.integers(ent_sites[e].size, size=n_ads)
        day = rng.integers(span, size=n_ads)
        at_home = rng.random(n_ads) < cfg.home_probability
        noisy = rng.random(n_ads) < cfg.location_noise_rate
        for a in range(n_ads):
            pool = ent_phash[e]
            imgs = [pool[i] for i in rng.choice(len(pool), size=min(int(n_img[a]), len(pool)), replace=False)]
            for extra in (tmpl_misapp[post_idx[a]], tmpl_generic[post_idx[a]]):
                if extra is not None:
                    imgs.append(extra)
            imgs = list(dict.fromkeys(imgs))
            if e in scatter_ids:
                in_state = scatter_locs[rng.integers(len(scatter_locs))]
                loc = in_state[rng.integers(len(in_state))]
            elif at_home[a]:
                homes = ent_homes[e]
                loc = homes[rng.integers(len(homes))]
            else:
                loc = locations[rng.integers(len(locations))]
            city, state = loc.city, loc.state
            if noisy[a]:
                variants = location_variants(loc)
                if rng.random() < cfg.unfixable_noise_share or not variants:
                    city = _typo(rng, city)
                else:
                    city, state = variants[rng.integers(len(variants))]
            url += 1
            text = texts[post_idx[a]]
            key = post_key_of[text]
            for h in imgs:
                owners.setdefault((1, h), set()).add(e)
            phones = (ent_phone[e][phone_idx[a]],) if has_phone[a] else ()
            for p in phones:
                owners.setdefault((2, p), set()).add(e)
            records.append(AdRecord(
                url_id=url, site_id=int(ent_sites[e][site_idx[a]]), post_text=text, post_key=key,
                phashes=tuple(imgs), phones=phones, post_date=start + dt.timedelta(days=int(day[a])),
                target_city=city, target_state=state,
            ))
    used = {r.post_key for r in records}
    truth = GroundTruth({k: e for k, e in post_entity.items() if k in used}, owners, scatter_ids)
    return Dataset(records, source_tag=f"synth(seed={cfg.seed})"), truth


# ---------------------------------------------------------------- scoring

def _comb2(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2


def score_recovery(assignment: Mapping[int, int], truth: Mapping[int, int]) -> dict:
    """Pair-level precision/recall/F1 and adjusted Rand index over the truth's posts."""
    keys = sorted(truth)
    missing = [k for k in keys if k not in assignment]
    if missing:
        raise KeyError(f"assignment lacks {len(missing)} posts, e.g. {missing[:5]}")
    pred = np.array([assignment[k] for k in keys])
    true = np.array([truth[k] for k in keys])
    _, pred = np.unique(pred, return_inverse=True)
    _, true = np.unique(true, return_inverse=True)
    n = len(keys)
    cont = Counter(zip(pred.tolist(), true.tolist()))
    sum_ij = float(_comb2(np.fromiter(cont.values(), dtype=np.float64)).sum())
    sum_a = float(_comb2(np.bincount(pred)).sum())
    sum_b = float(_comb2(np.bincount(true)).sum())
    total = n * (n - 1) / 2
    precision = sum_ij / sum_a if sum_a else 1.0
    recall = sum_ij / sum_b if sum_b else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    expected = sum_a * sum_b / total if total else 0.0
    max_index = (sum_a + sum_b) / 2
    if math.isclose(max_index, expected):
        ari = 1.0
    else:
        ari = (sum_ij - expected) / (max_index - expected)
    return {"precision": precision, "recall": recall, "f1": f1, "ari": ari, "posts": n}
