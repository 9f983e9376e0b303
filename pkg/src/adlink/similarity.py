"""Text embeddings, pair sampling and the logistic same-user classifier."""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

log = logging.getLogger(__name__)

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_PRIME = np.uint64(0x100000001B3)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_BOS, _EOS = "\x02", "\x03"


class EmbeddingLookupError(KeyError):
    def __init__(self, post_key):
        super().__init__(f"no precomputed embedding for post_key {post_key!r}")
        self.post_key = post_key


class TrainingError(RuntimeError):
    pass


class SeparationWarning(UserWarning):
    """Logistic fit hit the weight bound because the classes are separable."""


def _mix(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def _unit_e1(d: int) -> np.ndarray:
    v = np.zeros(d)
    v[0] = 1.0
    return v


class HashedNgramEmbedder:
    """Signed feature hashing of character n-grams.

    Text is trimmed and wrapped in begin/end markers, so a single character
    still yields n-grams. Empty text maps to the unit vector e1.
    """

    kind = "hashed-ngram"

    def __init__(self, dimension: int = 512, ngram_range: tuple[int, int] = (2, 4), seed: int = 0):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        lo, hi = ngram_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad ngram_range {ngram_range}")
        self.dimension = int(dimension)
        self.ngram_range = (int(lo), int(hi))
        self.seed = int(seed)
        self._salt = _mix(np.array([self.seed], dtype=np.uint64) ^ _GOLD)[0]

    def metadata(self) -> dict:
        return {"provider": self.kind, "dimension": self.dimension,
                "ngram_min": self.ngram_range[0], "ngram_max": self.ngram_range[1], "seed": self.seed}

    def embed(self, text: str, key: int | None = None) -> np.ndarray:
        text = text.strip()
        d = self.dimension
        if not text:
            return _unit_e1(d)
        cp = np.frombuffer((_BOS + text + _EOS).encode("utf-32-le"), dtype=np.uint32).astype(np.uint64)
        buckets = []
        signs = []
        with np.errstate(over="ignore"):
            for n in range(self.ngram_range[0], self.ngram_range[1] + 1):
                m = cp.shape[0] - n + 1
                if m <= 0:
                    continue
                h = np.full(m, self._salt ^ np.uint64(n), dtype=np.uint64)
                for j in range(n):
                    h = h * _PRIME + cp[j:j + m]
                z = _mix(h)
                buckets.append(z % np.uint64(d))
                signs.append(np.where((z >> np.uint64(63)) == 1, -1.0, 1.0))
        v = np.bincount(np.concatenate(buckets).astype(np.int64), weights=np.concatenate(signs), minlength=d)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            return _unit_e1(d)
        return v / norm

    def embed_many(self, texts: Sequence[str], keys: Sequence[int] | None = None, threads: int = 1) -> np.ndarray:
        return _embed_rows(self, texts, keys, threads)


class PrecomputedEmbedder:
    """Embeddings read from a file of ``post_key, v1 .. vd`` rows.

    Lookups go by post key; ``key_of`` (text -> post key) lets :meth:`embed`
    work from text alone. Rows are L2-normalised at load.
    """

    kind = "precomputed"

    def __init__(self, vectors: Mapping[int, np.ndarray], key_of: Mapping[str, int] | None = None,
                 source: str = ""):
        dims = {np.asarray(v).shape[0] for v in vectors.values()}
        if len(dims) > 1:
            raise ValueError(f"mixed embedding dimensions {sorted(dims)}")
        self.dimension = dims.pop() if dims else 0
        self.vectors = {}
        for k, v in vectors.items():
            v = np.asarray(v, dtype=np.float64)
            norm = np.linalg.norm(v)
            self.vectors[int(k)] = v / norm if norm > 0 else _unit_e1(self.dimension)
        self.key_of = dict(key_of or {})
        self.source = source

    def metadata(self) -> dict:
        return {"provider": self.kind, "dimension": self.dimension, "file": self.source}

    @classmethod
    def load(cls, path: str | Path, key_of: Mapping[str, int] | None = None) -> "PrecomputedEmbedder":
        import pandas as pd

        df = pd.read_csv(path, sep=None, engine="python", header=None, comment="#")
        keys = df.iloc[:, 0].astype(np.int64).to_numpy()
        mat = df.iloc[:, 1:].to_numpy(dtype=np.float64)
        return cls(dict(zip(keys.tolist(), mat)), key_of=key_of, source=str(path))

    def embed(self, text: str, key: int | None = None) -> np.ndarray:
        if key is None:
            key = self.key_of.get(text, self.key_of.get(text.strip()))
            if key is None:
                raise EmbeddingLookupError(f"<unknown key for text {text[:40]!r}>")
        try:
            return self.vectors[int(key)]
        except KeyError:
            raise EmbeddingLookupError(int(key)) from None

    def embed_many(self, texts: Sequence[str], keys: Sequence[int] | None = None, threads: int = 1) -> np.ndarray:
        return _embed_rows(self, texts, keys, threads)


def _embed_rows(provider, texts, keys, threads) -> np.ndarray:
    n = len(texts)
    out = np.empty((n, provider.dimension))
    if keys is None:
        keys = [None] * n

    def work(lo: int, hi: int) -> None:
        for i in range(lo, hi):
            out[i] = provider.embed(texts[i], keys[i])

    if threads <= 1 or n < 1024:
        work(0, n)
    else:
        step = math.ceil(n / threads)
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(lambda lo: work(lo, min(n, lo + step)), range(0, n, step)))
    return out


def make_provider(meta: Mapping, key_of: Mapping[str, int] | None = None):
    kind = meta.get("provider", HashedNgramEmbedder.kind)
    if kind == HashedNgramEmbedder.kind:
        return HashedNgramEmbedder(int(meta.get("dimension", 512)),
                                   (int(meta.get("ngram_min", 2)), int(meta.get("ngram_max", 4))),
                                   int(meta.get("seed", 0)))
    if kind == PrecomputedEmbedder.kind:
        return PrecomputedEmbedder.load(meta["file"], key_of=key_of)
    raise ValueError(f"unknown embedding provider {kind!r}")


def embed(provider, text: str) -> np.ndarray:
    return provider.embed(text)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(min(1.0, max(-1.0, float(np.dot(a, b)))))


def rowwise_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0)


# ---------------------------------------------------------------- pairs

@dataclass(frozen=True)
class TrainingPair:
    key_a: int
    key_b: int
    text_a: str
    text_b: str
    label: int
    cosine: float


def sample_pairs(groups: Sequence[Sequence[int]], n_pos: int = 1000, n_neg: int = 9000, seed: int = 0
                 ) -> list[tuple[int, int, int]]:
    """Draw ``(key_a, key_b, label)`` post pairs from disjoint post groups.

    Positives come from inside one group (groups weighted by size choose 2),
    negatives from two distinct groups chosen uniformly. No unordered pair
    repeats. When fewer pairs exist than requested both counts are scaled
    down by the same factor.
    """
    groups = [np.sort(np.asarray(g, dtype=np.int64)) for g in groups if len(g) > 0]
    if len(groups) < 2:
        raise TrainingError(f"need at least 2 non-giant components, got {len(groups)}")
    sizes = np.array([g.size for g in groups], dtype=np.int64)
    within = sizes * (sizes - 1) // 2
    avail_pos = int(within.sum())
    if avail_pos == 0:
        raise TrainingError("no non-giant component has more than one post")
    total = int(sizes.sum())
    avail_neg = total * (total - 1) // 2 - avail_pos

    scale = 1.0
    if n_pos > avail_pos:
        scale = min(scale, avail_pos / n_pos)
    if n_neg > avail_neg:
        scale = min(scale, avail_neg / n_neg)
    if scale < 1.0:
        want_pos = max(1, int(n_pos * scale)) if n_pos else 0
        want_neg = int(n_neg * scale)
        warnings.warn(f"only {avail_pos} positive / {avail_neg} negative pairs available; "
                      f"sampling {want_pos}/{want_neg} instead of {n_pos}/{n_neg}", stacklevel=2)
        n_pos, n_neg = want_pos, want_neg

    rng = np.random.default_rng(seed)
    out: list[tuple[int, int, int]] = []

    if n_pos:
        if 2 * n_pos > avail_pos:
            cands = [(int(g[i]), int(g[j])) for g in groups for i in range(g.size) for j in range(i + 1, g.size)]
            pick = rng.choice(len(cands), size=n_pos, replace=False)
            out.extend((*cands[i], 1) for i in pick)
        else:
            eligible = np.flatnonzero(within > 0)
            prob = within[eligible] / avail_pos
            seen: set[tuple[int, int]] = set()
            while len(seen) < n_pos:
                g = groups[eligible[rng.choice(eligible.size, p=prob)]]
                i, j = rng.choice(g.size, size=2, replace=False)
                pair = (int(min(g[i], g[j])), int(max(g[i], g[j])))
                if pair not in seen:
                    seen.add(pair)
                    out.append((*pair, 1))

    if n_neg:
        if 2 * n_neg > avail_neg:
            cands = [(int(min(a, b)), int(max(a, b)))
                     for gi in range(len(groups)) for gj in range(gi + 1, len(groups))
                     for a in groups[gi] for b in groups[gj]]
            cands.sort()
            pick = rng.choice(len(cands), size=n_neg, replace=False)
            out.extend((*cands[i], 0) for i in pick)
        else:
            seen = set()
            while len(seen) < n_neg:
                gi, gj = rng.choice(len(groups), size=2, replace=False)
                a = groups[gi][rng.integers(groups[gi].size)]
                b = groups[gj][rng.integers(groups[gj].size)]
                pair = (int(min(a, b)), int(max(a, b)))
                if pair not in seen:
                    seen.add(pair)
                    out.append((*pair, 0))
    return out


def generate_training_pairs(groups: Sequence[Sequence[int]], texts: Mapping[int, str], provider,
                            n_pos: int = 1000, n_neg: int = 9000, seed: int = 0) -> list[TrainingPair]:
    """Labelled pairs with texts and embedding cosines attached."""
    raw = sample_pairs(groups, n_pos, n_neg, seed)
    keys = sorted({k for a, b, _ in raw for k in (a, b)})
    pos = {k: i for i, k in enumerate(keys)}
    emb = provider.embed_many([texts[k] for k in keys], keys)
    out = []
    for a, b, label in raw:
        out.append(TrainingPair(a, b, texts[a], texts[b], label, cosine(emb[pos[a]], emb[pos[b]])))
    return out


def split_pairs(pairs: Sequence[TrainingPair], test_fraction: float = 0.2, seed: int = 0
                ) -> tuple[list[TrainingPair], list[TrainingPair]]:
    """Label-stratified train/held-out split."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for label in (0, 1):
        idx = [i for i, p in enumerate(pairs) if p.label == label]
        order = rng.permutation(len(idx))
        n_test = int(round(test_fraction * len(idx)))
        chosen = {idx[i] for i in order[:n_test]}
        for i in idx:
            (test if i in chosen else train).append(pairs[i])
    key = lambda p: (p.key_a, p.key_b)
    return sorted(train, key=key), sorted(test, key=key)


def write_pairs(pairs: Sequence[TrainingPair], path, classifier: "SameUserClassifier | None" = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        cols = ["key_a", "key_b", "label", "cosine"] + (["same_user_probability"] if classifier else [])
        fh.write("\t".join(cols + ["text_a", "text_b"]) + "\n")
        for p in pairs:
            vals = [str(p.key_a), str(p.key_b), str(p.label), repr(p.cosine)]
            if classifier:
                vals.append(repr(float(classifier.probability(p.cosine))))
            vals += [_tsv_text(p.text_a), _tsv_text(p.text_b)]
            fh.write("\t".join(vals) + "\n")


def _tsv_text(s: str) -> str:
    return s.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n").replace("\r", "\\r")


# ---------------------------------------------------------------- classifier

@dataclass
class SameUserClassifier:
    intercept: float
    slope: float
    provider: dict = field(default_factory=dict)
    iterations: int = 0
    capped: bool = False

    def probability(self, cos):
        return expit(self.intercept + self.slope * np.asarray(cos, dtype=np.float64))

    def save(self, path) -> None:
        lines = [f"intercept\t{self.intercept!r}", f"slope\t{self.slope!r}"]
        lines += [f"provider.{k}\t{v}" for k, v in sorted(self.provider.items())]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SameUserClassifier":
        kv = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip() and not line.startswith("#"):
                k, _, v = line.partition("\t")
                kv[k] = v
        provider = {k[len("provider."):]: v for k, v in kv.items() if k.startswith("provider.")}
        return cls(float(kv["intercept"]), float(kv["slope"]), provider)


def _loglik(w, X, y) -> float:
    z = X @ w
    return float(np.sum(y * z - np.logaddexp(0.0, z)) / y.size)


def fit_logistic(x: np.ndarray, y: np.ndarray, *, max_iter: int = 100, tol: float = 1e-8,
                 bound: float = 50.0) -> tuple[np.ndarray, int, bool]:
    """Maximum-likelihood ``(intercept, slope)`` by damped Newton from zero.

    Stops when the mean-gradient infinity norm drops below ``tol`` or after
    ``max_iter`` steps. If a weight exceeds ``bound``, or the labels are
    perfectly separated by cosine, the vector is rescaled onto the bound,
    which keeps the decision boundary.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    X = np.column_stack([np.ones_like(x), x])
    w = np.zeros(2)
    ll = _loglik(w, X, y)
    capped = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(X @ w)
        grad = X.T @ (y - p) / y.size
        if np.max(np.abs(grad)) < tol:
            it -= 1
            break
        H = (X * (p * (1 - p))[:, None]).T @ X / y.size
        step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = w + t * step
            ll_new = _loglik(cand, X, y)
            if ll_new >= ll - 1e-15 or t < 1e-10:
                break
            t *= 0.5
        w, ll = cand, ll_new
        top = np.max(np.abs(w))
        if top > bound:
            w = w * (bound / top)
            capped = True
            warnings.warn(f"classes look separable; weights capped at |w| <= {bound}", SeparationWarning,
                          stacklevel=2)
            break
    if not capped and _separable(x, y):
        # the likelihood has no finite maximum; report the boundary at the bound
        top = np.max(np.abs(w))
        if top > 0:
            w = w * (bound / top)
        capped = True
        warnings.warn(f"classes look separable; weights capped at |w| <= {bound}", SeparationWarning,
                      stacklevel=2)
    return w, it, capped


def _separable(x: np.ndarray, y: np.ndarray) -> bool:
    pos, neg = x[y == 1], x[y == 0]
    if pos.size == 0 or neg.size == 0:
        return False
    return bool(pos.min() > neg.max() or neg.min() > pos.max())


def train_classifier(pairs: Sequence[TrainingPair], provider_meta: dict | None = None, *,
                     max_iter: int = 100, tol: float = 1e-8, bound: float = 50.0) -> SameUserClassifier:
    labels = {p.label for p in pairs}
    if labels != {0, 1}:
        raise TrainingError(f"training needs both labels, got {sorted(labels)}")
    x = np.array([p.cosine for p in pairs])
    y = np.array([p.label for p in pairs])
    w, it, capped = fit_logistic(x, y, max_iter=max_iter, tol=tol, bound=bound)
    return SameUserClassifier(float(w[0]), float(w[1]), dict(provider_meta or {}), it, capped)


def same_user_probability(classifier: SameUserClassifier, provider, text_a: str, text_b: str,
                          key_a: int | None = None, key_b: int | None = None) -> float:
    c = cosine(provider.embed(text_a, key_a), provider.embed(text_b, key_b))
    return float(classifier.probability(c))


THRESHOLDS = np.round(np.arange(101) / 100, 2)


def threshold_curve(labels: np.ndarray, probabilities: np.ndarray, thresholds: np.ndarray = THRESHOLDS
                    ) -> list[dict]:
    """FP/FN/total error rates when pairs with probability >= threshold are called same-user."""
    y = np.asarray(labels).astype(bool)
    p = np.asarray(probabilities, dtype=np.float64)
    n_pos = max(int(y.sum()), 1)
    n_neg = max(int((~y).sum()), 1)
    rows = []
    for t in thresholds:
        called = p >= t
        fp = int(np.count_nonzero(called & ~y))
        fn = int(np.count_nonzero(~called & y))
        rows.append({"threshold": float(t), "fp_rate": fp / n_neg, "fn_rate": fn / n_pos,
                     "total_error": (fp + fn) / max(y.size, 1)})
    return rows


def pairs_curve(pairs: Sequence[TrainingPair], classifier: SameUserClassifier,
                thresholds: np.ndarray = THRESHOLDS) -> list[dict]:
    y = np.array([p.label for p in pairs])
    prob = classifier.probability(np.array([p.cosine for p in pairs]))
    return threshold_curve(y, prob, thresholds)


def write_curve(rows: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("threshold\tfp_rate\tfn_rate\ttotal_error\n")
        for r in rows:
            fh.write(f"{r['threshold']:.2f}\t{r['fp_rate']:.6f}\t{r['fn_rate']:.6f}\t{r['total_error']:.6f}\n")
