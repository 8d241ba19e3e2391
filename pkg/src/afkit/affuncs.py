"""Alignment-free functions as partial / combine / finalize evaluators.

For one sample pair the engine hands an evaluator the aggregated values of
every key present in at least one of the two samples (absent side filled
with that sample's missing value). The evaluator returns one partial term
per key; terms are folded with ``combine``; keys absent from both samples
enter through ``complement`` (closed form, never by walking all 4^k keys
except for D2S at k <= 8); ``finalize`` produces the matrix entry.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from afkit.errors import (ConfigError, DegenerateBackground, NegativeInput, NoMatches,
                          SaturatedDistance, ZeroMean)

log = logging.getLogger(__name__)

# Chiaromonte et al. nucleotide substitution scores; index order A, C, G, T, other.
CHIAROMONTE = np.array([
    [91, -114, -31, -123, -125],
    [-114, 100, -125, -31, -125],
    [-31, -125, 100, -114, -125],
    [-123, -31, -114, 91, -125],
    [-125, -125, -125, -125, -125],
], dtype=np.int64)

D2S_ENUM_MAX_K = 8


@dataclass
class SampleStats:
    """Dense-vector summary of one sample's final statistic."""
    total: float
    sumsq: float
    nnz: int
    missing: float
    background: np.ndarray

    @classmethod
    def from_values(cls, values: np.ndarray, size: int, missing: float = 0.0,
                    background: np.ndarray | None = None) -> "SampleStats":
        values = np.asarray(values, dtype=float)
        absent = size - values.size
        total = float(values.sum()) + missing * absent
        sumsq = float(np.dot(values, values)) + missing * missing * absent
        bg = np.full(4, 0.25) if background is None else np.asarray(background, dtype=float)
        return cls(total, sumsq, int(values.size), float(missing), bg)


@dataclass
class PairContext:
    k: int
    s: SampleStats
    t: SampleStats
    options: Mapping[str, Any] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return 4 ** self.k


def background_from_counts(counts: np.ndarray) -> np.ndarray:
    acgt = np.asarray(counts[:4], dtype=float)
    tot = acgt.sum()
    if tot == 0:
        return np.zeros(4)
    return acgt / tot


def key_probabilities(keys: np.ndarray, k: int, bg: np.ndarray) -> np.ndarray:
    """Order-0 background probability of each 2-bit coded key."""
    keys = np.asarray(keys, dtype=np.uint64)
    p = np.ones(keys.size)
    for j in range(k):
        sym = ((keys >> np.uint64(2 * (k - 1 - j))) & np.uint64(3)).astype(np.intp)
        p *= bg[sym]
    return p


def all_key_probabilities(k: int, bg: np.ndarray) -> np.ndarray:
    p = np.ones(1)
    for _ in range(k):
        p = np.multiply.outer(p, bg).ravel()
    return p


class Evaluator:
    name = ""
    orientation = "distance"
    statistic = "kmer"
    width = 1

    def __init__(self, **options):
        self.options = options

    def partial(self, a, b, ctx: PairContext, keys=None, pa=None, pb=None) -> np.ndarray:
        raise NotImplementedError

    def identity(self) -> np.ndarray:
        return np.zeros(self.width)

    def combine(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return x + y

    def reduce(self, parts: np.ndarray) -> np.ndarray:
        parts = np.asarray(parts, dtype=float)
        if parts.shape[0] == 0:
            return self.identity()
        return np.atleast_1d(parts.sum(axis=0))

    def complement(self, ctx: PairContext, count: int) -> np.ndarray:
        """Contribution of ``count`` keys absent from both samples."""
        if count <= 0:
            return self.identity()
        one = self.partial(np.array([ctx.s.missing]), np.array([ctx.t.missing]), ctx)
        return np.atleast_1d(np.asarray(one, dtype=float)[0] * count)

    def finalize(self, acc: np.ndarray, ctx: PairContext) -> float:
        return float(acc[0])


# Minkowski ---------------------------------------------------------------------

class Euclidean(Evaluator):
    name = "euclidean"

    def partial(self, a, b, ctx, keys=None, pa=None, pb=None):
        d = a - b
        return d * d

    def finalize(self, acc, ctx):
        return math.sqrt(acc[0])


class Manhattan(Evaluator):
    name = "manhattan"

    def partial(self, a, b, ctx, keys=None, pa=None, pb=None):
        return np.abs(a - b)


class Chebyshev(Evaluator):
    name = "chebyshev"

    def partial(self, a, b, ctx, keys=None, pa=None, pb=None):
        return np.abs(a - b)

    def combine(self, x, y):
        return np.maximum(x, y)

    def reduce(self, parts):
        parts = np.asarray(parts, dtype=float)
        if parts.shape[0] == 0:
            return self.identity()
        return np.atleast_1d(parts.max(axis=0))

    def complement(self, ctx, count):
        if count <= 0:
            return self.identity()
        return np.atleast_1d(abs(ctx.s.missing - ctx.t.missing))


# match / mismatch ----------------------------------------------------------------

class Jaccard(Evaluator):
    name = "jaccard"
    orientation = "similarity"
    width = 2

    def partial(self, a, b, ctx, keys=None, pa=None, pb=None):
        pa = (a > 0) if pa is None else pa
        pb = (b > 0) if pb is None else pb
        return np.stack([(pa & pb), (pa | pb)], axis=1).astype(float)

    def complement(self, ctx, count):
        return self.identity()

    def finalize(self, acc, ctx):
        if acc[1] == 0:
            log.warning("jaccard: both supports empty, similarity defined as 1")
            return 1.0
        return float(acc[0] / acc[1])


class _Sketched(Evaluator):
    statistic = "minhash"
    width = 2

    def partial(self, a, b, ctx, keys=None, pa=None, pb=None):
        """``a`` and ``b`` are sorted bottom-s hash arrays."""
        s = int(ctx.options.get("sketch_size", max(a.size, b.size, 1)))
        x = np.union1d(a, b)[:s]
        shared = np.intersect1d(np.intersect1d(a, b, assume_unique=True), x, assume_unique=True)
        return np.array([[float(shared.size), float(x.size)]])

    def complement(self, ctx, count):
        return self.identity()

    def jaccard(self, acc) -> float:
        if acc[1] == 0:
            log.warning("mash: both sketches empty, similarity defined as 1")
            return 1.0
        return float(acc[0] / acc[1])


class MashJaccard(_Sketched):
    name = "mash_jaccard"
    orientation = "similarity"

    def finalize(self, acc, ctx):
        return self.jaccard(acc)


class Mash(_Sketched):
    name = "mash"

    def finalize(self, acc, ctx):
        return mash_distance(self.jaccard(acc), ctx.k)


def mash_distance(j: float, k: int) -> float:
    if j <= 0:
        return math.inf
    return -math.log(2 * j / (1 + j)) / k


# chi2 / canberra -------------------------------------------------------------------

def _ratio(num, den):
    out = np.zeros(np.broadcast(num, den).shape)
    ok = den > 0
    np.divide(num, den, out=out, where=ok)
    return out


class ChiSquare(Evaluator):
    name = "chi2"

    def partial(self, a, b, ctx, keys=None, pa=None, pb=None):
        d = a - b
        return _ratio(d * d, a + b)


class Canberra(Evaluator):
    name = "canberra"

    def partial(self, a, b, ctx, keys=None, pa=None, pb=None):
        return _ratio(np.abs(a - b), a + b)


# D2 family -----------------------------------------------------------------------

class D2(Evaluator):
    name = "d2"
    orientation = "similarity"

    def partial(self, a, b, ctx, keys=None, pa=None, pb=None):
        return a * b


def _zscore_params(st: SampleStats, size: int) -> tuple[float, float]:
    mu = st.total / size
    var = st.sumsq / size - mu * mu
    return mu, math.sqrt(max(var, 0.0))


class D2Z(Evaluator):
    name = "d2z"
    orientation = "similarity"

    def _z(self, v, st, size):
        mu, sigma = _zscore_params(st, size)
        if sigma == 0.0:
            return np.zeros_like(np.asarray(v, dtype=float))
        return (v - mu) / sigma

    def partial(self, a, b, ctx, keys=None, pa=None, pb=None):
        return self._z(a, ctx.s, ctx.size) * self._z(b, ctx.t, ctx.size)


class _Centered(Evaluator):
    """Shared machinery for D2S and D2*: counts centered on an order-0 background."""
    orientation = "similarity"

    def _check(self, v, p, who):
        if np.any((v > 0) & (p == 0)):
            raise DegenerateBackground(f"{self.name}: k-mer present in {who} but has background probability 0")

    def _centered(self, a, b, ctx, keys):
        ps = key_probabilities(keys, ctx.k, ctx.s.background)
        pt = key_probabilities(keys, ctx.k, ctx.t.background)
        self._check(a, ps, "s")
        self._check(b, pt, "t")
        n, m = ctx.s.total, ctx.t.total
        return a - n * ps, b - m * pt, ps, pt

    def term(self, hs, ht, ps, pt, ctx):
        raise NotImplementedError

    def base(self, ps, pt, ctx):
        n, m = ctx.s.total, ctx.t.total
        return self.term(ctx.s.missing - n * ps, ctx.t.missing - m * pt, ps, pt, ctx)

    def partial(self, a, b, ctx, keys=None, pa=None, pb=None):
        hs, ht, ps, pt = self._centered(a, b, ctx, keys)
        out = self.term(hs, ht, ps, pt, ctx)
        if self.complement_exact(ctx):
            out = out - self.base(ps, pt, ctx)
        return out

    def complement_exact(self, ctx) -> bool:
        return True


class D2S(_Centered):
    name = "d2s"

    def term(self, hs, ht, ps, pt, ctx):
        return _ratio(hs * ht, np.sqrt(hs * hs + ht * ht))

    def complement_exact(self, ctx):
        return ctx.k <= D2S_ENUM_MAX_K

    def complement(self, ctx, count):
        if not self.complement_exact(ctx):
            warnings.warn(f"d2s: k={ctx.k} > {D2S_ENUM_MAX_K}, terms of keys absent from both "
                          "sequences are dropped", stacklevel=2)
            return self.identity()
        ps = all_key_probabilities(ctx.k, ctx.s.background)
        pt = all_key_probabilities(ctx.k, ctx.t.background)
        return np.atleast_1d(self.base(ps, pt, ctx).sum())


class D2Star(_Centered):
    name = "d2star"

    def term(self, hs, ht, ps, pt, ctx):
        n, m = ctx.s.total, ctx.t.total
        return _ratio(hs * ht, np.sqrt(n * ps * m * pt))

    def complement(self, ctx, count):
        # sum over every key of the base term, factorized per position over the
        # symbols with ps*pt > 0 (keys with a zero denominator are skipped)
        n, m = ctx.s.total, ctx.t.total
        if n <= 0 or m <= 0:
            return self.identity()
        bs, bt = ctx.s.background, ctx.t.background
        ok = (bs * bt) > 0
        if not ok.any():
            return self.identity()
        bs, bt, k = bs[ok], bt[ok], ctx.k
        xs, xt = ctx.s.missing, ctx.t.missing
        root = math.sqrt(n * m)
        total = root * np.sum(np.sqrt(bs * bt)) ** k
        if xs:
            total -= xs * math.sqrt(m / n) * np.sum(np.sqrt(bt / bs)) ** k
        if xt:
            total -= xt * math.sqrt(n / m) * np.sum(np.sqrt(bs / bt)) ** k
        if xs and xt:
            total += xs * xt / root * np.sum(1.0 / np.sqrt(bs * bt)) ** k
        return np.atleast_1d(float(total))


# intersection family ---------------------------------------------------------------

class Intersection(Evaluator):
    name = "intersection"
    orientation = "similarity"

    def partial(self, a, b, ctx, keys=None, pa=None, pb=None):
        return _ratio(2.0 * np.minimum(a, b), a + b)


class Kulczynski2(Evaluator):
    name = "kulczynski2"
    orientation = "similarity"

    def partial(self, a, b, ctx, keys=None, pa=None, pb=None):
        return np.minimum(a, b)

    def finalize(self, acc, ctx):
        size = ctx.size
        mu_s, mu_t = ctx.s.total / size, ctx.t.total / size
        if mu_s == 0 or mu_t == 0:
            raise ZeroMean("kulczynski2: a histogram has zero mean")
        spread = (mu_s - mu_t) if self.options.get("literal_kulczynski") else (mu_s + mu_t)
        return float(size * spread / (2 * mu_s * mu_t) * acc[0])


# inner product family ----------------------------------------------------------------

class HarmonicMean(Evaluator):
    name = "harmonic_mean"
    orientation = "similarity"

    def partial(self, a, b, ctx, keys=None, pa=None, pb=None):
        return _ratio(a * b, a + b)

    def finalize(self, acc, ctx):
        return 2.0 * float(acc[0])


def _nonnegative(name, *arrays):
    for arr in arrays:
        if np.any(np.asarray(arr) < 0):
            raise NegativeInput(f"{name} needs non-negative values (use raw or frequency statistics)")


class SquaredChord(Evaluator):
    name = "squared_chord"

    def partial(self, a, b, ctx, keys=None, pa=None, pb=None):
        _nonnegative(self.name, a, b)
        d = np.sqrt(a) - np.sqrt(b)
        return d * d


# divergence family -------------------------------------------------------------------

class _Divergence(Evaluator):
    smooth = False

    def _probs(self, v, st: SampleStats, size: int):
        literal = bool(self.options.get("literal_probabilities"))
        if self.smooth:
            eps = 1.0 / (st.total + size)
            norm = size if literal else st.total + size * eps
            return (v + eps) / norm
        norm = size if literal else st.total
        if norm <= 0:
            raise ZeroMean(f"{self.name}: empty histogram")
        return v / norm

    def partial(self, a, b, ctx, keys=None, pa=None, pb=None):
        _nonnegative(self.name, a, b)
        return self.term(self._probs(a, ctx.s, ctx.size), self._probs(b, ctx.t, ctx.size))


class Jeffrey(_Divergence):
    name = "jeffrey"
    smooth = True

    def term(self, p, q):
        return (p - q) * np.log(p / q)


def _xlog2(x, ref):
    out = np.zeros(np.broadcast(x, ref).shape)
    ok = x > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        np.multiply(x, np.log2(x / np.where(ok, ref, 1.0)), out=out, where=ok)
    return out


class JensenShannon(_Divergence):
    name = "jsd"

    def term(self, p, q):
        mid = 0.5 * (p + q)
        return 0.5 * _xlog2(p, mid) + 0.5 * _xlog2(q, mid)


# spaced words ----------------------------------------------------------------------

class FSWM(Evaluator):
    """Accumulator is (kept match pairs, mismatching don't-care characters)."""
    name = "fswm"
    statistic = "spacedword"
    width = 2

    def complement(self, ctx, count):
        return self.identity()

    def finalize(self, acc, ctx):
        dontcares = int(ctx.options.get("dontcare_count", 1))
        return jukes_cantor(float(acc[1]), float(acc[0]) * dontcares)


def jukes_cantor(mismatches: float, total: float) -> float:
    if total <= 0:
        warnings.warn("fswm: no spaced-word matches survive the filter", NoMatches, stacklevel=2)
        return math.nan
    p = mismatches / total
    if p >= 0.75:
        warnings.warn(f"fswm: mismatch rate {p:.3f} saturates Jukes-Cantor", SaturatedDistance,
                      stacklevel=2)
        return math.inf
    return 0.0 - 0.75 * math.log(1.0 - 4.0 * p / 3.0)


# registry ----------------------------------------------------------------------------

EVALUATORS: dict[str, type[Evaluator]] = {
    cls.name: cls for cls in (
        Euclidean, Manhattan, Chebyshev, Jaccard, Mash, MashJaccard, ChiSquare, Canberra,
        D2, D2Z, D2S, D2Star, Intersection, Kulczynski2, HarmonicMean, SquaredChord,
        Jeffrey, JensenShannon, FSWM,
    )
}

_ALIASES = {
    "euclidean": "euclidean", "manhattan": "manhattan", "chebyshev": "chebyshev",
    "jaccard": "jaccard", "mash": "mash", "minhash": "mash", "mashjaccard": "mash_jaccard",
    "chi2": "chi2", "chisquare": "chi2", "chisquared": "chi2", "canberra": "canberra",
    "d2": "d2", "d2z": "d2z", "d2s": "d2s", "d2star": "d2star", "d2*": "d2star",
    "intersection": "intersection", "czekanowski": "intersection",
    "kulczynski2": "kulczynski2", "harmonicmean": "harmonic_mean", "squaredchord": "squared_chord",
    "jeffrey": "jeffrey", "jsd": "jsd", "jensenshannon": "jsd", "fswm": "fswm",
}

HISTOGRAM_FUNCTIONS = tuple(n for n, c in EVALUATORS.items() if c.statistic == "kmer")


def resolve_name(name: str) -> str:
    """Map a short name or a dotted class name (``fade.affunction.Euclidean``) to a registry id."""
    raw = name.strip()
    if raw in EVALUATORS:
        return raw
    last = raw.rsplit(".", 1)[-1].lower().replace("_", "").replace("-", "")
    try:
        return _ALIASES[last]
    except KeyError:
        raise ConfigError(f"unknown AF function {name!r}") from None


def get_evaluator(name: str, **options) -> Evaluator:
    return EVALUATORS[resolve_name(name)](**options)


# direct pairwise evaluation ------------------------------------------------------------

def _as_sparse(h) -> tuple[dict[int, float], float, int | None]:
    if hasattr(h, "values") and hasattr(h, "missing"):
        return dict(h.values), float(h.missing), h.k
    if hasattr(h, "counts"):
        return dict(h.counts), 0.0, h.k
    return dict(h), 0.0, None


def evaluate_histograms(name: str, h_s, h_t, k: int | None = None, background_s=None,
                        background_t=None, **options) -> float:
    """Evaluate one histogram AF function on a pair outside the engine."""
    ev = get_evaluator(name, **options)
    if ev.statistic != "kmer":
        raise ConfigError(f"{ev.name} does not take histograms")
    vs, ms, ks = _as_sparse(h_s)
    vt, mt, kt = _as_sparse(h_t)
    k = k or ks or kt
    if k is None:
        raise ValueError("k is required for plain mappings")
    size = 4 ** k
    vs = {c: v for c, v in vs.items() if v != 0 or ms != 0}
    vt = {c: v for c, v in vt.items() if v != 0 or mt != 0}
    st_s = SampleStats.from_values(np.fromiter(vs.values(), float, len(vs)), size, ms, background_s)
    st_t = SampleStats.from_values(np.fromiter(vt.values(), float, len(vt)), size, mt, background_t)
    ctx = PairContext(k, st_s, st_t, dict(options))
    keys = np.array(sorted(set(vs) | set(vt)), dtype=np.uint64)
    a = np.array([vs.get(int(c), ms) for c in keys], dtype=float)
    b = np.array([vt.get(int(c), mt) for c in keys], dtype=float)
    pa = np.array([int(c) in vs for c in keys], dtype=bool)
    pb = np.array([int(c) in vt for c in keys], dtype=bool)
    acc = ev.reduce(ev.partial(a, b, ctx, keys, pa, pb))
    acc = ev.combine(acc, ev.complement(ctx, size - keys.size))
    return ev.finalize(acc, ctx)


def minkowski_family(variant: str, h_s, h_t, k: int | None = None) -> float:
    return evaluate_histograms(variant, h_s, h_t, k)


def chi2_canberra(variant: str, h_s, h_t, k: int | None = None) -> float:
    return evaluate_histograms(variant, h_s, h_t, k)


def d2_family(variant: str, h_s, h_t, k: int | None = None, background_s=None,
              background_t=None) -> float:
    return evaluate_histograms(variant, h_s, h_t, k, background_s, background_t)


def intersection_family(variant: str, h_s, h_t, k: int | None = None, **options) -> float:
    return evaluate_histograms(variant, h_s, h_t, k, **options)


def inner_product_family(variant: str, h_s, h_t, k: int | None = None) -> float:
    return evaluate_histograms(variant, h_s, h_t, k)


def divergence_family(variant: str, h_s, h_t, k: int | None = None, **options) -> float:
    return evaluate_histograms(variant, h_s, h_t, k, **options)


def match_family(variant: str, a, b, k: int | None = None):
    """``jaccard_exact`` on histograms gives a similarity; ``mash`` on Sketches gives (j, distance)."""
    if variant in ("jaccard", "jaccard_exact"):
        return evaluate_histograms("jaccard", a, b, k)
    if variant == "mash":
        if (a.k, a.s, a.seed) != (b.k, b.s, b.seed):
            raise ConfigError("sketches differ in k, size or seed")
        ev = MashJaccard()
        acc = ev.partial(a.hashes, b.hashes, PairContext(a.k, None, None, {"sketch_size": a.s}))[0]
        j = ev.jaccard(acc)
        return j, mash_distance(j, a.k)
    raise ValueError(f"unknown match variant {variant!r}")


def fswm_counts(idx_s: Mapping[int, list], idx_t: Mapping[int, list], scores=CHIAROMONTE,
                threshold: int = 0) -> tuple[int, int, int]:
    """(kept pairs, mismatches, don't-care characters) over all cross pairs of shared keys."""
    from afkit import _pycore
    scores = np.asarray(scores, dtype=np.int64)
    kept = mm = 0
    width = 0
    for key in sorted(set(idx_s) & set(idx_t)):
        a = np.array([list(x) for x in idx_s[key]], dtype=np.uint8)
        b = np.array([list(x) for x in idx_t[key]], dtype=np.uint8)
        width = a.shape[1]
        kp, mi = _pycore.score_pairs(a, b, scores, threshold)
        kept += kp
        mm += mi
    return kept, mm, kept * width


def fswm_distance(idx_s: Mapping[int, list], idx_t: Mapping[int, list], scores=CHIAROMONTE,
                  threshold: int = 0) -> float:
    """FSWM between two spaced-word indexes (key -> list of don't-care code tuples)."""
    _, mm, delta = fswm_counts(idx_s, idx_t, scores, threshold)
    return jukes_cantor(mm, delta)


def spaced_word_index(records) -> dict[int, list[bytes]]:
    idx: dict[int, list[bytes]] = {}
    for r in records:
        idx.setdefault(r.key, []).append(r.dontcare)
    return idx


def load_score_matrix(path: str) -> np.ndarray:
    """Read a 5x5 (or 4x4) whitespace-separated score table with a header row of symbols."""
    with open(path) as fh:
        rows = [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    header = [h.upper() for h in rows[0]]
    order = {s: i for i, s in enumerate("ACGT")}
    mat = CHIAROMONTE.copy()
    wildcard = None
    for row in rows[1:]:
        sym = row[0].upper()
        vals = [int(v) for v in row[1:]]
        for col, v in zip(header, vals):
            i = order.get(sym, 4)
            j = order.get(col, 4)
            mat[i, j] = v
            if i == 4 or j == 4:
                wildcard = v if wildcard is None else min(wildcard, v)
    if "N" not in header and all(r[0].upper() in order for r in rows[1:]):
        low = int(mat[:4, :4].min())
        mat[4, :] = low
        mat[:, 4] = low
    return mat
