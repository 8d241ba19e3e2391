"""Statistic extraction, filtering, aggregation and normalization.

Record-at-a-time functions (``extract_kmers``, ``aggregate``, ...) define
the semantics; the engine uses the columnar helpers at the bottom of this
module, which operate on numpy arrays of keys, sample ids and values.
"""

from __future__ import annotations

import operator
import re
import warnings
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

import numpy as np

from afkit import kernels
from afkit.errors import (DegenerateVariance, InvalidPredicate, MixedKinds, SketchUnderfull,
                          ZeroMean)
from afkit.seqio import Chunk, Sample, window_skip

ALPHABET = "ACGT"
_SYM = {c: i for i, c in enumerate(ALPHABET)}
BIN_SEED = 0x5EED_B1


def encode(word: str) -> int:
    code = 0
    for ch in word:
        code = (code << 2) | _SYM[ch]
    return code


def decode(code: int, k: int) -> str:
    out = []
    for _ in range(k):
        out.append(ALPHABET[code & 3])
        code >>= 2
    return "".join(reversed(out))


def decode_many(codes: np.ndarray, k: int) -> list[str]:
    letters = np.frombuffer(b"ACGT", dtype=np.uint8)
    codes = np.asarray(codes, dtype=np.uint64)
    mat = np.empty((codes.size, k), dtype=np.uint8)
    x = codes.copy()
    for j in range(k - 1, -1, -1):
        mat[:, j] = letters[(x & np.uint64(3)).astype(np.intp)]
        x >>= np.uint64(2)
    return [row.tobytes().decode("ascii") for row in mat]


@dataclass
class KmerHistogram:
    sample_id: int
    k: int
    counts: dict[int, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @classmethod
    def from_sample(cls, sample: Sample, k: int) -> "KmerHistogram":
        counts: dict[int, int] = {}
        for frag in sample.fragments:
            codes, _ = kernels.kmer_codes(frag.encode("ascii"), k)
            uniq, cnt = np.unique(codes, return_counts=True)
            for c, n in zip(uniq.tolist(), cnt.tolist()):
                counts[c] = counts.get(c, 0) + n
        return cls(sample.sample_id, k, counts)


@dataclass
class Sketch:
    sample_id: int
    k: int
    s: int
    seed: int
    hashes: np.ndarray

    def __len__(self) -> int:
        return int(self.hashes.size)


@dataclass(frozen=True)
class SpacedPattern:
    bits: str

    def __post_init__(self):
        if not self.bits or set(self.bits) - {"0", "1"}:
            raise ValueError(f"pattern must be a non-empty 0/1 string, got {self.bits!r}")
        if self.bits[0] != "1":
            raise ValueError("pattern must start with a match position")
        if self.weight > 32:
            raise ValueError("pattern weight must be <= 32")

    @property
    def weight(self) -> int:
        return self.bits.count("1")

    @property
    def length(self) -> int:
        return len(self.bits)

    @property
    def match_positions(self) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.bits) if b == "1"], dtype=np.int64)

    @property
    def dontcare_positions(self) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.bits) if b == "0"], dtype=np.int64)


@dataclass(frozen=True)
class SpacedWordRecord:
    sample_id: int
    key: int
    dontcare: bytes


@dataclass(frozen=True)
class PartialRecord:
    key: Any
    sample_id: int
    value: Any


# extraction ------------------------------------------------------------------

def extract_kmers(chunk: Chunk, k: int, keep_invalid: bool = False) -> Iterator[PartialRecord]:
    """One unit record per k-window of the chunk.

    Windows holding a non-ACGT symbol are dropped, or emitted keyed by their
    raw text when ``keep_invalid`` is set so a feature filter can see them.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    skip = window_skip(chunk, k)
    if not keep_invalid:
        codes, _ = kernels.kmer_codes(chunk.body, k, skip)
        for c in codes.tolist():
            yield PartialRecord(c, chunk.sample_id, 1)
        return
    text = chunk.body.decode("ascii")
    for i in range(skip, len(text) - k + 1):
        word = text[i:i + k]
        if all(ch in _SYM for ch in word):
            yield PartialRecord(encode(word), chunk.sample_id, 1)
        else:
            yield PartialRecord(word, chunk.sample_id, 1)


def sketch_codes(codes: np.ndarray, k: int, s: int, seed: int, canonical: bool = True) -> np.ndarray:
    """Bottom-``s`` distinct hashes of a code array, sorted ascending."""
    if canonical:
        codes = kernels.canonical_codes(codes, k)
    h = np.unique(kernels.hash64(codes, seed))
    return h[:s]


def extract_minhash(sample: Sample, k: int, s: int, seed: int = 42,
                    canonical: bool = True) -> Sketch:
    if s < 1:
        raise ValueError("sketch size must be >= 1")
    parts = [kernels.kmer_codes(f.encode("ascii"), k)[0] for f in sample.fragments]
    codes = np.concatenate(parts) if parts else np.empty(0, dtype=np.uint64)
    hashes = sketch_codes(codes, k, s, seed, canonical)
    if hashes.size < s:
        warnings.warn(f"sample {sample.name!r}: only {hashes.size} distinct hashes for sketch size {s}",
                      SketchUnderfull, stacklevel=2)
    return Sketch(sample.sample_id, k, s, seed, hashes)


def merge_sketches(a: np.ndarray, b: np.ndarray, s: int) -> np.ndarray:
    return np.union1d(a, b)[:s]


def extract_spaced_words(chunk: Chunk, pattern: SpacedPattern) -> Iterator[SpacedWordRecord]:
    keys, dcs = spaced_columns(chunk, pattern)
    for key, dc in zip(keys.tolist(), dcs):
        yield SpacedWordRecord(chunk.sample_id, key, dc.tobytes())


def spaced_columns(chunk: Chunk, pattern: SpacedPattern) -> tuple[np.ndarray, np.ndarray]:
    return kernels.spaced_words(chunk.body, pattern.match_positions, pattern.dontcare_positions,
                                pattern.length, window_skip(chunk, pattern.length))


# aggregation -----------------------------------------------------------------

def _kind(value: Any) -> str:
    if isinstance(value, (int, np.integer, float, np.floating)):
        return "count"
    if isinstance(value, np.ndarray) and value.dtype == np.uint64:
        return "sketch"
    if isinstance(value, list):
        return "occurrences"
    raise MixedKinds(f"unsupported payload {type(value).__name__}")


def aggregate(records: Sequence[PartialRecord], sketch_size: int | None = None) -> Any:
    """Combine the payloads of one (key, sample) group."""
    if not records:
        raise ValueError("empty group")
    kinds = {_kind(r.value) for r in records}
    if len(kinds) != 1:
        raise MixedKinds(f"payload kinds disagree: {sorted(kinds)}")
    kind = kinds.pop()
    if kind == "count":
        return sum(r.value for r in records)
    if kind == "occurrences":
        out: list = []
        for r in records:
            out.extend(r.value)
        return out
    s = sketch_size or max(r.value.size for r in records)
    acc = records[0].value[:s]
    for r in records[1:]:
        acc = merge_sketches(acc, r.value, s)
    return acc


# filters ---------------------------------------------------------------------

class FeatureFilter:
    """Regex predicate over decoded key text.

    Keys with non-ACGT symbols are always dropped (the default Stage-2 rule);
    ``include`` keeps only matching keys, ``exclude`` drops matching keys.
    """

    def __init__(self, include: str | None = None, exclude: str | None = None):
        try:
            self.include = re.compile(include) if include else None
            self.exclude = re.compile(exclude) if exclude else None
        except re.error as exc:
            raise InvalidPredicate(f"bad filter pattern: {exc}") from exc

    @property
    def active(self) -> bool:
        return self.include is not None or self.exclude is not None

    def keep(self, text: str) -> bool:
        if any(ch not in _SYM for ch in text):
            return False
        if self.include is not None and not self.include.search(text):
            return False
        if self.exclude is not None and self.exclude.search(text):
            return False
        return True

    def mask(self, codes: np.ndarray, k: int) -> np.ndarray:
        if not self.active or codes.size == 0:
            return np.ones(codes.size, dtype=bool)
        uniq, inv = np.unique(codes, return_inverse=True)
        ok = np.fromiter((self.keep(t) for t in decode_many(uniq, k)), dtype=bool, count=uniq.size)
        return ok[inv]


def feature_filter(record: PartialRecord, flt: FeatureFilter | None, k: int | None = None) -> bool:
    if flt is None:
        flt = FeatureFilter()
    key = record.key
    text = key if isinstance(key, str) else decode(int(key), k or 0)
    return flt.keep(text)


_OPS = {">=": operator.ge, "<=": operator.le, ">": operator.gt, "<": operator.lt,
        "==": operator.eq, "=": operator.eq}
_COND = re.compile(r"^\s*(>=|<=|==|>|<|=)\s*([-+0-9.eE]+)\s*$")


@dataclass(frozen=True)
class ValueCondition:
    op: str
    threshold: float

    @classmethod
    def parse(cls, text: str) -> "ValueCondition":
        m = _COND.match(text)
        if not m:
            raise InvalidPredicate(f"bad value condition {text!r}")
        return cls(m.group(1), float(m.group(2)))

    def __call__(self, values):
        return _OPS[self.op](values, self.threshold)


def value_filter(entry: tuple[Any, int, float], condition: ValueCondition | None) -> bool:
    if condition is None:
        return True
    return bool(condition(entry[2]))


# normalization ---------------------------------------------------------------

@dataclass
class NormalizedHistogram:
    """Sparse values plus the value every absent key takes."""
    k: int
    values: dict[int, float]
    missing: float = 0.0

    def dense(self) -> np.ndarray:
        out = np.full(4 ** self.k, self.missing, dtype=float)
        for c, v in self.values.items():
            out[c] = v
        return out


def dense_moments(total: float, sumsq: float, size: int) -> tuple[float, float]:
    mean = total / size
    var = sumsq / size - mean * mean
    return mean, max(var, 0.0) ** 0.5


def normalize(hist: KmerHistogram, mode: str = "none") -> NormalizedHistogram:
    if mode == "none":
        return NormalizedHistogram(hist.k, {c: float(v) for c, v in hist.counts.items()}, 0.0)
    total = hist.total
    if mode == "frequency":
        if total <= 0:
            raise ZeroMean("frequency normalization of an empty histogram")
        return NormalizedHistogram(hist.k, {c: v / total for c, v in hist.counts.items()}, 0.0)
    if mode == "zscore":
        size = 4 ** hist.k
        sumsq = float(sum(v * v for v in hist.counts.values()))
        mu, sigma = dense_moments(float(total), sumsq, size)
        if sigma == 0.0:
            warnings.warn("all dense entries equal; z-scores set to 0", DegenerateVariance, stacklevel=2)
            return NormalizedHistogram(hist.k, {c: 0.0 for c in hist.counts}, 0.0)
        return NormalizedHistogram(hist.k, {c: (v - mu) / sigma for c, v in hist.counts.items()},
                                   -mu / sigma)
    raise ValueError(f"unknown normalization {mode!r}")


# partitioning ----------------------------------------------------------------

def assign_bin(key: int, bins: int) -> int:
    if bins < 1:
        raise ValueError("bins must be >= 1")
    return kernels.hash64_scalar(int(key), BIN_SEED) % bins


def assign_bins(keys: np.ndarray, bins: int) -> np.ndarray:
    if bins == 1:
        return np.zeros(np.asarray(keys).size, dtype=np.int64)
    return (kernels.hash64(keys, BIN_SEED) % np.uint64(bins)).astype(np.int64)


# columnar aggregation --------------------------------------------------------

def aggregate_columns(keys: np.ndarray, samples: np.ndarray,
                      values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sum values per (key, sample); output sorted by key then sample."""
    if keys.size == 0:
        return keys, samples, values
    order = np.lexsort((samples, keys))
    k, s, v = keys[order], samples[order], values[order]
    new = np.empty(k.size, dtype=bool)
    new[0] = True
    new[1:] = (k[1:] != k[:-1]) | (s[1:] != s[:-1])
    starts = np.flatnonzero(new)
    return k[starts], s[starts], np.add.reduceat(v, starts)
