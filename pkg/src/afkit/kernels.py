"""Backend selection for the hot kernels, plus the vectorized hashing helpers.

The compiled ``_core`` extension is used when importable; set
``AFKIT_PURE=1`` to force the numpy fallback in ``_pycore``.
"""

from __future__ import annotations

import os

import numpy as np

from afkit import _pycore

if os.environ.get("AFKIT_PURE", "") not in ("", "0"):
    _impl = _pycore
    BACKEND = "python"
else:
    try:
        from afkit import _core as _impl  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _pycore
        BACKEND = "python"

CODE = _pycore.CODE
MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def kmer_codes(seq: bytes, k: int, skip: int = 0) -> tuple[np.ndarray, int]:
    return _impl.kmer_codes(seq, k, skip)


def spaced_words(seq: bytes, match_idx: np.ndarray, dc_idx: np.ndarray,
                 length: int, skip: int = 0) -> tuple[np.ndarray, np.ndarray]:
    return _impl.spaced_words(seq, np.ascontiguousarray(match_idx, dtype=np.int64),
                              np.ascontiguousarray(dc_idx, dtype=np.int64), length, skip)


def fswm_accumulate(group_starts, active, samples, dcs, n, scores, threshold):
    return _impl.fswm_accumulate(
        np.ascontiguousarray(group_starts, dtype=np.int64),
        np.ascontiguousarray(active, dtype=np.uint8),
        np.ascontiguousarray(samples, dtype=np.int32),
        np.ascontiguousarray(dcs, dtype=np.uint8),
        int(n),
        np.ascontiguousarray(scores, dtype=np.int64),
        int(threshold),
    )


def hash64(values: np.ndarray, seed: int) -> np.ndarray:
    """Seeded SplitMix64 finalizer over unsigned 64-bit inputs.

    ``x = v + seed * 0x9E3779B97F4A7C15 (mod 2**64)`` followed by the
    SplitMix64 mixing steps (shifts 30/27/31, multipliers
    0xBF58476D1CE4E5B9 and 0x94D049BB133111EB). The map is a bijection
    on 64-bit integers, so distinct k-mer codes never collide.
    """
    x = np.array(values, dtype=np.uint64, copy=True)
    x += np.uint64((seed * _GOLDEN) & MASK64)
    x ^= x >> np.uint64(30)
    x *= _MIX1
    x ^= x >> np.uint64(27)
    x *= _MIX2
    x ^= x >> np.uint64(31)
    return x


def hash64_scalar(value: int, seed: int) -> int:
    x = (value + seed * _GOLDEN) & MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & MASK64
    x ^= x >> 31
    return x


def reverse_complement_codes(codes: np.ndarray, k: int) -> np.ndarray:
    mask = np.uint64((1 << (2 * k)) - 1) if k < 32 else np.uint64(MASK64)
    x = ~np.asarray(codes, dtype=np.uint64) & mask
    out = np.zeros_like(x)
    two, three = np.uint64(2), np.uint64(3)
    for _ in range(k):
        out = (out << two) | (x & three)
        x = x >> two
    return out


def canonical_codes(codes: np.ndarray, k: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.uint64)
    return np.minimum(codes, reverse_complement_codes(codes, k))


def residue_counts(seq: bytes) -> np.ndarray:
    """Counts of A, C, G, T and everything else."""
    return np.bincount(CODE[np.frombuffer(seq, dtype=np.uint8)], minlength=5)[:5].astype(np.int64)
