"""Pure numpy implementations of the hot kernels.

These are the reference versions; ``_core.pyx`` must agree with them
bit for bit. Used when the compiled extension is unavailable or when
``AFKIT_PURE=1`` is set.
"""

from __future__ import annotations

import numpy as np

CODE = np.full(256, 4, dtype=np.uint8)
for _i, _c in enumerate("ACGT"):
    CODE[ord(_c)] = _i
    CODE[ord(_c.lower())] = _i


def kmer_codes(seq: bytes, k: int, skip: int = 0) -> tuple[np.ndarray, int]:
    """2-bit codes of every all-ACGT window of length ``k`` starting at ``skip`` or later.

    Returns the codes in window order and the number of windows rejected
    because they hold a non-ACGT symbol.
    """
    if not 1 <= k <= 32:
        raise ValueError("k must be in [1, 32]")
    arr = np.frombuffer(seq, dtype=np.uint8)
    nwin = arr.size - k + 1
    if nwin <= skip:
        return np.empty(0, dtype=np.uint64), 0
    sym = CODE[arr]
    bad = np.concatenate(([0], np.cumsum(sym > 3)))
    starts = np.arange(skip, nwin)
    ok = (bad[starts + k] - bad[starts]) == 0
    sym64 = (sym & 3).astype(np.uint64)
    m = nwin - skip
    codes = np.zeros(m, dtype=np.uint64)
    two = np.uint64(2)
    for j in range(k):
        codes <<= two
        codes |= sym64[skip + j: skip + j + m]
    return codes[ok], int(m - np.count_nonzero(ok))


def spaced_words(seq: bytes, match_idx: np.ndarray, dc_idx: np.ndarray,
                 length: int, skip: int = 0) -> tuple[np.ndarray, np.ndarray]:
    arr = np.frombuffer(seq, dtype=np.uint8)
    nwin = arr.size - length + 1
    ndc = len(dc_idx)
    if nwin <= skip:
        return np.empty(0, dtype=np.uint64), np.empty((0, ndc), dtype=np.uint8)
    sym = CODE[arr]
    starts = np.arange(skip, nwin)
    matched = sym[starts[:, None] + np.asarray(match_idx)[None, :]]
    ok = np.all(matched < 4, axis=1)
    matched = matched[ok].astype(np.uint64)
    keys = np.zeros(matched.shape[0], dtype=np.uint64)
    two = np.uint64(2)
    for j in range(matched.shape[1]):
        keys <<= two
        keys |= matched[:, j]
    dcs = sym[starts[ok][:, None] + np.asarray(dc_idx)[None, :]]
    return keys, np.ascontiguousarray(dcs, dtype=np.uint8)


def score_pairs(dc_a: np.ndarray, dc_b: np.ndarray, scores: np.ndarray,
                threshold: int) -> tuple[int, int]:
    """Kept-pair count and mismatch total over all cross pairs of two occurrence lists."""
    kept = 0
    mism = 0
    # bound the (a, b, D) temporary
    step = max(1, 2_000_000 // max(1, dc_b.shape[0] * max(1, dc_b.shape[1])))
    for lo in range(0, dc_a.shape[0], step):
        a = dc_a[lo:lo + step, None, :]
        b = dc_b[None, :, :]
        sc = scores[a, b].sum(axis=2)
        mis = ((a != b) | (a > 3)).sum(axis=2)
        keep = sc >= threshold
        kept += int(np.count_nonzero(keep))
        mism += int(mis[keep].sum())
    return kept, mism


def fswm_accumulate(group_starts: np.ndarray, active: np.ndarray, samples: np.ndarray,
                    dcs: np.ndarray, n: int, scores: np.ndarray,
                    threshold: int) -> tuple[np.ndarray, np.ndarray]:
    """Per sample pair, kept-match counts and don't-care mismatches over active key groups.

    Rows of one group are contiguous and sorted by sample. Only the upper
    triangle (i < j) is filled.
    """
    kept = np.zeros((n, n), dtype=np.int64)
    mm = np.zeros((n, n), dtype=np.int64)
    for g in np.flatnonzero(active):
        lo, hi = int(group_starts[g]), int(group_starts[g + 1])
        smp = samples[lo:hi]
        cut = np.flatnonzero(np.diff(smp)) + 1
        bounds = np.concatenate(([0], cut, [hi - lo])) + lo
        owners = smp[bounds[:-1] - lo]
        for a in range(len(owners)):
            for b in range(a + 1, len(owners)):
                kp, mi = score_pairs(dcs[bounds[a]:bounds[a + 1]], dcs[bounds[b]:bounds[b + 1]],
                                     scores, threshold)
                kept[owners[a], owners[b]] += kp
                mm[owners[a], owners[b]] += mi
    return kept, mm
