"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--length N] [--repeat R] [--pipeline]

Kernel timings call both backends directly in this process. ``--pipeline``
also times one end-to-end run per backend in a subprocess, since the
backend is chosen at import time from AFKIT_PURE.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from afkit import _pycore
from afkit.affuncs import CHIAROMONTE

try:
    from afkit import _core
except ImportError:  # pragma: no cover
    _core = None


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def fswm_inputs(rng, groups: int, n: int, dc: int):
    samples, starts = [], [0]
    for _ in range(groups):
        size = int(rng.integers(2, 12))
        samples += sorted(rng.integers(0, n, size).tolist())
        starts.append(len(samples))
    return (np.array(starts, dtype=np.int64), np.ones(groups, dtype=np.uint8),
            np.array(samples, dtype=np.int32), rng.integers(0, 4, (len(samples), dc)).astype(np.uint8))


PIPELINE = """
import time, numpy as np
from afkit import kernels
from afkit.engine import PipelineConfig, run_pipeline
from afkit.seqio import Dataset
rng = np.random.default_rng(0)
ds = Dataset.from_sequences(["".join(rng.choice(list("ACGT"), {length})) for _ in range(4)])
t0 = time.perf_counter()
run_pipeline(ds, PipelineConfig(k=11, evaluators=["euclidean", "d2"]))
a = time.perf_counter() - t0
t0 = time.perf_counter()
run_pipeline(ds, PipelineConfig(statistic="spacedword", pattern="1101000110101", evaluators=["fswm"]))
print(kernels.BACKEND, a, time.perf_counter() - t0)
"""


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--length", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--pipeline", action="store_true")
    args = ap.parse_args()
    if _core is None:
        sys.exit("compiled extension not built; run pip install -e . --no-build-isolation")

    rng = np.random.default_rng(1)
    seq = bytes(rng.choice(np.frombuffer(b"ACGTN", np.uint8), args.length, p=[.2475] * 4 + [.01]))
    match = np.array([0, 1, 3, 7, 8, 10, 12], dtype=np.int64)
    dc = np.array([2, 4, 5, 6, 9, 11], dtype=np.int64)
    fsw = fswm_inputs(rng, 20_000, 8, 6)

    cases = [
        ("kmer_codes k=11", lambda m: m.kmer_codes(seq, 11, 0)),
        ("kmer_codes k=31", lambda m: m.kmer_codes(seq, 31, 0)),
        ("spaced_words w=7 L=13", lambda m: m.spaced_words(seq, match, dc, 13, 0)),
        ("fswm_accumulate 20k groups", lambda m: m.fswm_accumulate(*fsw[:4], 8, CHIAROMONTE, 0)),
    ]
    print(f"{'kernel':<28}{'cython s':>12}{'python s':>12}{'speedup':>10}")
    for name, call in cases:
        tc = best_of(lambda: call(_core), args.repeat)
        tp = best_of(lambda: call(_pycore), args.repeat)
        print(f"{name:<28}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.1f}")

    if args.pipeline:
        code = PIPELINE.format(length=args.length // 4)
        for pure in ("0", "1"):
            env = dict(os.environ, AFKIT_PURE=pure)
            out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                                 check=True).stdout.split()
            print(f"pipeline [{out[0]}]: kmer {float(out[1]):.2f}s, spaced words {float(out[2]):.2f}s")


if __name__ == "__main__":
    main()
