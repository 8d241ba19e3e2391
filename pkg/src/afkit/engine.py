"""Five-stage pipeline over an in-process worker pool.

Stage 1 extracts statistics from chunks, stage 2 filters features, stage 3
aggregates per (key, sample), stage 4 filters values and normalizes, stage 5
evaluates AF functions. Three placement strategies decide how aggregated
statistics are grouped into work units between stages 2 and 5:

* ``total``   a single unit, run on one worker;
* ``none``    keys hashed into a fixed number of shuffle partitions, each key
              reduced on its own;
* ``partial`` keys hashed into ``bins`` bins, each bin aggregated and
              evaluated as a whole.

Per-pair accumulators from the units are folded in unit order, so results
do not depend on how many workers ran them.
"""

from __future__ import annotations

import logging
import math
import threading
import warnings
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from afkit import affuncs, kernels
from afkit.affuncs import CHIAROMONTE, PairContext, SampleStats
from afkit.errors import (ConfigError, DegenerateVariance, EvaluatorStatisticMismatch, SketchUnderfull,
                          MemoryBudgetExceeded, ZeroMean)
from afkit.seqio import Chunk, Dataset, chunk_dataset, window_skip
from afkit.stats import (FeatureFilter, SpacedPattern, ValueCondition, aggregate_columns,
                         assign_bins, sketch_codes)

log = logging.getLogger(__name__)

SHUFFLE_PARTITIONS = 64
FSWM_PAIR_CAP = 10 ** 6

_VARIANTS = {
    "total": "total", "totalaggregation": "total", "total_aggregation": "total",
    "none": "none", "no": "none", "noaggregation": "none", "no_aggregation": "none",
    "partial": "partial", "partialaggregation": "partial", "partial_aggregation": "partial",
}


@dataclass(frozen=True)
class Strategy:
    variant: str = "partial"
    bins: int | None = None

    def __post_init__(self):
        v = _VARIANTS.get(self.variant.strip().lower().replace("-", "_"))
        if v is None:
            raise ConfigError(f"unknown strategy {self.variant!r}")
        object.__setattr__(self, "variant", v)
        if self.bins is not None and self.bins < 1:
            raise ConfigError("bins must be >= 1")

    @classmethod
    def parse(cls, text: str, bins: int | None = None) -> "Strategy":
        return cls(text, bins)

    def units(self, workers: int, shuffle_partitions: int = SHUFFLE_PARTITIONS) -> int:
        if self.variant == "total":
            return 1
        if self.variant == "none":
            return shuffle_partitions
        return self.bins or 16 * workers


@dataclass
class PipelineConfig:
    statistic: str = "kmer"
    k: int | None = None
    pattern: SpacedPattern | str | None = None
    evaluators: Sequence[str] = ("euclidean",)
    strategy: Strategy = field(default_factory=Strategy)
    slices: int = 64
    workers: int = 1
    feature_filter: FeatureFilter | None = None
    value_condition: ValueCondition | None = None
    normalization: str = "none"
    seed: int = 42
    sketch_size: int = 1000
    canonical: bool = True
    threshold: int = 0
    scores: np.ndarray = field(default_factory=lambda: CHIAROMONTE.copy())
    options: dict[str, Any] = field(default_factory=dict)
    shuffle_partitions: int = SHUFFLE_PARTITIONS
    memory_budget: int | None = None
    fswm_pair_cap: int = FSWM_PAIR_CAP

    def __post_init__(self):
        if isinstance(self.strategy, str):
            self.strategy = Strategy(self.strategy)
        if isinstance(self.evaluators, str):
            self.evaluators = [e for e in self.evaluators.split(",") if e.strip()]
        if isinstance(self.pattern, str):
            self.pattern = SpacedPattern(self.pattern)
        if self.statistic == "spacedword" and self.pattern is not None and self.k is None:
            self.k = self.pattern.weight

    def validate(self) -> list[affuncs.Evaluator]:
        if not self.evaluators:
            raise ConfigError("at least one evaluator is required")
        if self.statistic not in ("kmer", "minhash", "spacedword"):
            raise ConfigError(f"unknown statistic {self.statistic!r}")
        if self.statistic == "spacedword":
            if self.pattern is None:
                raise ConfigError("spaced-word statistic needs a pattern")
        elif self.k is None or not 1 <= self.k <= 32:
            raise ConfigError("k must be in [1, 32]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.slices < 1:
            raise ConfigError("slices must be >= 1")
        if self.normalization not in ("none", "frequency", "zscore"):
            raise ConfigError(f"unknown normalization {self.normalization!r}")
        if self.slices < self.workers:
            log.warning("slices (%d) < workers (%d): some workers will idle", self.slices, self.workers)
        evs = [affuncs.get_evaluator(name, **self.options) for name in self.evaluators]
        for ev in evs:
            if ev.statistic != self.statistic:
                raise EvaluatorStatisticMismatch(
                    f"{ev.name} needs the {ev.statistic} statistic, pipeline extracts {self.statistic}")
        return evs


@dataclass
class AFMatrix:
    labels: list[str]
    values: np.ndarray
    orientation: str
    function_id: str

    @property
    def n(self) -> int:
        return len(self.labels)


@dataclass
class Counters:
    """Instrumentation: record counts per stage and who ran what."""
    stage1_records: int = 0
    invalid_windows: int = 0
    stage2_records: int = 0
    shuffled_records: int = 0
    stage3_records: int = 0
    stage4_records: int = 0
    units: int = 0
    stage_workers: dict[str, int] = field(default_factory=dict)
    threads_seen: dict[str, int] = field(default_factory=dict)
    unit_runs: dict[str, Counter] = field(default_factory=lambda: defaultdict(Counter))

    def as_dict(self) -> dict[str, Any]:
        return {
            "stage1_records": self.stage1_records,
            "invalid_windows": self.invalid_windows,
            "stage2_records": self.stage2_records,
            "shuffled_records": self.shuffled_records,
            "stage3_records": self.stage3_records,
            "stage4_records": self.stage4_records,
            "units": self.units,
            "stage_workers": dict(self.stage_workers),
        }


class WorkerPool:
    """Order-preserving parallel map; each stage is a barrier."""

    def __init__(self, workers: int, counters: Counters):
        self.workers = workers
        self.counters = counters
        self._lock = threading.Lock()

    def map(self, stage: str, fn: Callable, items: Sequence, workers: int | None = None) -> list:
        workers = min(workers or self.workers, max(1, len(items)))
        seen: set[int] = set()
        runs = self.counters.unit_runs[stage]

        def call(pair):
            idx, item = pair
            with self._lock:
                seen.add(threading.get_ident())
                runs[idx] += 1
            return fn(item)

        pairs = list(enumerate(items))
        if workers == 1:
            out = [call(p) for p in pairs]
        else:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                out = list(ex.map(call, pairs))
        self.counters.stage_workers[stage] = workers
        self.counters.threads_seen[stage] = len(seen)
        return out


def missing_value(kind: str, normalization: str = "none", mu: float = 0.0, sigma: float = 1.0):
    """Value an aggregated statistic takes for a key absent from a sample."""
    if kind == "spacedword":
        return []
    if kind == "minhash":
        return np.empty(0, dtype=np.uint64)
    if normalization == "zscore":
        return -mu / sigma if sigma > 0 else 0.0
    return 0.0


# shared helpers -----------------------------------------------------------------

def _pairs(n: int, with_diagonal: bool) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i if with_diagonal else i + 1, n)]


def _route(keys: np.ndarray, nunits: int) -> np.ndarray:
    return assign_bins(keys, nunits)


def _shuffle(parts: list[tuple[np.ndarray, ...]], nunits: int) -> list[list[tuple[np.ndarray, ...]]]:
    """Scatter column tuples (first column = key) into units, keeping chunk order."""
    units: list[list[tuple[np.ndarray, ...]]] = [[] for _ in range(nunits)]
    for cols in parts:
        keys = cols[0]
        if keys.size == 0:
            continue
        if nunits == 1:
            units[0].append(cols)
            continue
        pid = _route(keys, nunits)
        order = np.argsort(pid, kind="stable")
        bounds = np.searchsorted(pid[order], np.arange(nunits + 1))
        for u in range(nunits):
            lo, hi = bounds[u], bounds[u + 1]
            if hi > lo:
                sel = order[lo:hi]
                units[u].append(tuple(c[sel] for c in cols))
    return units


def _concat(pieces: list[tuple[np.ndarray, ...]], templates: tuple[np.ndarray, ...]):
    if not pieces:
        return templates
    return tuple(np.concatenate([p[i] for p in pieces]) for i in range(len(templates)))


def _check_budget(config: PipelineConfig, records: int):
    if config.strategy.variant == "total" and config.memory_budget is not None \
            and records > config.memory_budget:
        raise MemoryBudgetExceeded(
            f"{records} records exceed the single-worker budget of {config.memory_budget}; "
            "use partial_aggregation or no_aggregation")


# entry point ---------------------------------------------------------------------

def run_pipeline(dataset: Dataset, config: PipelineConfig,
                 counters: Counters | None = None) -> list[AFMatrix]:
    evaluators = config.validate()
    if dataset.n < 2:
        raise ConfigError("need at least two samples")
    counters = counters if counters is not None else Counters()
    pool = WorkerPool(config.workers, counters)
    if config.statistic == "kmer":
        return _run_kmer(dataset, config, evaluators, pool)
    if config.statistic == "minhash":
        return _run_minhash(dataset, config, evaluators, pool)
    return _run_spaced(dataset, config, evaluators, pool)


# k-mer histograms -------------------------------------------------------------------

@dataclass
class _UnitAgg:
    keys: np.ndarray
    samples: np.ndarray
    counts: np.ndarray


def _kmer_stage1(k: int):
    def run(chunk: Chunk):
        codes, invalid = kernels.kmer_codes(chunk.body, k, window_skip(chunk, k))
        residues = kernels.residue_counts(chunk.body[chunk.left_overlap:])
        return codes, chunk.sample_id, invalid, residues
    return run


def execute_total(records: list[tuple[np.ndarray, np.ndarray]], config: PipelineConfig,
                  pool: WorkerPool) -> list[_UnitAgg]:
    """Gather every record on one unit, then aggregate there."""
    _check_budget(config, sum(r[0].size for r in records))
    units = _shuffle(records, 1)
    pool.counters.shuffled_records += sum(p[0].size for p in units[0])
    return pool.map("stage3", _aggregate_unit, units, workers=1)


def execute_none(records: list[tuple[np.ndarray, np.ndarray]], config: PipelineConfig,
                 pool: WorkerPool) -> list[_UnitAgg]:
    """Shuffle records by key hash; each key's group is aggregated independently."""
    units = _shuffle(records, config.shuffle_partitions)
    pool.counters.shuffled_records += sum(p[0].size for u in units for p in u)
    return pool.map("stage3", _aggregate_unit, units)


def execute_partial(records: list[tuple[np.ndarray, np.ndarray]], config: PipelineConfig,
                    pool: WorkerPool) -> list[_UnitAgg]:
    """Hash keys into bins; one bin's records for all samples meet on one worker."""
    units = _shuffle(records, config.strategy.units(config.workers))
    pool.counters.shuffled_records += sum(p[0].size for u in units for p in u)
    return pool.map("stage3", _aggregate_unit, units)


def _aggregate_unit(pieces) -> _UnitAgg:
    keys, samples = _concat(pieces, (np.empty(0, np.uint64), np.empty(0, np.int32)))
    k, s, v = aggregate_columns(keys, samples, np.ones(keys.size, dtype=np.int64))
    return _UnitAgg(k, s.astype(np.intp), v.astype(np.int64))


_EXECUTORS = {"total": execute_total, "none": execute_none, "partial": execute_partial}


@dataclass
class _Norm:
    shift: np.ndarray
    scale: np.ndarray
    missing: np.ndarray


def _normalizer(mode: str, totals: np.ndarray, sumsq: np.ndarray, size: int) -> _Norm:
    n = totals.size
    shift, scale, missing = np.zeros(n), np.ones(n), np.zeros(n)
    if mode == "frequency":
        if np.any(totals <= 0):
            raise ZeroMean("frequency normalization of an empty histogram")
        scale = totals.astype(float)
    elif mode == "zscore":
        for s in range(n):
            mu = totals[s] / size
            sigma = math.sqrt(max(sumsq[s] / size - mu * mu, 0.0))
            if sigma == 0.0:
                warnings.warn(f"sample {s}: all dense entries equal; z-scores set to 0",
                              DegenerateVariance, stacklevel=3)
                shift[s], scale[s], missing[s] = 0.0, math.inf, 0.0
            else:
                shift[s], scale[s], missing[s] = mu, sigma, -mu / sigma
    return _Norm(shift, scale, missing)


def _run_kmer(dataset: Dataset, config: PipelineConfig, evaluators, pool: WorkerPool) -> list[AFMatrix]:
    k, n = config.k, dataset.n
    size = 4 ** k
    c = pool.counters
    chunks = chunk_dataset(dataset, config.slices, k - 1)

    # stage 1
    out1 = pool.map("stage1", _kmer_stage1(k), chunks)
    residues = np.zeros((n, 5), dtype=np.int64)
    for codes, sid, invalid, res in out1:
        c.stage1_records += codes.size
        c.invalid_windows += invalid
        residues[sid] += res

    # stage 2
    flt = config.feature_filter
    total_single = config.strategy.variant == "total"

    def stage2(item):
        codes, sid, _, _ = item
        if flt is not None and flt.active:
            codes = codes[flt.mask(codes, k)]
        return codes, np.full(codes.size, sid, dtype=np.int32)

    records = pool.map("stage2", stage2, out1, workers=1 if total_single else None)
    c.stage2_records += sum(r[0].size for r in records)

    # stage 3
    units = _EXECUTORS[config.strategy.variant](records, config, pool)
    c.units = len(units)
    c.stage3_records += sum(u.keys.size for u in units)
    unit_workers = 1 if total_single else None

    # stage 4: value filter, then global moments
    cond = config.value_condition

    def stage4(u: _UnitAgg):
        if cond is not None and u.counts.size:
            keep = np.asarray(cond(u.counts), dtype=bool)
            u = _UnitAgg(u.keys[keep], u.samples[keep], u.counts[keep])
        v = u.counts.astype(float)
        return u, (np.bincount(u.samples, weights=v, minlength=n),
                   np.bincount(u.samples, weights=v * v, minlength=n),
                   np.bincount(u.samples, minlength=n))

    out4 = pool.map("stage4", stage4, units, workers=unit_workers)
    units = [u for u, _ in out4]
    raw_total, raw_sumsq, nnz = np.zeros(n), np.zeros(n), np.zeros(n, dtype=np.int64)
    for _, (t, q, z) in out4:
        raw_total += t
        raw_sumsq += q
        nnz += z
    c.stage4_records += int(nnz.sum())
    norm = _normalizer(config.normalization, raw_total, raw_sumsq, size)

    stats = []
    for s in range(n):
        sh, sc, miss = norm.shift[s], norm.scale[s], norm.missing[s]
        tot = (raw_total[s] - nnz[s] * sh) / sc
        sq = (raw_sumsq[s] - 2 * sh * raw_total[s] + nnz[s] * sh * sh) / (sc * sc)
        absent = size - int(nnz[s])
        stats.append(SampleStats(tot + miss * absent, sq + miss * miss * absent, int(nnz[s]), miss,
                                 affuncs.background_from_counts(residues[s])))

    with_diag = any(ev.orientation == "similarity" for ev in evaluators)
    pairs = _pairs(n, with_diag)
    contexts = [PairContext(k, stats[i], stats[j], config.options) for i, j in pairs]

    # stage 5
    def stage5(u: _UnitAgg):
        accs = [np.zeros((len(pairs), ev.width)) for ev in evaluators]
        unions = np.zeros(len(pairs), dtype=np.int64)
        if u.keys.size == 0:
            return accs, unions
        vals = (u.counts - norm.shift[u.samples]) / norm.scale[u.samples]
        new = np.empty(u.keys.size, dtype=bool)
        new[0] = True
        new[1:] = u.keys[1:] != u.keys[:-1]
        row = np.cumsum(new) - 1
        ukeys = u.keys[new]
        V = np.tile(norm.missing, (ukeys.size, 1))
        P = np.zeros((ukeys.size, n), dtype=bool)
        V[row, u.samples] = vals
        P[row, u.samples] = True
        for p, (i, j) in enumerate(pairs):
            rows = P[:, i] | P[:, j]
            unions[p] = int(np.count_nonzero(rows))
            if not unions[p]:
                continue
            a, b, kk = V[rows, i], V[rows, j], ukeys[rows]
            pa, pb = P[rows, i], P[rows, j]
            for e, ev in enumerate(evaluators):
                accs[e][p] = ev.reduce(np.asarray(ev.partial(a, b, contexts[p], kk, pa, pb), dtype=float))
        return accs, unions

    out5 = pool.map("stage5", stage5, units, workers=unit_workers)

    matrices = []
    for e, ev in enumerate(evaluators):
        vals = np.zeros((n, n))
        for p, (i, j) in enumerate(pairs):
            acc = ev.identity()
            union = 0
            for accs, unions in out5:
                acc = ev.combine(acc, accs[e][p])
                union += int(unions[p])
            acc = ev.combine(acc, ev.complement(contexts[p], size - union))
            vals[i, j] = vals[j, i] = ev.finalize(acc, contexts[p])
        matrices.append(AFMatrix(dataset.labels, vals, ev.orientation, ev.name))
    return matrices


# MinHash sketches -------------------------------------------------------------------

def _run_minhash(dataset: Dataset, config: PipelineConfig, evaluators, pool: WorkerPool) -> list[AFMatrix]:
    k, n, s = config.k, dataset.n, config.sketch_size
    c = pool.counters
    chunks = chunk_dataset(dataset, config.slices, k - 1)

    def stage1(chunk: Chunk):
        codes, invalid = kernels.kmer_codes(chunk.body, k, window_skip(chunk, k))
        return chunk.sample_id, sketch_codes(codes, k, s, config.seed, config.canonical), codes.size, invalid

    out1 = pool.map("stage1", stage1, chunks)
    for _, _, m, inv in out1:
        c.stage1_records += m
        c.invalid_windows += inv
    c.stage2_records = c.stage1_records
    # every record shares one sentinel key, so all strategies collapse to one unit
    c.units = 1
    c.shuffled_records += len(out1)

    def stage3(_):
        sk = [np.empty(0, dtype=np.uint64) for _ in range(n)]
        for sid, h, _, _ in out1:
            sk[sid] = np.union1d(sk[sid], h)[:s]
        return sk

    sketches = pool.map("stage3", stage3, [None], workers=1)[0]
    c.stage3_records = n
    c.stage4_records = n
    for sid in range(n):
        if sketches[sid].size < s:
            warnings.warn(f"sample {dataset.labels[sid]!r}: only {sketches[sid].size} distinct "
                          f"hashes for sketch size {s}", SketchUnderfull, stacklevel=3)
    opts = dict(config.options, sketch_size=s)
    with_diag = any(ev.orientation == "similarity" for ev in evaluators)
    matrices = []
    for ev in evaluators:
        vals = np.zeros((n, n))
        for i, j in _pairs(n, with_diag):
            ctx = PairContext(k, None, None, opts)
            acc = ev.reduce(ev.partial(sketches[i], sketches[j], ctx))
            vals[i, j] = vals[j, i] = ev.finalize(acc, ctx)
        matrices.append(AFMatrix(dataset.labels, vals, ev.orientation, ev.name))
    return matrices


# spaced words ---------------------------------------------------------------------

def _cap_group(samples: np.ndarray, lo: int, hi: int, cap: int) -> np.ndarray | None:
    """Row indices to keep so a group's cross pairs stay under ``cap`` (None: keep all)."""
    seg = samples[lo:hi]
    _, sizes = np.unique(seg, return_counts=True)
    cross = (sizes.sum() ** 2 - (sizes ** 2).sum()) // 2
    if cross <= cap:
        return None
    frac = math.sqrt(cap / cross)
    keep = []
    for sid in np.unique(seg):
        rows = np.flatnonzero(seg == sid) + lo
        m = max(1, int(rows.size * frac))
        keep.append(rows[np.linspace(0, rows.size - 1, m).astype(np.int64)])
    return np.concatenate(keep)


def _run_spaced(dataset: Dataset, config: PipelineConfig, evaluators, pool: WorkerPool) -> list[AFMatrix]:
    pattern: SpacedPattern = config.pattern
    n, weight = dataset.n, pattern.weight
    c = pool.counters
    chunks = chunk_dataset(dataset, config.slices, pattern.length - 1)
    scores = np.asarray(config.scores, dtype=np.int64)
    ndc = pattern.dontcare_positions.size

    def stage1(chunk: Chunk):
        keys, dcs = kernels.spaced_words(chunk.body, pattern.match_positions, pattern.dontcare_positions,
                                         pattern.length, window_skip(chunk, pattern.length))
        nwin = max(0, len(chunk.body) - pattern.length + 1 - window_skip(chunk, pattern.length))
        return keys, dcs, chunk.sample_id, nwin - keys.size

    out1 = pool.map("stage1", stage1, chunks)
    flt = config.feature_filter
    records = []
    for keys, dcs, sid, invalid in out1:
        c.stage1_records += keys.size
        c.invalid_windows += invalid
        if flt is not None and flt.active:
            m = flt.mask(keys, weight)
            keys, dcs = keys[m], dcs[m]
        records.append((keys, np.full(keys.size, sid, dtype=np.int32), dcs))
    c.stage2_records += sum(r[0].size for r in records)

    variant = config.strategy.variant
    nunits = config.strategy.units(config.workers, config.shuffle_partitions)
    if variant == "total":
        _check_budget(config, c.stage2_records)
    units = _shuffle(records, nunits)
    c.shuffled_records += sum(p[0].size for u in units for p in u)
    c.units = nunits
    unit_workers = 1 if variant == "total" else None
    capped = [0]
    lock = threading.Lock()

    def stage35(pieces):
        keys, samples, dcs = _concat(pieces, (np.empty(0, np.uint64), np.empty(0, np.int32),
                                              np.empty((0, ndc), np.uint8)))
        if keys.size == 0:
            return np.zeros((n, n), np.int64), np.zeros((n, n), np.int64), 0
        order = np.lexsort((samples, keys))
        keys, samples, dcs = keys[order], samples[order], dcs[order]
        new = np.empty(keys.size, dtype=bool)
        new[0] = True
        new[1:] = keys[1:] != keys[:-1]
        starts = np.append(np.flatnonzero(new), keys.size)
        first = samples[starts[:-1]]
        last = samples[starts[1:] - 1]
        active = first != last
        # subsample over-cap groups
        keep_rows = None
        for g in np.flatnonzero(active):
            sel = _cap_group(samples, starts[g], starts[g + 1], config.fswm_pair_cap)
            if sel is not None:
                if keep_rows is None:
                    keep_rows = np.ones(keys.size, dtype=bool)
                keep_rows[starts[g]:starts[g + 1]] = False
                keep_rows[sel] = True
                with lock:
                    capped[0] += 1
        if keep_rows is not None:
            gid = np.repeat(np.arange(starts.size - 1), np.diff(starts))[keep_rows]
            samples, dcs = samples[keep_rows], dcs[keep_rows]
            starts = np.searchsorted(gid, np.arange(starts.size))
        kept, mm = kernels.fswm_accumulate(starts, active.astype(np.uint8), samples, dcs, n,
                                           scores, config.threshold)
        return kept, mm, int(np.count_nonzero(new))

    out = pool.map("stage5", stage35, units, workers=unit_workers)
    if capped[0]:
        log.warning("fswm: %d spaced words exceeded %d cross pairs and were subsampled",
                    capped[0], config.fswm_pair_cap)
    kept = sum((o[0] for o in out), np.zeros((n, n), np.int64))
    mm = sum((o[1] for o in out), np.zeros((n, n), np.int64))
    c.stage3_records += sum(o[2] for o in out)
    c.stage4_records = c.stage3_records
    opts = dict(config.options, dontcare_count=ndc)
    matrices = []
    for ev in evaluators:
        vals = np.zeros((n, n))
        for i, j in _pairs(n, False):
            ctx = PairContext(weight, None, None, opts)
            vals[i, j] = vals[j, i] = ev.finalize(np.array([kept[i, j], mm[i, j]], float), ctx)
        matrices.append(AFMatrix(dataset.labels, vals, ev.orientation, ev.name))
    return matrices
