"""Monte Carlo significance of AF matrices (procedure MECCA) with Bonferroni correction.

Synthetic datasets are built from a bin holding every overlapping q-mer of
the input. Each run's AF matrix is checkpointed to disk before the next run
starts, so an interrupted test resumes where it stopped and, because every
run draws from its own seeded stream, ends bit-identical to an
uninterrupted one.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from afkit import affuncs
from afkit.engine import PipelineConfig, run_pipeline
from afkit.errors import CorruptRunFile, EmptyBin, FingerprintMismatch, MatrixFormatError
from afkit.matio import atomic_write, read_matrix, write_full
from afkit.seqio import Dataset, Sample

log = logging.getLogger(__name__)


class UndefinedEntries(UserWarning):
    """Original matrix holds inf/nan entries; they fail automatically."""


@dataclass(frozen=True)
class NullModelConfig:
    q: int = 1
    runs: int = 100
    alpha: float = 0.05
    seed: int = 42

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class QmerBin:
    q: int
    qmers: np.ndarray  # (count, q) uint8

    def __len__(self) -> int:
        return int(self.qmers.shape[0])

    def words(self) -> list[str]:
        return [bytes(r).decode("ascii") for r in self.qmers]


@dataclass
class RankMatrix:
    labels: list[str]
    ranks: np.ndarray
    pvalues: np.ndarray
    passes: np.ndarray
    family_pass: bool
    runs_completed: int
    alpha: float
    undefined: np.ndarray = field(default=None)

    @property
    def percent_pass(self) -> float:
        n = len(self.labels)
        iu = np.triu_indices(n, 1)
        return 100.0 * float(np.count_nonzero(self.passes[iu])) / max(1, iu[0].size)


def build_qmer_bin(dataset: Dataset, q: int) -> QmerBin:
    if q < 1:
        raise ValueError("q must be >= 1")
    parts = []
    for s in dataset.samples:
        for frag in s.fragments:
            if len(frag) >= q:
                raw = np.frombuffer(frag.encode("ascii"), dtype=np.uint8)
                parts.append(np.lib.stride_tricks.sliding_window_view(raw, q))
    if not parts:
        raise EmptyBin(f"no fragment is at least {q} residues long")
    return QmerBin(q, np.ascontiguousarray(np.concatenate(parts)))


def randomize_dataset(qbin: QmerBin, dataset: Dataset, rng: np.random.Generator) -> Dataset:
    """Same samples and fragment lengths, filled with uniform draws from the bin."""
    if len(qbin) == 0:
        raise EmptyBin("empty q-mer bin")
    samples = []
    for s in dataset.samples:
        frags = []
        for frag in s.fragments:
            draws = -(-len(frag) // qbin.q)
            idx = rng.integers(0, len(qbin), size=draws)
            frags.append(qbin.qmers[idx].ravel()[:len(frag)].tobytes().decode("ascii"))
        samples.append(Sample(s.sample_id, s.name, tuple(frags), s.fmt))
    return Dataset(tuple(samples))


def run_rng(seed: int, run: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, run]))


def bonferroni_decide(pvalues: np.ndarray, alpha: float, n: int) -> tuple[np.ndarray, bool]:
    if n < 2:
        raise ValueError("need n >= 2")
    m = n * (n - 1) // 2
    passes = np.asarray(pvalues) <= alpha / m
    np.fill_diagonal(passes, False)
    iu = np.triu_indices(n, 1)
    return passes, bool(passes[iu].all())


def rank_entries(original: np.ndarray, simulated: list[np.ndarray], orientation: str) -> np.ndarray:
    """Per entry, how many simulated values are strictly worse than the original."""
    n = original.shape[0]
    ranks = np.zeros((n, n), dtype=np.int64)
    for sim in simulated:
        worse = sim < original if orientation == "similarity" else sim > original
        ranks += worse
    np.fill_diagonal(ranks, 0)
    return ranks


# checkpointing ----------------------------------------------------------------------

def dataset_digest(dataset: Dataset) -> str:
    h = hashlib.sha256()
    for s in dataset.samples:
        h.update(s.name.encode() + b"\0")
        for f in s.fragments:
            h.update(f.encode("ascii") + b"\1")
        h.update(b"\2")
    return h.hexdigest()


def fingerprint(dataset: Dataset, evaluator: str, cfg: NullModelConfig, pipeline: PipelineConfig) -> str:
    """Everything that changes a run's matrix; run count and alpha are left out."""
    pat = pipeline.pattern.bits if pipeline.pattern is not None else None
    flt = pipeline.feature_filter
    doc = {
        "evaluator": affuncs.resolve_name(evaluator),
        "q": cfg.q, "seed": cfg.seed,
        "statistic": pipeline.statistic, "k": pipeline.k, "pattern": pat,
        "normalization": pipeline.normalization,
        "include": flt.include.pattern if flt is not None and flt.include is not None else None,
        "exclude": flt.exclude.pattern if flt is not None and flt.exclude is not None else None,
        "value": dataclasses.astuple(pipeline.value_condition) if pipeline.value_condition else None,
        "sketch_size": pipeline.sketch_size, "canonical": pipeline.canonical,
        "sketch_seed": pipeline.seed, "threshold": pipeline.threshold,
        "scores": np.asarray(pipeline.scores).tolist(),
        "options": {k: repr(v) for k, v in sorted(pipeline.options.items())},
        "dataset": dataset_digest(dataset),
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


class Checkpoint:
    """Directory holding config.fingerprint, state.json, original.mat and run_<i>.mat."""

    def __init__(self, path: str):
        self.path = path

    def _p(self, name: str) -> str:
        return os.path.join(self.path, name)

    def run_path(self, i: int) -> str:
        return self._p(f"run_{i}.mat")

    def open(self, fp: str) -> None:
        os.makedirs(self.path, exist_ok=True)
        fpath = self._p("config.fingerprint")
        if os.path.exists(fpath):
            with open(fpath) as fh:
                old = fh.read().strip()
            if old != fp:
                raise FingerprintMismatch(f"{self.path}: checkpoint belongs to a different configuration")
        else:
            atomic_write(fpath, fp + "\n")

    def load_run(self, i: int, n: int) -> np.ndarray | None:
        path = self.run_path(i)
        if not os.path.exists(path):
            return None
        try:
            _, vals = read_matrix(path)
        except (MatrixFormatError, OSError, ValueError) as exc:
            warnings.warn(f"{path}: {exc}; recomputing run {i}", CorruptRunFile, stacklevel=2)
            return None
        if vals.shape != (n, n):
            warnings.warn(f"{path}: wrong shape {vals.shape}; recomputing run {i}", CorruptRunFile,
                          stacklevel=2)
            return None
        return vals

    def save_run(self, i: int, labels: list[str], values: np.ndarray) -> None:
        write_full(self.run_path(i), labels, values)

    def save_state(self, completed: int, runs: int) -> None:
        atomic_write(self._p("state.json"), json.dumps({"completed": completed, "runs": runs}) + "\n")

    def save_original(self, labels: list[str], values: np.ndarray) -> None:
        write_full(self._p("original.mat"), labels, values)

    def completed(self) -> int:
        try:
            with open(self._p("state.json")) as fh:
                return int(json.load(fh)["completed"])
        except (OSError, ValueError, KeyError):
            return 0


def checkpoint_resume(ckpt: Checkpoint, n: int, runs: int) -> dict[int, np.ndarray]:
    """Completed, readable run matrices keyed by run index."""
    done = {}
    for i in range(runs):
        vals = ckpt.load_run(i, n)
        if vals is not None:
            done[i] = vals
    return done


def simulated_pool(path: str) -> np.ndarray:
    """All off-diagonal values of every run file in a checkpoint directory."""
    vals = []
    for name in sorted(os.listdir(path)):
        if name.startswith("run_") and name.endswith(".mat"):
            _, m = read_matrix(os.path.join(path, name))
            vals.append(m[~np.eye(m.shape[0], dtype=bool)])
    return np.concatenate(vals) if vals else np.empty(0)


# the procedure ---------------------------------------------------------------------

def mecca(dataset: Dataset, evaluator: str, cfg: NullModelConfig, pipeline: PipelineConfig,
          ckpt: Checkpoint | str | None = None, stop_after: int | None = None) -> RankMatrix:
    """Rank the original AF matrix against ``cfg.runs`` matrices of synthetic datasets.

    ``stop_after`` computes at most that many new runs and returns the ranks
    so far (used to simulate an interruption).
    """
    pipe = dataclasses.replace(pipeline, evaluators=[evaluator])
    ev = affuncs.get_evaluator(evaluator)
    n = dataset.n
    if isinstance(ckpt, str):
        ckpt = Checkpoint(ckpt)
    done: dict[int, np.ndarray] = {}
    if ckpt is not None:
        ckpt.open(fingerprint(dataset, evaluator, cfg, pipe))
        done = checkpoint_resume(ckpt, n, cfg.runs)

    original = run_pipeline(dataset, pipe)[0].values
    if ckpt is not None:
        ckpt.save_original(dataset.labels, original)
    qbin = build_qmer_bin(dataset, cfg.q)
    fresh = 0
    for i in range(cfg.runs):
        if i in done:
            continue
        if stop_after is not None and fresh >= stop_after:
            break
        synth = randomize_dataset(qbin, dataset, run_rng(cfg.seed, i))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            done[i] = run_pipeline(synth, pipe)[0].values
        fresh += 1
        if ckpt is not None:
            ckpt.save_run(i, dataset.labels, done[i])
            ckpt.save_state(len(done), cfg.runs)

    sims = [done[i] for i in sorted(done)]
    ranks = rank_entries(original, sims, ev.orientation)
    completed = len(sims)
    pvalues = 1.0 - ranks / max(1, completed)
    np.fill_diagonal(pvalues, 1.0)
    undefined = ~np.isfinite(original)
    np.fill_diagonal(undefined, False)
    if undefined.any():
        warnings.warn(f"{int(undefined.sum()) // 2} undefined entries in the original matrix fail "
                      "automatically", UndefinedEntries, stacklevel=2)
        ranks[undefined] = 0
        pvalues[undefined] = 1.0
    passes, family = bonferroni_decide(pvalues, cfg.alpha, n)
    passes &= ~undefined
    family = family and not undefined.any()
    return RankMatrix(dataset.labels, ranks, pvalues, passes, family, completed, cfg.alpha, undefined)


# reporting -----------------------------------------------------------------------

def classify(percent: float) -> str:
    if percent >= 75.0:
        return "green"
    if percent == 0.0:
        return "red"
    return "yellow"


def summarize(results: dict[tuple[str, int], RankMatrix]) -> list[tuple[str, int, float, str]]:
    rows = []
    for (func, q), rm in sorted(results.items()):
        pct = rm.percent_pass
        rows.append((func, q, pct, classify(pct)))
    return rows


def format_report(rows: list[tuple[str, int, float, str]]) -> str:
    lines = ["function\tq\tpercent_pass\tclassification"]
    lines += [f"{f}\t{q}\t{p:.2f}\t{c}" for f, q, p, c in rows]
    return "\n".join(lines) + "\n"


def format_ranks_csv(rm: RankMatrix) -> str:
    lines = ["i,j,label_i,label_j,rank,pvalue,pass"]
    n = len(rm.labels)
    for i in range(n):
        for j in range(i + 1, n):
            lines.append(f"{i},{j},{rm.labels[i]},{rm.labels[j]},{rm.ranks[i, j]},"
                         f"{rm.pvalues[i, j]:.6g},{int(rm.passes[i, j])}")
    return "\n".join(lines) + "\n"


def binomial_interval(trials: int, p: float, level: float = 0.99) -> tuple[int, int]:
    """Central interval of Binomial(trials, p) counts holding at least ``level`` mass."""
    from scipy.stats import binom
    lo, hi = binom.interval(level, trials, p)
    return int(lo), int(hi)


__all__ = ["NullModelConfig", "QmerBin", "RankMatrix", "Checkpoint", "build_qmer_bin",
           "randomize_dataset", "mecca", "bonferroni_decide", "checkpoint_resume", "summarize",
           "classify", "simulated_pool", "format_report", "format_ranks_csv"]
