"""Command line front end driven by key=value configuration files.

Example (a verbatim configuration from the original toolkit works as is)::

    afkit run --config kmer_euclidean.conf
    afkit distance --config my.conf --set k=9 --workers 4 --format tsv
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Sequence

import numpy as np

from afkit import affuncs, phylo, sigtest
from afkit.engine import AFMatrix, Counters, PipelineConfig, Strategy, run_pipeline
from afkit.errors import (AfkitError, ConfigError, ConfigSyntaxError, ConfigWarning, DuplicateKey,
                          EvaluatorStatisticMismatch, MissingRequiredKey, UnknownTask)
from afkit.matio import format_phylip, format_tsv, parse_matrix, read_matrix  # noqa: F401
from afkit.seqio import Dataset, load_dataset
from afkit.stats import FeatureFilter, SpacedPattern, ValueCondition

log = logging.getLogger("afkit")

TASKS = ("distance", "sigtest", "robustness", "tree")

KNOWN_KEYS = {
    "k", "q", "l", "alpha", "pattern", "threshold", "slices", "bins", "workers", "seed", "input",
    "output", "task", "strategy", "evaluator", "extractor", "aggregator", "normalization",
    "filter_include", "filter_exclude", "value_min", "sketch_size", "canonical", "gold_tree",
    "percents", "repeats", "noise_source",
    # additions
    "format", "mode", "pool", "max_delta", "builders", "metrics", "dump_trees",
}
IGNORED_KEYS = {"x", "m"}

_MODULE_KINDS = {"fade.kmer": "kmer", "fade.sw": "spacedword", "fade.mash": "minhash"}
_SHORT_KINDS = {"kmer": "kmer", "histogram": "kmer", "spacedword": "spacedword", "sw": "spacedword",
                "minhash": "minhash", "mash": "minhash"}


def module_kind(name: str) -> str:
    """Statistic kind named by an extractor/aggregator entry."""
    low = name.strip().lower()
    for prefix, kind in _MODULE_KINDS.items():
        if low.startswith(prefix + "."):
            return kind
    if low in _SHORT_KINDS:
        return _SHORT_KINDS[low]
    raise ConfigError(f"unknown extractor/aggregator {name!r}")


@dataclass
class RunConfig:
    raw: dict[str, str]
    task: str
    base_dir: str = "."
    warnings: list[str] = field(default_factory=list)

    def get(self, key: str, default: Any = None) -> Any:
        return self.raw.get(key, default)

    def int(self, key: str, default: int | None = None) -> int | None:
        v = self.raw.get(key)
        if v is None:
            return default
        try:
            return int(v)
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {v!r}") from None

    def float(self, key: str, default: float | None = None) -> float | None:
        v = self.raw.get(key)
        if v is None:
            return default
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {v!r}") from None

    def flag(self, key: str, default: bool = False) -> bool:
        v = self.raw.get(key)
        if v is None:
            return default
        return v.lower() in ("1", "true", "yes", "on")

    def list(self, key: str, default: Sequence[str] = ()) -> list[str]:
        v = self.raw.get(key)
        if v is None:
            return list(default)
        return [x.strip() for x in v.split(",") if x.strip()]

    @property
    def evaluators(self) -> list[str]:
        names = self.list("evaluator", ["euclidean"])
        return [affuncs.resolve_name(n) for n in names]

    @property
    def statistic(self) -> str:
        kinds = {affuncs.EVALUATORS[e].statistic for e in self.evaluators}
        if len(kinds) > 1:
            raise EvaluatorStatisticMismatch(f"evaluators need different statistics: {sorted(kinds)}")
        kind = kinds.pop()
        for key in ("extractor", "aggregator"):
            if key in self.raw and module_kind(self.raw[key]) != kind:
                raise EvaluatorStatisticMismatch(
                    f"{key}={self.raw[key]} extracts {module_kind(self.raw[key])}, evaluator needs {kind}")
        return kind

    def input_paths(self) -> list[str]:
        out = []
        for g in self.list("input"):
            g = os.path.expanduser(g)
            if not os.path.isabs(g):
                g = os.path.join(self.base_dir, g)
            out.append(g)
        return out

    def pipeline(self, dataset: Dataset, workers: int | None = None) -> PipelineConfig:
        kind = self.statistic
        k = self.int("k")
        pattern = None
        if kind == "spacedword":
            if "pattern" in self.raw:
                pattern = SpacedPattern(self.raw["pattern"])
            else:
                pattern = default_pattern(self.get("mode", "assembled"), self.int("seed", 42))
                log.info("generated spaced-word pattern %s", pattern.bits)
            if k is not None and k not in (pattern.length, pattern.weight):
                log.warning("k=%d matches neither pattern length %d nor weight %d; ignored",
                            k, pattern.length, pattern.weight)
            k = pattern.weight
        elif k is None:
            k = choose_k(dataset)
            log.info("k not set; chose k=%d from mean length %.1f", k, dataset.mean_length)
        flt = None
        if "filter_include" in self.raw or "filter_exclude" in self.raw:
            flt = FeatureFilter(self.get("filter_include"), self.get("filter_exclude"))
        cond = None
        if "value_min" in self.raw:
            cond = ValueCondition(">=", float(self.raw["value_min"]))
        w = workers or self.int("workers") or int(os.environ.get("AFKIT_WORKERS", "1") or 1)
        strategy = Strategy(self.get("strategy", "partial_aggregation"), self.int("bins"))
        return PipelineConfig(
            statistic=kind, k=k, pattern=pattern, evaluators=self.evaluators, strategy=strategy,
            slices=self.int("slices", 64), workers=w, feature_filter=flt, value_condition=cond,
            normalization=self.get("normalization", "none"), seed=self.int("seed", 42),
            sketch_size=self.int("sketch_size", 1000), canonical=self.flag("canonical", True),
            threshold=self.int("threshold", 0),
        )


def parse_config(text: str, base_dir: str = ".", overrides: Sequence[str] = ()) -> RunConfig:
    raw: dict[str, str] = {}
    notes: list[str] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigSyntaxError(f"expected key=value, got {body!r}", lineno)
        key, value = (x.strip() for x in body.split("=", 1))
        if not key:
            raise ConfigSyntaxError("empty key", lineno)
        if key in raw:
            raise DuplicateKey(f"line {lineno}: key {key!r} given twice")
        raw[key] = value
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (x.strip() for x in item.split("=", 1))
        raw[key] = value
    for key in list(raw):
        if key in IGNORED_KEYS:
            notes.append(f"key {key!r} has no effect here and is ignored")
            del raw[key]
        elif key not in KNOWN_KEYS:
            notes.append(f"unknown key {key!r} ignored")
    task = raw.get("task", "distance")
    if task not in TASKS:
        raise UnknownTask(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")
    cfg = RunConfig(raw, task, base_dir, notes)
    for note in notes:
        warnings.warn(note, ConfigWarning, stacklevel=2)
    cfg.evaluators  # validate names early
    cfg.statistic
    return cfg


def load_config(path: str, overrides: Sequence[str] = ()) -> RunConfig:
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, os.path.dirname(os.path.abspath(path)), overrides)


def choose_k(dataset_or_mean) -> int:
    """k = ceil(log4(mean length)) - 1, computed exactly."""
    if isinstance(dataset_or_mean, Dataset):
        mean = Fraction(dataset_or_mean.total_length, dataset_or_mean.n)
    else:
        mean = Fraction(dataset_or_mean)
    if mean < 4:
        raise ConfigError("mean sequence length must be at least 4 to choose k")
    c = 0
    while Fraction(4) ** c < mean:
        c += 1
    return c - 1


def default_pattern(mode: str = "assembled", seed: int = 42) -> SpacedPattern:
    """Weight-12 pattern with 100 (assembled) or 60 (reads) don't-care positions."""
    dontcare = {"assembled": 100, "reads": 60}.get(mode)
    if dontcare is None:
        raise ConfigError(f"unknown pattern mode {mode!r}")
    weight = 12
    length = weight + dontcare
    rng = np.random.default_rng(seed)
    inner = rng.choice(np.arange(1, length - 1), size=weight - 2, replace=False)
    bits = np.zeros(length, dtype=int)
    bits[[0, length - 1]] = 1
    bits[inner] = 1
    return SpacedPattern("".join(map(str, bits)))


def emit_matrix(matrix: AFMatrix, path: str, fmt: str = "phylip") -> str:
    if fmt == "phylip":
        text = format_phylip(matrix.labels, matrix.values)
    elif fmt == "tsv":
        text = format_tsv(matrix.labels, matrix.values)
    else:
        raise ConfigError(f"unknown matrix format {fmt!r}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)
    return path


# tasks ------------------------------------------------------------------------------

@dataclass
class TaskResult:
    files: list[str]
    counters: Counters
    extra: dict[str, Any] = field(default_factory=dict)


def _output_dir(cfg: RunConfig) -> str:
    out = cfg.get("output", "output")
    os.makedirs(out, exist_ok=True)
    return out


def _load(cfg: RunConfig) -> Dataset:
    if "input" not in cfg.raw:
        raise MissingRequiredKey("input is required")
    return load_dataset(cfg.input_paths())


def _task_distance(cfg, ds, pipe, fmt, counters) -> TaskResult:
    mats = run_pipeline(ds, pipe, counters)
    out = _output_dir(cfg)
    ext = "phylip" if fmt == "phylip" else "tsv"
    files = [emit_matrix(m, os.path.join(out, f"{m.function_id}.{ext}"), fmt) for m in mats]
    return TaskResult(files, counters, {"matrices": mats})


def _task_sigtest(cfg, ds, pipe, fmt, counters) -> TaskResult:
    out = _output_dir(cfg)
    qs = [int(q) for q in cfg.list("q", ["1", "7", "10"])]
    runs = cfg.int("l", 100)
    alpha = cfg.float("alpha", 0.05)
    results = {}
    files = []
    for ev in pipe.evaluators:
        for q in qs:
            null = sigtest.NullModelConfig(q=q, runs=runs, alpha=alpha, seed=cfg.int("seed", 42))
            ckdir = os.path.join(out, "checkpoints", f"{ev}_q{q}")
            before = sigtest.Checkpoint(ckdir).completed() if os.path.isdir(ckdir) else 0
            rm = sigtest.mecca(ds, ev, null, pipe, ckdir)
            log.info("%s q=%d: %d runs completed (%d reused)", ev, q, rm.runs_completed, before)
            results[(ev, q)] = rm
            path = os.path.join(out, f"ranks_{ev}_q{q}.csv")
            with open(path, "w") as fh:
                fh.write(sigtest.format_ranks_csv(rm))
            files.append(path)
    path = os.path.join(out, "report.tsv")
    with open(path, "w") as fh:
        fh.write(sigtest.format_report(sigtest.summarize(results)))
    files.append(path)
    return TaskResult(files, counters, {"results": results})


def _noise_pool(cfg: RunConfig, ds: Dataset, pipe: PipelineConfig, evaluator: str):
    if "pool" in cfg.raw:
        path = cfg.raw["pool"]
        if not os.path.isabs(path):
            path = os.path.join(cfg.base_dir, path) if not os.path.exists(path) else path
        return sigtest.simulated_pool(path)
    null = sigtest.NullModelConfig(q=int(cfg.list("q", ["1"])[0]), runs=cfg.int("l", 20),
                                   seed=cfg.int("seed", 42))
    qbin = sigtest.build_qmer_bin(ds, null.q)
    one = dataclasses.replace(pipe, evaluators=[evaluator])
    pool = []
    for i in range(null.runs):
        synth = sigtest.randomize_dataset(qbin, ds, sigtest.run_rng(null.seed, i))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pool.append(run_pipeline(synth, one)[0].values)
    return pool


def _gold(cfg: RunConfig) -> phylo.PhyloTree:
    if "gold_tree" not in cfg.raw:
        raise MissingRequiredKey("robustness needs gold_tree")
    path = cfg.raw["gold_tree"]
    if not os.path.isabs(path) and not os.path.exists(path):
        path = os.path.join(cfg.base_dir, path)
    return phylo.read_newick(path)


def _task_robustness(cfg, ds, pipe, fmt, counters) -> TaskResult:
    gold = _gold(cfg)
    mats = run_pipeline(ds, pipe, counters)
    out = _output_dir(cfg)
    percents = [float(p) for p in cfg.list("percents", ["0", "0.1", "0.3", "0.5"])]
    percents = [p / 100 if p > 1 else p for p in percents]
    default_source = "additive_uniform" if pipe.statistic == "spacedword" else "simulated_pool"
    source = cfg.get("noise_source", default_source)
    files = []
    for m in mats:
        pool = _noise_pool(cfg, ds, pipe, m.function_id) if source == "simulated_pool" else None
        dumped: list[str] = []

        def keep(builder, pct, rep, tree, _d=dumped):
            _d.append(f"[{builder} {pct:g} {rep}] {phylo.write_newick(tree)}")

        rows = phylo.robustness_sweep(
            m, gold, cfg.list("builders", ["upgma", "nj"]), cfg.list("metrics", ["rf", "mcm"]),
            percents, cfg.int("repeats", 10), source, pool, cfg.int("seed", 42),
            cfg.float("max_delta"), keep if cfg.flag("dump_trees") else None)
        path = os.path.join(out, f"sweep_{m.function_id}.tsv")
        with open(path, "w") as fh:
            fh.write(phylo.format_sweep(rows))
        files.append(path)
        if dumped:
            path = os.path.join(out, f"trees_{m.function_id}.nwk")
            with open(path, "w") as fh:
                fh.write("\n".join(dumped) + "\n")
            files.append(path)
    return TaskResult(files, counters)


def _task_tree(cfg, ds, pipe, fmt, counters) -> TaskResult:
    mats = run_pipeline(ds, pipe, counters)
    out = _output_dir(cfg)
    files = []
    for m in mats:
        for b in cfg.list("builders", ["upgma", "nj"]):
            tree = phylo.BUILDERS[b](m)
            path = os.path.join(out, f"{m.function_id}_{b}.nwk")
            with open(path, "w") as fh:
                fh.write(phylo.write_newick(tree) + "\n")
            files.append(path)
    return TaskResult(files, counters)


_TASKS = {"distance": _task_distance, "sigtest": _task_sigtest,
          "robustness": _task_robustness, "tree": _task_tree}


def run_task(cfg: RunConfig, workers: int | None = None, fmt: str | None = None) -> TaskResult:
    if cfg.task == "robustness":
        _gold(cfg)  # fail before doing any work
    ds = _load(cfg)
    pipe = cfg.pipeline(ds, workers)
    fmt = fmt or cfg.get("format", "phylip")
    counters = Counters()
    return _TASKS[cfg.task](cfg, ds, pipe, fmt, counters)


# entry point ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="afkit", description="Alignment-free sequence comparison.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run",) + TASKS:
        help_ = "run the task named in the config" if name == "run" else f"task={name}"
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="key=value configuration file")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration key (repeatable)")
        s.add_argument("--workers", type=int, help="worker threads (default: $AFKIT_WORKERS or 1)")
        s.add_argument("--stats", action="store_true", help="print engine counters as JSON")
        s.add_argument("--format", choices=("phylip", "tsv"), help="matrix output format")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _show_warning(message, category, filename, lineno, file=None, line=None):
    log.warning("%s", message)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="afkit: %(levelname)s: %(message)s")
    shown = warnings.showwarning
    warnings.showwarning = _show_warning
    try:
        overrides = list(args.set)
        if args.command != "run":
            overrides.append(f"task={args.command}")
        if args.config:
            cfg = load_config(args.config, overrides)
        else:
            cfg = parse_config("", os.getcwd(), overrides)
        result = run_task(cfg, args.workers, args.format)
    except AfkitError as exc:
        print(f"afkit: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"afkit: error: {exc}", file=sys.stderr)
        return 3 if isinstance(exc, OSError) else 2
    finally:
        warnings.showwarning = shown
    for f in result.files:
        print(f)
    if args.stats:
        print(json.dumps(result.counters.as_dict(), indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
