"""FASTA/FASTQ ingestion and overlap-aware chunking.

One input file is one sample. Records inside a file become independent
fragments: no window ever spans two records.
"""

from __future__ import annotations

import glob
import gzip
import logging
import math
import os
from dataclasses import dataclass
from typing import Iterable

from afkit.errors import EmptyInput, InputError, MalformedRecord, NoFilesMatched

log = logging.getLogger(__name__)

_SUFFIXES = (".fasta", ".fa", ".fna", ".fas", ".fastq", ".fq", ".txt")


@dataclass(frozen=True)
class Sample:
    sample_id: int
    name: str
    fragments: tuple[str, ...]
    fmt: str = "fasta"

    @property
    def length(self) -> int:
        return sum(len(f) for f in self.fragments)


@dataclass(frozen=True)
class Dataset:
    samples: tuple[Sample, ...]

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def total_length(self) -> int:
        return sum(s.length for s in self.samples)

    @property
    def mean_length(self) -> float:
        return self.total_length / len(self.samples)

    @property
    def labels(self) -> list[str]:
        return [s.name for s in self.samples]

    @classmethod
    def from_sequences(cls, seqs: dict[str, str | Iterable[str]] | list[str]) -> "Dataset":
        """Build a dataset in memory; a list gets names s0, s1, ..."""
        if isinstance(seqs, dict):
            items = list(seqs.items())
        else:
            items = [(f"s{i}", s) for i, s in enumerate(seqs)]
        samples = []
        for i, (name, frags) in enumerate(items):
            if isinstance(frags, str):
                frags = [frags]
            samples.append(Sample(i, name, tuple(f.upper() for f in frags if f)))
        return cls(tuple(samples))


@dataclass(frozen=True)
class Chunk:
    sample_id: int
    fragment_id: int
    offset: int
    body: bytes
    left_overlap: int = 0


def _text(data: bytes | str) -> str:
    if isinstance(data, bytes):
        return data.decode("ascii", errors="replace")
    return data


def parse_fasta(data: bytes | str) -> list[tuple[str, str]]:
    text = _text(data)
    if not text.strip():
        raise EmptyInput("no FASTA content")
    records: list[tuple[str, str]] = []
    header = None
    buf: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(">"):
            if header is not None:
                records.append((header, "".join(buf).upper()))
            parts = line[1:].split()
            header = parts[0] if parts else ""
            buf = []
        elif header is None:
            raise MalformedRecord(f"sequence data before first header (line {lineno})")
        else:
            buf.append(line)
    if header is not None:
        records.append((header, "".join(buf).upper()))
    return records


def parse_fastq(data: bytes | str) -> list[tuple[str, str]]:
    text = _text(data)
    lines = [ln.rstrip("\r") for ln in text.split("\n")]
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise EmptyInput("no FASTQ content")
    if len(lines) % 4:
        raise MalformedRecord(f"truncated FASTQ: {len(lines)} lines is not a multiple of 4")
    records = []
    for i in range(0, len(lines), 4):
        head, seq, sep, qual = lines[i:i + 4]
        if not head.startswith("@"):
            raise MalformedRecord(f"line {i + 1}: expected '@' header")
        if not sep.startswith("+"):
            raise MalformedRecord(f"line {i + 3}: missing '+' separator")
        if len(qual) != len(seq):
            raise MalformedRecord(f"line {i + 4}: quality length {len(qual)} != sequence length {len(seq)}")
        parts = head[1:].split()
        records.append((parts[0] if parts else "", seq.strip().upper()))
    return records


def _sample_name(path: str) -> str:
    name = os.path.basename(path)
    if name.endswith(".gz"):
        name = name[:-3]
    for suf in _SUFFIXES:
        if name.lower().endswith(suf):
            return name[: -len(suf)]
    return name


def read_records(path: str) -> tuple[str, list[tuple[str, str]]]:
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        data = fh.read()
    head = data.lstrip()[:1]
    try:
        if head == b"@":
            return "fastq", parse_fastq(data)
        return "fasta", parse_fasta(data)
    except InputError as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def load_dataset(paths: str | Iterable[str]) -> Dataset:
    if isinstance(paths, str):
        paths = [paths]
    files: set[str] = set()
    for pattern in paths:
        hits = glob.glob(pattern)
        if not hits and os.path.isfile(pattern):
            hits = [pattern]
        files.update(h for h in hits if os.path.isfile(h))
    if not files:
        raise NoFilesMatched(f"no input files match {list(paths)!r}")
    ordered = sorted(files, key=lambda p: (os.path.basename(p), p))
    samples = []
    for i, path in enumerate(ordered):
        fmt, records = read_records(path)
        frags = tuple(seq for _, seq in records if seq)
        if len(frags) < len(records):
            log.warning("%s: skipped %d empty records", path, len(records) - len(frags))
        if not frags:
            raise EmptyInput(f"{path}: no residues")
        samples.append(Sample(i, _sample_name(path), frags, fmt))
    return Dataset(tuple(samples))


def chunk_sample(sample: Sample, slices: int, overlap: int, target: int | None = None) -> list[Chunk]:
    """Split each fragment into chunks of about ``target`` new residues.

    Chunk bodies carry ``left_overlap`` residues copied from the end of the
    preceding chunk of the same fragment, so with ``overlap = k - 1`` every
    length-k window lies wholly inside exactly one chunk once windows falling
    entirely inside the overlap are skipped (see ``window_skip``).
    """
    if slices < 1:
        raise ValueError("slices must be >= 1")
    if overlap < 0:
        raise ValueError("overlap must be >= 0")
    if target is None:
        target = math.ceil(sample.length / slices)
    target = max(target, overlap + 1, 1)
    chunks = []
    for fid, frag in enumerate(sample.fragments):
        raw = frag.encode("ascii")
        pieces = max(1, len(raw) // target)
        bounds = [len(raw) * p // pieces for p in range(pieces + 1)]
        for p in range(pieces):
            start, end = bounds[p], bounds[p + 1]
            lo = min(start, overlap)
            chunks.append(Chunk(sample.sample_id, fid, start - lo, raw[start - lo:end], lo))
    return chunks


def chunk_dataset(dataset: Dataset, slices: int, overlap: int) -> list[Chunk]:
    target = math.ceil(dataset.total_length / max(1, slices))
    out = []
    for s in dataset.samples:
        out.extend(chunk_sample(s, slices, overlap, target))
    return out


def window_skip(chunk: Chunk, width: int) -> int:
    """Leading window starts whose window lies entirely inside the left overlap."""
    return max(0, chunk.left_overlap - width + 1)
