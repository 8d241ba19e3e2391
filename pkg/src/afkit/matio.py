"""Distance-matrix text formats: PHYLIP square, labelled TSV, full-precision TSV."""

from __future__ import annotations

import os
import tempfile

import numpy as np

from afkit.errors import MatrixFormatError


def phylip_names(labels: list[str]) -> list[str]:
    """Names cut to 10 characters, made unique with numeric suffixes."""
    out: list[str] = []
    seen: set[str] = set()
    for lab in labels:
        name = lab[:10]
        i = 1
        while name in seen:
            suffix = str(i)
            name = lab[:10 - len(suffix)] + suffix
            i += 1
        seen.add(name)
        out.append(name)
    return out


def format_phylip(labels: list[str], values: np.ndarray) -> str:
    lines = [f"{len(labels)}"]
    for name, row in zip(phylip_names(labels), values):
        lines.append(f"{name:<10}" + "".join(f" {v:.6f}" for v in row))
    return "\n".join(lines) + "\n"


def format_tsv(labels: list[str], values: np.ndarray, fmt: str = "%.12g") -> str:
    lines = ["\t" + "\t".join(labels)]
    for lab, row in zip(labels, values):
        lines.append(lab + "\t" + "\t".join(fmt % v for v in row))
    return "\n".join(lines) + "\n"


def atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_full(path: str, labels: list[str], values: np.ndarray) -> None:
    """Round-trip exact TSV (17 significant digits)."""
    atomic_write(path, format_tsv(labels, values, "%.17g"))


def parse_matrix(text: str) -> tuple[list[str], np.ndarray]:
    """Parse either a PHYLIP square matrix or a labelled TSV."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MatrixFormatError("empty matrix file")
    try:
        if lines[0].startswith("\t"):
            labels = lines[0].split("\t")[1:]
            rows = [ln.split("\t") for ln in lines[1:]]
            vals = np.array([[float(x) for x in r[1:]] for r in rows])
        else:
            n = int(lines[0].split()[0])
            rows = [ln.split() for ln in lines[1:n + 1]]
            labels = [r[0] for r in rows]
            vals = np.array([[float(x) for x in r[1:]] for r in rows])
    except (ValueError, IndexError) as exc:
        raise MatrixFormatError(f"unreadable matrix: {exc}") from exc
    if vals.shape != (len(labels), len(labels)):
        raise MatrixFormatError(f"matrix shape {vals.shape} does not match {len(labels)} labels")
    return labels, vals


def read_matrix(path: str) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        try:
            return parse_matrix(fh.read())
        except MatrixFormatError as exc:
            raise MatrixFormatError(f"{path}: {exc}") from exc
