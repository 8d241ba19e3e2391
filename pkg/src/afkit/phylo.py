"""Distance-based trees, tree metrics and the noise-robustness sweep."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from afkit.errors import (DuplicateLeafLabel, EmptyPool, LeafSetMismatch, NewickSyntaxError,
                          NonFiniteMatrix, TooFewTaxa)

log = logging.getLogger(__name__)


class NegativeBranch(UserWarning):
    pass


@dataclass(eq=False)
class Node:
    name: str | None = None
    length: float | None = None
    children: list["Node"] = field(default_factory=list)
    parent: "Node | None" = field(default=None, repr=False)

    def add(self, child: "Node") -> "Node":
        child.parent = self
        self.children.append(child)
        return child

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def walk(self) -> Iterable["Node"]:
        """Pre-order traversal."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


@dataclass(eq=False)
class PhyloTree:
    root: Node
    rooted: bool = True

    def nodes(self) -> list[Node]:
        return list(self.root.walk())

    def leaves(self) -> list[Node]:
        return [n for n in self.root.walk() if n.is_leaf]

    @property
    def labels(self) -> list[str]:
        return [n.name for n in self.leaves()]

    def leaf(self, name: str) -> Node:
        for n in self.leaves():
            if n.name == name:
                return n
        raise KeyError(name)

    def __str__(self) -> str:
        return write_newick(self)


# Newick ----------------------------------------------------------------------------

_PUNCT = set("(),:;[]'")


class _NewickParser:
    def __init__(self, text: str):
        self.s = text
        self.i = 0

    def error(self, msg: str):
        raise NewickSyntaxError(msg, self.i)

    def skip(self):
        s = self.s
        while self.i < len(s):
            c = s[self.i]
            if c.isspace():
                self.i += 1
            elif c == "[":
                end = s.find("]", self.i)
                if end < 0:
                    self.error("unterminated comment")
                self.i = end + 1
            else:
                break

    def peek(self) -> str:
        self.skip()
        return self.s[self.i] if self.i < len(self.s) else ""

    def label(self) -> str | None:
        self.skip()
        s = self.s
        if self.i < len(s) and s[self.i] == "'":
            self.i += 1
            out = []
            while True:
                if self.i >= len(s):
                    self.error("unterminated quoted label")
                c = s[self.i]
                if c == "'":
                    if self.i + 1 < len(s) and s[self.i + 1] == "'":
                        out.append("'")
                        self.i += 2
                        continue
                    self.i += 1
                    return "".join(out)
                out.append(c)
                self.i += 1
        start = self.i
        while self.i < len(s) and s[self.i] not in _PUNCT and not s[self.i].isspace():
            self.i += 1
        text = s[start:self.i]
        return text or None

    def length(self) -> float | None:
        if self.peek() != ":":
            return None
        self.i += 1
        self.skip()
        start = self.i
        while self.i < len(self.s) and (self.s[self.i] in "+-.eE" or self.s[self.i].isdigit()):
            self.i += 1
        try:
            return float(self.s[start:self.i])
        except ValueError:
            self.i = start
            self.error("bad branch length")

    def subtree(self) -> Node:
        node = Node()
        if self.peek() == "(":
            self.i += 1
            while True:
                node.add(self.subtree())
                c = self.peek()
                if c == ",":
                    self.i += 1
                elif c == ")":
                    self.i += 1
                    break
                else:
                    self.error("expected ',' or ')'")
        node.name = self.label()
        node.length = self.length()
        return node

    def parse(self) -> Node:
        if not self.peek():
            self.error("empty Newick string")
        root = self.subtree()
        if self.peek() != ";":
            self.error("expected ';'")
        self.i += 1
        if self.peek():
            self.error("trailing characters after ';'")
        return root


def parse_newick(text: str) -> PhyloTree:
    root = _NewickParser(text.strip()).parse()
    tree = PhyloTree(root, rooted=True)
    seen: set[str] = set()
    for leaf in tree.leaves():
        if leaf.name is None:
            raise NewickSyntaxError("unlabelled leaf", 0)
        if leaf.name in seen:
            raise DuplicateLeafLabel(f"leaf label {leaf.name!r} appears twice")
        seen.add(leaf.name)
    return tree


def read_newick(path: str) -> PhyloTree:
    with open(path) as fh:
        return parse_newick(fh.read())


def _fmt_len(x: float) -> str:
    r = repr(float(x))
    return r[:-2] if r.endswith(".0") else r


def _fmt_label(name: str) -> str:
    if any(c in _PUNCT or c.isspace() for c in name):
        return "'" + name.replace("'", "''") + "'"
    return name


def write_newick(tree: PhyloTree) -> str:
    def rec(node: Node) -> str:
        out = ""
        if node.children:
            out = "(" + ",".join(rec(c) for c in node.children) + ")"
        if node.name:
            out += _fmt_label(node.name)
        if node.length is not None and node is not tree.root:
            out += ":" + _fmt_len(node.length)
        return out
    return rec(tree.root) + ";"


# matrices ---------------------------------------------------------------------------

def as_distance(labels: Sequence[str], values: np.ndarray, orientation: str = "distance") -> np.ndarray:
    """Similarity matrices become ``max_offdiag - s``; distances are returned as floats."""
    d = np.array(values, dtype=float)
    n = d.shape[0]
    if not np.all(np.isfinite(d[~np.eye(n, dtype=bool)])):
        raise NonFiniteMatrix("matrix has non-finite off-diagonal entries")
    if orientation == "similarity":
        off = d[~np.eye(n, dtype=bool)]
        d = off.max() - d
    np.fill_diagonal(d, 0.0)
    return 0.5 * (d + d.T)


def _unpack(matrix) -> tuple[list[str], np.ndarray]:
    if hasattr(matrix, "values") and hasattr(matrix, "labels"):
        return list(matrix.labels), as_distance(matrix.labels, matrix.values,
                                                getattr(matrix, "orientation", "distance"))
    labels, values = matrix
    return list(labels), as_distance(labels, values)


def _argmin_upper(m: np.ndarray, active: list[int]) -> tuple[int, int]:
    """Smallest entry among active pairs i<j; ties go to the smallest (i, j)."""
    idx = np.array(active)
    sub = m[np.ix_(idx, idx)].copy()
    sub[np.tril_indices(len(idx))] = np.inf
    flat = int(np.argmin(sub))
    a, b = divmod(flat, len(idx))
    return int(idx[a]), int(idx[b])


def upgma(matrix) -> PhyloTree:
    labels, d = _unpack(matrix)
    n = len(labels)
    if n < 2:
        raise TooFewTaxa("UPGMA needs at least 2 taxa")
    d = d.copy()
    nodes = [Node(name) for name in labels]
    height = [0.0] * n
    size = [1] * n
    active = list(range(n))
    while len(active) > 1:
        i, j = _argmin_upper(d, active)
        h = d[i, j] / 2.0
        parent = Node()
        for c, ch in ((i, nodes[i]), (j, nodes[j])):
            ch.length = max(0.0, h - height[c])
            parent.add(ch)
        row = (size[i] * d[i] + size[j] * d[j]) / (size[i] + size[j])
        d[i, :] = row
        d[:, i] = row
        d[i, i] = 0.0
        nodes[i], height[i], size[i] = parent, h, size[i] + size[j]
        active.remove(j)
    return PhyloTree(nodes[active[0]], rooted=True)


def _clamp(x: float, what: str) -> float:
    if x < 0:
        warnings.warn(f"negative branch length {x:.3g} on {what} clamped to 0", NegativeBranch, stacklevel=3)
        return 0.0
    return float(x)


def nj(matrix) -> PhyloTree:
    """Neighbour joining; the result is unrooted (root is a trifurcation)."""
    labels, d = _unpack(matrix)
    n = len(labels)
    if n < 3:
        raise TooFewTaxa("neighbour joining needs at least 3 taxa")
    d = d.copy()
    nodes = [Node(name) for name in labels]
    active = list(range(n))
    while len(active) > 3:
        r = len(active)
        idx = np.array(active)
        sub = d[np.ix_(idx, idx)]
        tot = sub.sum(axis=1)
        q = (r - 2) * sub - tot[:, None] - tot[None, :]
        q[np.tril_indices(r)] = np.inf
        a, b = divmod(int(np.argmin(q)), r)
        i, j = int(idx[a]), int(idx[b])
        li = 0.5 * d[i, j] + (tot[a] - tot[b]) / (2 * (r - 2))
        lj = d[i, j] - li
        parent = Node()
        nodes[i].length = _clamp(li, "an NJ edge")
        nodes[j].length = _clamp(lj, "an NJ edge")
        parent.add(nodes[i])
        parent.add(nodes[j])
        row = 0.5 * (d[i] + d[j] - d[i, j])
        d[i, :] = row
        d[:, i] = row
        d[i, i] = 0.0
        nodes[i] = parent
        active.remove(j)
    i, j, k = active
    center = Node()
    for x, y, z in ((i, j, k), (j, i, k), (k, i, j)):
        nodes[x].length = _clamp(0.5 * (d[x, y] + d[x, z] - d[y, z]), "an NJ edge")
        center.add(nodes[x])
    return PhyloTree(center, rooted=False)


def tree_distances(tree: PhyloTree) -> tuple[list[str], np.ndarray]:
    """Leaf-to-leaf path lengths (missing lengths count as 0), labels sorted."""
    adj = _adjacency(tree)
    leaves = sorted(tree.leaves(), key=lambda x: x.name)
    n = len(leaves)
    out = np.zeros((n, n))
    for a, leaf in enumerate(leaves):
        dist = _dists_from(adj, leaf)
        for b, other in enumerate(leaves):
            out[a, b] = dist[other]
    return [x.name for x in leaves], out


def _adjacency(tree: PhyloTree) -> dict[Node, list[tuple[Node, float]]]:
    adj: dict[Node, list[tuple[Node, float]]] = {}
    for node in tree.root.walk():
        adj.setdefault(node, [])
        for c in node.children:
            w = c.length or 0.0
            adj[node].append((c, w))
            adj.setdefault(c, []).append((node, w))
    return adj


def _dists_from(adj, src: Node) -> dict[Node, float]:
    dist = {src: 0.0}
    stack = [src]
    while stack:
        u = stack.pop()
        for v, w in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + w
                stack.append(v)
    return dist


def _reroot(adj, root: Node) -> Node:
    """Copy the undirected tree hanging from ``root``."""
    def build(u: Node, came: Node | None, length: float | None) -> Node:
        new = Node(u.name, length)
        for v, w in adj[u]:
            if v is not came:
                new.add(build(v, u, w))
        return new

    return build(root, None, None)


def midpoint_root(tree: PhyloTree) -> PhyloTree:
    """Root at the midpoint of the longest leaf-to-leaf path (ties: first label pair)."""
    adj = _adjacency(tree)
    leaves = sorted(tree.leaves(), key=lambda x: x.name)
    if len(leaves) < 2:
        return PhyloTree(_reroot(adj, tree.root), True)
    best = (-1.0, None, None)
    for a in leaves:
        dist = _dists_from(adj, a)
        for b in leaves:
            if dist[b] > best[0] + 1e-12:
                best = (dist[b], a, b)
    total, a, b = best
    # path from b back to a
    parent: dict[Node, tuple[Node | None, float]] = {a: (None, 0.0)}
    stack = [a]
    while stack:
        u = stack.pop()
        for v, w in adj[u]:
            if v not in parent:
                parent[v] = (u, w)
                stack.append(v)
    half = total / 2.0
    walked = 0.0
    u = b
    while True:
        p, w = parent[u]
        if p is None or walked + w >= half:
            break
        walked += w
        u = p
    p, w = parent[u]
    off = half - walked  # distance from u toward p
    if p is None or off <= 0:
        return PhyloTree(_reroot(adj, u), True)
    if off >= w:
        return PhyloTree(_reroot(adj, p), True)
    mid = Node()
    adj[u] = [(v, x) if v is not p else (mid, off) for v, x in adj[u]]
    adj[p] = [(v, x) if v is not u else (mid, w - off) for v, x in adj[p]]
    adj[mid] = [(u, off), (p, w - off)]
    return PhyloTree(_reroot(adj, mid), True)


# tree metrics --------------------------------------------------------------------------

def _leaf_index(t1: PhyloTree, t2: PhyloTree) -> dict[str, int]:
    l1, l2 = sorted(t1.labels), sorted(t2.labels)
    if l1 != l2:
        raise LeafSetMismatch("trees have different leaf sets")
    return {name: i for i, name in enumerate(l1)}


def _clade_masks(tree: PhyloTree, index: dict[str, int]) -> dict[Node, int]:
    masks: dict[Node, int] = {}
    for node in reversed(list(tree.root.walk())):
        if node.is_leaf:
            masks[node] = 1 << index[node.name]
        else:
            m = 0
            for c in node.children:
                m |= masks[c]
            masks[node] = m
    return masks


def splits(tree: PhyloTree, index: dict[str, int] | None = None) -> set[int]:
    """Non-trivial bipartitions as bitmasks of the side not holding leaf 0."""
    if index is None:
        index = {name: i for i, name in enumerate(sorted(tree.labels))}
    n = len(index)
    full = (1 << n) - 1
    out = set()
    for node, m in _clade_masks(tree, index).items():
        if node is tree.root:
            continue
        if m & 1:
            m = full ^ m
        if 2 <= bin(m).count("1") <= n - 2:
            out.add(m)
    return out


def clusters(tree: PhyloTree, index: dict[str, int] | None = None) -> list[int]:
    """Leaf sets of internal non-root nodes."""
    if index is None:
        index = {name: i for i, name in enumerate(sorted(tree.labels))}
    return [m for node, m in _clade_masks(tree, index).items()
            if not node.is_leaf and node is not tree.root]


def rf_distance(t1: PhyloTree, t2: PhyloTree) -> int:
    index = _leaf_index(t1, t2)
    return len(splits(t1, index) ^ splits(t2, index))


def mcm_cost_matrix(c1: list[int], c2: list[int]) -> np.ndarray:
    size = max(len(c1), len(c2))
    a = c1 + [0] * (size - len(c1))
    b = c2 + [0] * (size - len(c2))
    return np.array([[bin(x ^ y).count("1") for y in b] for x in a], dtype=np.int64).reshape(size, size)


def mcm_distance(t1: PhyloTree, t2: PhyloTree) -> int:
    """Matching Cluster distance on rooted trees (minimum-cost perfect cluster matching)."""
    index = _leaf_index(t1, t2)
    cost = mcm_cost_matrix(clusters(t1, index), clusters(t2, index))
    if cost.size == 0:
        return 0
    r, c = linear_sum_assignment(cost)
    return int(cost[r, c].sum())


# noise injection -------------------------------------------------------------------------

@dataclass
class NoiseSpec:
    percent: float = 0.0
    source: str = "simulated_pool"  # or additive_uniform
    repeats: int = 1
    seed: int = 42
    max_delta: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.percent <= 1.0:
            raise ValueError("percent must lie in [0, 1]")
        if self.source not in ("simulated_pool", "additive_uniform"):
            raise ValueError(f"unknown noise source {self.source!r}")


def _pool_arrays(pool) -> list[np.ndarray]:
    if pool is None:
        return []
    if isinstance(pool, np.ndarray) and pool.ndim == 1:
        return [pool] if pool.size else []
    out = []
    for m in pool:
        m = np.asarray(m, dtype=float)
        if m.ndim == 2:
            m = m[~np.eye(m.shape[0], dtype=bool)]
        if m.size:
            out.append(m)
    return out


def inject_noise(values: np.ndarray, spec: NoiseSpec, rng: np.random.Generator,
                 pool=None) -> np.ndarray:
    """Corrupt ``floor(percent * m)`` distinct off-diagonal pairs, symmetrically."""
    out = np.array(values, dtype=float)
    n = out.shape[0]
    iu = np.triu_indices(n, 1)
    m = iu[0].size
    count = int(math.floor(spec.percent * m + 1e-9))
    if count == 0:
        return out
    chosen = rng.choice(m, size=count, replace=False)
    rows, cols = iu[0][chosen], iu[1][chosen]
    if spec.source == "simulated_pool":
        arrays = _pool_arrays(pool)
        if not arrays:
            raise EmptyPool("simulated_pool noise needs a non-empty pool of matrices")
        which = rng.integers(0, len(arrays), size=count)
        new = np.array([arrays[w][rng.integers(0, arrays[w].size)] for w in which])
    else:
        off = out[iu]
        fin = off[np.isfinite(off)]
        delta = spec.max_delta if spec.max_delta is not None else (float(fin.max()) if fin.size else 0.0)
        new = out[rows, cols] + rng.uniform(0.0, delta, size=count)
    out[rows, cols] = new
    out[cols, rows] = new
    return out


# robustness sweep ---------------------------------------------------------------------------

BUILDERS: dict[str, Callable] = {"nj": nj, "upgma": upgma}


def score_tree(metric: str, built: PhyloTree, gold: PhyloTree) -> int:
    if metric == "rf":
        return rf_distance(built, gold)
    if metric == "mcm":
        if not built.rooted:
            built = midpoint_root(built)
        return mcm_distance(built, gold)
    raise ValueError(f"unknown metric {metric!r}")


@dataclass(frozen=True)
class SweepRow:
    builder: str
    metric: str
    percent: float
    mean: float
    stddev: float
    repeats: int


def robustness_sweep(matrix, gold: PhyloTree, builders: Sequence[str] = ("upgma", "nj"),
                     metrics: Sequence[str] = ("rf", "mcm"), percents: Sequence[float] = (0.0, 0.1, 0.3, 0.5),
                     repeats: int = 10, source: str = "simulated_pool", pool=None, seed: int = 42,
                     max_delta: float | None = None,
                     on_tree: Callable[[str, float, int, PhyloTree], None] | None = None) -> list[SweepRow]:
    """Mean/stddev of tree error against ``gold`` as noise grows.

    Every builder sees the same corrupted matrices: repeat ``r`` at percent
    index ``p`` draws from the stream seeded by (seed, p, r).
    """
    labels = list(matrix.labels)
    values = np.asarray(matrix.values, dtype=float)
    orientation = getattr(matrix, "orientation", "distance")
    if sorted(labels) != sorted(gold.labels):
        raise LeafSetMismatch("gold tree leaves differ from matrix labels")
    scores = {(b, m, p): [] for b in builders for m in metrics for p in range(len(percents))}
    clamped = 0
    for p, pct in enumerate(percents):
        reps = 1 if pct == 0 else repeats
        spec = NoiseSpec(pct, source, repeats, seed, max_delta)
        for r in range(reps):
            rng = np.random.default_rng(np.random.SeedSequence([seed, p, r]))
            noisy = inject_noise(values, spec, rng, pool)
            dist = as_distance(labels, noisy, orientation)
            for b in builders:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always", NegativeBranch)
                    tree = BUILDERS[b]((labels, dist))
                clamped += sum(issubclass(w.category, NegativeBranch) for w in caught)
                if on_tree is not None:
                    on_tree(b, pct, r, tree)
                for met in metrics:
                    scores[(b, met, p)].append(score_tree(met, tree, gold))
    if clamped:
        log.info("robustness sweep: %d negative branch lengths clamped to 0", clamped)
    rows = []
    for b in builders:
        for met in metrics:
            for p, pct in enumerate(percents):
                v = np.array(scores[(b, met, p)], dtype=float)
                rows.append(SweepRow(b, met, float(pct), float(v.mean()), float(v.std()), int(v.size)))
    return rows


def format_sweep(rows: Sequence[SweepRow]) -> str:
    lines = ["builder\tmetric\tpercent\tmean\tstddev\trepeats"]
    lines += [f"{r.builder}\t{r.metric}\t{r.percent:g}\t{r.mean:.6g}\t{r.stddev:.6g}\t{r.repeats}"
              for r in rows]
    return "\n".join(lines) + "\n"

