"""Graph ingestion, storage, neighborhood/negative sampling, and edge splitting.

Graphs are built once and never mutated.  The adjacency structure is always
the *undirected union* of the edge set: a node's neighbors are all nodes it
touches in either direction, which is also what defines its degree.  The
stored edge list keeps the parsed orientation (and weights) for training.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence

import numpy as np

PAD_DTYPE = np.int64


class ParseError(ValueError):
    """Malformed edge-list or label input; carries the 1-based line number."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class ValidationError(ValueError):
    """Input violates a documented precondition."""


@dataclass(frozen=True)
class Graph:
    """Immutable weighted graph with a CSR view of the undirected adjacency.

    ``degrees[v]`` counts distinct nodes adjacent to ``v`` in either
    direction.  ``edges``/``edge_weights`` hold the deduplicated edge set
    (canonicalized as (min, max) when undirected).  ``padding_id`` is the
    reserved sentinel used for padded neighborhood slots; it is one past the
    last real node id and maps to a frozen all-zero embedding row.
    """

    n: int
    m: int
    directed: bool
    indptr: np.ndarray       # (n+1,) int64 offsets into adj
    adj: np.ndarray          # sorted neighbor ids, concatenated per node
    adj_weights: np.ndarray  # combined weight per adjacency entry
    degrees: np.ndarray      # (n,) int64
    edges: np.ndarray        # (m, 2) int64
    edge_weights: np.ndarray  # (m,) float64
    node_labels: tuple[str, ...] | None = None
    self_loops_dropped: int = 0

    @property
    def padding_id(self) -> int:
        return self.n

    def neighbors_of(self, u: int) -> np.ndarray:
        return self.adj[self.indptr[u]:self.indptr[u + 1]]

    def degree(self, u: int) -> int:
        return int(self.indptr[u + 1] - self.indptr[u])

    def has_edge(self, u: int, v: int) -> bool:
        """True if u and v are joined by an edge in either direction."""
        row = self.neighbors_of(u)
        i = np.searchsorted(row, v)
        return bool(i < row.shape[0] and row[i] == v)

    def label_to_id(self) -> dict[str, int]:
        if self.node_labels is None:
            return {str(i): i for i in range(self.n)}
        return {lab: i for i, lab in enumerate(self.node_labels)}


def from_edges(
    n: int,
    edges: Sequence | np.ndarray,
    weights: Sequence | np.ndarray | None = None,
    *,
    directed: bool = False,
    node_labels: Sequence[str] | None = None,
) -> Graph:
    """Build a :class:`Graph` from an edge array.

    Duplicate edges (including reversed pairs when undirected) are collapsed
    by summing their weights.  Self-loops and non-positive weights are
    rejected; endpoints must lie in ``[0, n)``.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if weights is None:
        weights = np.ones(edges.shape[0], dtype=np.float64)
    else:
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if weights.shape[0] != edges.shape[0]:
        raise ValidationError("weights length does not match edge count")
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise ValidationError(f"edge endpoint outside [0, {n})")
    if np.any(edges[:, 0] == edges[:, 1]):
        raise ValidationError("self-loops are not allowed")
    if edges.size and (not np.all(np.isfinite(weights)) or np.any(weights <= 0)):
        raise ValidationError("edge weights must be finite and > 0")

    if not directed and edges.size:
        edges = np.sort(edges, axis=1)  # canonical (min, max)

    if edges.size:
        keys = edges[:, 0] * np.int64(n) + edges[:, 1]
        uniq, inverse = np.unique(keys, return_inverse=True)
        edge_weights = np.bincount(inverse, weights=weights, minlength=uniq.shape[0])
        edges = np.stack([uniq // n, uniq % n], axis=1)
    else:
        edges = np.zeros((0, 2), dtype=np.int64)
        edge_weights = np.zeros(0, dtype=np.float64)

    # Undirected union adjacency: both endpoints see each other.
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    w2 = np.concatenate([edge_weights, edge_weights])
    if src.size:
        akeys = src * np.int64(n) + dst
        auniq, ainv = np.unique(akeys, return_inverse=True)
        adj_weights = np.bincount(ainv, weights=w2, minlength=auniq.shape[0])
        adj_src = (auniq // n).astype(np.int64)
        adj = (auniq % n).astype(np.int64)
        counts = np.bincount(adj_src, minlength=n)
    else:
        adj = np.zeros(0, dtype=np.int64)
        adj_weights = np.zeros(0, dtype=np.float64)
        counts = np.zeros(n, dtype=np.int64)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])

    return Graph(
        n=n,
        m=int(edges.shape[0]),
        directed=directed,
        indptr=indptr,
        adj=adj,
        adj_weights=adj_weights,
        degrees=counts.astype(np.int64),
        edges=edges,
        edge_weights=edge_weights,
        node_labels=tuple(node_labels) if node_labels is not None else None,
    )


def _open_lines(source) -> list[str]:
    if isinstance(source, (str, Path)):
        text = Path(source).read_bytes().decode("utf-8")
    elif isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, io.TextIOBase):
        text = source.read()
    elif hasattr(source, "read"):
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    else:
        raise TypeError(f"unsupported edge-list source: {type(source)!r}")
    return text.splitlines()


def parse_edge_list(source, directed: bool = False) -> Graph:
    """Parse a whitespace-separated edge list into a :class:`Graph`.

    Each non-comment line is ``u v`` or ``u v w``.  Node ids are arbitrary
    tokens remapped to dense integers in first-appearance order; the mapping
    is kept on ``Graph.node_labels``.  Duplicate edges collapse by summing
    weights; self-loops are dropped and counted.

    Raises:
        ParseError: malformed line (wrong token count, unparseable weight).
        ValidationError: non-positive or non-finite weight.
    """
    ids: dict[str, int] = {}
    labels: list[str] = []
    src: list[int] = []
    dst: list[int] = []
    wts: list[float] = []
    self_loops = 0

    for line_no, raw in enumerate(_open_lines(source), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise ParseError(f"expected 'u v' or 'u v w', got {line!r}", line_no)
        tu, tv = parts[0], parts[1]
        if len(parts) == 3:
            try:
                w = float(parts[2])
            except ValueError:
                raise ParseError(f"bad weight {parts[2]!r}", line_no) from None
            if not np.isfinite(w) or w <= 0:
                raise ValidationError(f"line {line_no}: weight must be finite and > 0, got {w}")
        else:
            w = 1.0
        if tu == tv:
            self_loops += 1
            continue
        for tok in (tu, tv):
            if tok not in ids:
                ids[tok] = len(labels)
                labels.append(tok)
        src.append(ids[tu])
        dst.append(ids[tv])
        wts.append(w)

    g = from_edges(
        len(labels),
        np.array(list(zip(src, dst)), dtype=np.int64).reshape(-1, 2),
        np.array(wts, dtype=np.float64),
        directed=directed,
        node_labels=labels,
    )
    object.__setattr__(g, "self_loops_dropped", self_loops)
    return g


def serialize_edge_list(g: Graph, dest: IO[str] | None = None) -> str | None:
    """Write ``s t w`` lines (dense ids, repr weights) that re-parse exactly."""
    lines = [
        f"{int(s)} {int(t)} {float(w)!r}\n"
        for (s, t), w in zip(g.edges, g.edge_weights)
    ]
    text = "".join(lines)
    if dest is None:
        return text
    dest.write(text)
    return None


def write_mapping(g: Graph, path: str | Path) -> None:
    """Emit the token -> dense-id remapping as a two-column TSV."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("token\tid\n")
        labels = g.node_labels or tuple(str(i) for i in range(g.n))
        for i, lab in enumerate(labels):
            fh.write(f"{lab}\t{i}\n")


def parse_labels(source) -> dict[str, str]:
    """Parse a ground-truth membership file with ``node_id community_id`` lines."""
    out: dict[str, str] = {}
    for line_no, raw in enumerate(_open_lines(source), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"expected 'node community', got {line!r}", line_no)
        out[parts[0]] = parts[1]
    return out


@dataclass(frozen=True)
class NeighborhoodSample:
    """Fixed-length neighbor sample with a validity mask.

    ``ids[i]`` is a real neighbor of ``owner`` where ``mask[i]`` is True and
    the padding sentinel elsewhere.  Real entries are distinct (drawn without
    replacement).
    """

    ids: np.ndarray    # (size,) int64
    mask: np.ndarray   # (size,) bool
    owner: int

    @property
    def size(self) -> int:
        return int(self.ids.shape[0])

    @property
    def n_real(self) -> int:
        return int(self.mask.sum())


def sample_neighborhood(
    g: Graph, u: int, size: int, rng: np.random.Generator
) -> NeighborhoodSample:
    """Draw ``min(D(u), size)`` distinct first-order neighbors of ``u``.

    Slots beyond ``D(u)`` are padded with ``g.padding_id`` and masked out.
    Deterministic given the generator state.
    """
    if not 0 <= u < g.n:
        raise ValidationError(f"node id {u} outside [0, {g.n})")
    if size < 1:
        raise ValidationError("neighborhood size must be >= 1")
    neigh = g.neighbors_of(u)
    d = neigh.shape[0]
    if d == 0:
        raise ValidationError(f"node {u} is isolated and has no neighborhood to sample")
    ids = np.full(size, g.padding_id, dtype=PAD_DTYPE)
    mask = np.zeros(size, dtype=bool)
    if d <= size:
        ids[:d] = neigh
        mask[:d] = True
    else:
        ids[:] = rng.choice(neigh, size=size, replace=False)
        mask[:] = True
    return NeighborhoodSample(ids=ids, mask=mask, owner=int(u))


class NegativeSampler:
    """Draws nodes with probability proportional to ``degree ** 0.75``.

    Uses Walker's alias method, so each draw costs O(1).  The distribution is
    normalized over all nodes; zero-degree nodes get probability 0 and are
    never drawn.
    """

    def __init__(self, probs: np.ndarray):
        probs = np.asarray(probs, dtype=np.float64)
        total = probs.sum()
        if not np.isfinite(total) or total <= 0:
            raise ValidationError("sampling weights must have a positive finite sum")
        self._probs = probs / total
        self._accept, self._alias = self._build_alias(self._probs)

    @classmethod
    def from_degrees(cls, degrees: np.ndarray) -> "NegativeSampler":
        return cls(np.asarray(degrees, dtype=np.float64) ** 0.75)

    @property
    def probs(self) -> np.ndarray:
        """Analytic sampling probabilities (sums to 1)."""
        return self._probs

    @staticmethod
    def _build_alias(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = probs.shape[0]
        accept = probs * n
        alias = np.arange(n, dtype=np.int64)
        small = [i for i in range(n) if accept[i] < 1.0]
        large = [i for i in range(n) if accept[i] >= 1.0]
        while small and large:
            s, l = small.pop(), large.pop()
            alias[s] = l
            accept[l] -= 1.0 - accept[s]
            (small if accept[l] < 1.0 else large).append(l)
        # Leftovers are 1.0 up to rounding.
        for i in small + large:
            accept[i] = 1.0
        return accept, alias

    def draw(self, rng: np.random.Generator, size=None) -> np.ndarray | int:
        k = rng.integers(0, self._probs.shape[0], size=size)
        u = rng.random(size=size)
        picked = np.where(u < self._accept[k], k, self._alias[k])
        if size is None:
            return int(picked)
        return picked.astype(np.int64)


def build_negative_sampler(g: Graph) -> NegativeSampler:
    """Sampler over nodes with p(u) = D(u)^0.75 / sum_v D(v)^0.75."""
    if g.m < 1:
        raise ValidationError("graph has no edges")
    return NegativeSampler.from_degrees(g.degrees)


@dataclass(frozen=True)
class EvalSplit:
    """Train / held-out-positive / sampled-negative edge partition.

    ``stranded`` lists nodes that have edges in the full graph but none in
    the training set; their test pairs are retained and scored with the
    global-embedding fallback.
    """

    train_edges: np.ndarray    # (k, 2) int64
    train_weights: np.ndarray  # (k,)
    test_pos: np.ndarray       # (j, 2) int64
    test_neg: np.ndarray       # (j, 2) int64
    fraction: float
    stranded: np.ndarray       # int64 node ids


def split_edges(g: Graph, train_fraction: float, rng: np.random.Generator) -> EvalSplit:
    """Uniformly random edge holdout.

    ``round(train_fraction * m)`` edges train; the rest are test positives.
    Test negatives are distinct node pairs sampled uniformly that are absent
    from the edge set in either orientation, one per test positive.
    """
    if not 0 < train_fraction <= 1:
        raise ValidationError("train_fraction must be in (0, 1]")
    k = int(round(train_fraction * g.m))
    if k < 1:
        raise ValidationError(
            f"train_fraction {train_fraction} leaves no training edges (m={g.m})"
        )
    perm = rng.permutation(g.m)
    train_idx = np.sort(perm[:k])
    test_idx = np.sort(perm[k:])
    test_pos = g.edges[test_idx]
    test_neg = _sample_negative_pairs(g, test_pos.shape[0], rng)

    train_deg = np.bincount(g.edges[train_idx].ravel(), minlength=g.n)
    stranded = np.flatnonzero((train_deg == 0) & (g.degrees > 0)).astype(np.int64)

    return EvalSplit(
        train_edges=g.edges[train_idx],
        train_weights=g.edge_weights[train_idx],
        test_pos=test_pos,
        test_neg=test_neg,
        fraction=float(train_fraction),
        stranded=stranded,
    )


def _sample_negative_pairs(g: Graph, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` distinct uniformly drawn non-adjacent, non-self node pairs."""
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)
    capacity = g.n * (g.n - 1) // 2 - g.m
    if capacity < count:
        raise ValidationError("graph too dense to sample that many negative pairs")
    seen: set[tuple[int, int]] = set()
    out = np.zeros((count, 2), dtype=np.int64)
    got = 0
    while got < count:
        cand = rng.integers(0, g.n, size=(max(64, 2 * (count - got)), 2))
        for u, v in cand:
            if got >= count:
                break
            u, v = int(u), int(v)
            if u == v:
                continue
            key = (u, v) if u < v else (v, u)
            if key in seen or g.has_edge(u, v):
                continue
            seen.add(key)
            out[got, 0], out[got, 1] = u, v
            got += 1
    return out


def build_train_graph(g: Graph, split: EvalSplit) -> Graph:
    """Graph over the same node set containing only the training edges."""
    return from_edges(
        g.n,
        split.train_edges,
        split.train_weights,
        directed=g.directed,
        node_labels=g.node_labels,
    )


def export_split(split: EvalSplit, directory: str | Path) -> None:
    """Write train.tsv / test_pos.tsv / test_neg.tsv with dense integer ids."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "train.tsv", "w", encoding="utf-8") as fh:
        for (s, t), w in zip(split.train_edges, split.train_weights):
            fh.write(f"{int(s)}\t{int(t)}\t{float(w)!r}\n")
    for name, pairs in (("test_pos.tsv", split.test_pos), ("test_neg.tsv", split.test_neg)):
        with open(directory / name, "w", encoding="utf-8") as fh:
            for s, t in pairs:
                fh.write(f"{int(s)}\t{int(t)}\n")


def load_split(directory: str | Path, g: Graph, fraction: float) -> EvalSplit:
    """Read a split previously written by :func:`export_split`."""
    directory = Path(directory)

    def read_pairs(path: Path, with_weight: bool):
        rows, wts = [], []
        for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            parts = raw.split("\t")
            if with_weight:
                if len(parts) != 3:
                    raise ParseError(f"expected 's t w' in {path.name}", line_no)
                rows.append((int(parts[0]), int(parts[1])))
                wts.append(float(parts[2]))
            else:
                if len(parts) != 2:
                    raise ParseError(f"expected 's t' in {path.name}", line_no)
                rows.append((int(parts[0]), int(parts[1])))
        arr = np.array(rows, dtype=np.int64).reshape(-1, 2)
        return (arr, np.array(wts, dtype=np.float64)) if with_weight else arr

    train_edges, train_weights = read_pairs(directory / "train.tsv", True)
    test_pos = read_pairs(directory / "test_pos.tsv", False)
    test_neg = read_pairs(directory / "test_neg.tsv", False)
    train_deg = np.bincount(train_edges.ravel(), minlength=g.n)
    stranded = np.flatnonzero((train_deg == 0) & (g.degrees > 0)).astype(np.int64)
    return EvalSplit(
        train_edges=train_edges,
        train_weights=train_weights,
        test_pos=test_pos,
        test_neg=test_neg,
        fraction=float(fraction),
        stranded=stranded,
    )


def barabasi_albert(n: int, m_attach: int, rng: np.random.Generator) -> Graph:
    """Preferential-attachment graph: each new node attaches to ``m_attach``
    existing nodes chosen proportionally to their current degree.

    Yields exactly ``(n - m_attach) * m_attach`` edges.
    """
    # n must exceed m_attach + 1 so at least one attachment is a real
    # preferential choice rather than a forced one.
    if m_attach < 1 or n <= m_attach + 1:
        raise ValidationError(f"need n > m_attach + 1 >= 2, got n={n}, m_attach={m_attach}")
    targets = list(range(m_attach))
    repeated: list[int] = []
    src = np.empty((n - m_attach) * m_attach, dtype=np.int64)
    dst = np.empty_like(src)
    pos = 0
    for v in range(m_attach, n):
        for t in targets:
            src[pos] = v
            dst[pos] = t
            pos += 1
        repeated.extend(targets)
        repeated.extend([v] * m_attach)
        chosen: list[int] = []
        while len(chosen) < m_attach:
            cand = repeated[int(rng.integers(len(repeated)))]
            if cand not in chosen:
                chosen.append(cand)
        targets = chosen
    return from_edges(n, np.stack([src, dst], axis=1), directed=False)
