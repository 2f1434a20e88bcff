"""Sparse undirected simple graphs indexed by directed half-edges.

Every undirected edge ``(u, v)`` with ``u < v`` appears twice in the half-edge
arrays, once per direction.  Half-edges are grouped by source vertex (CSR
layout), so the outgoing half-edges of vertex ``i`` are
``indptr[i]:indptr[i + 1]``.  Cavity messages are stored on this index.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class GraphFormatError(ValueError):
    """Raised when a graph file cannot be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable simple undirected graph.

    Attributes
    ----------
    n : int
        Number of vertices.
    edges : ndarray, shape (m, 2)
        Undirected edges with ``edges[:, 0] < edges[:, 1]``, sorted
        lexicographically.
    indptr : ndarray, shape (n + 1,)
        CSR offsets into the half-edge arrays.
    src, dst : ndarray, shape (2m,)
        Endpoints of each half-edge; ``dst[indptr[i]:indptr[i+1]]`` is the
        sorted neighbor list of ``i``.
    reverse : ndarray, shape (2m,)
        Id of the opposite half-edge.
    edge_of : ndarray, shape (2m,)
        Index into ``edges`` of the undirected edge a half-edge belongs to.
    labels : list
        External vertex labels, ``labels[k]`` is the label of vertex ``k``.
    """

    n: int
    edges: np.ndarray
    indptr: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    reverse: np.ndarray
    edge_of: np.ndarray
    labels: list = field(default_factory=list)
    dropped: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return int(self.edges.shape[0])

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def mean_degree(self) -> float:
        return 2.0 * self.m / self.n

    def neighbors(self, i: int) -> np.ndarray:
        return self.dst[self.indptr[i]:self.indptr[i + 1]]

    def half_edge(self, i: int, j: int) -> int:
        """Id of the half-edge ``i -> j``; raises ``KeyError`` if absent."""
        lo, hi = self.indptr[i], self.indptr[i + 1]
        k = lo + int(np.searchsorted(self.dst[lo:hi], j))
        if k >= hi or self.dst[k] != j:
            raise KeyError((i, j))
        return int(k)

    def has_edge(self, i: int, j: int) -> bool:
        try:
            self.half_edge(i, j)
        except KeyError:
            return False
        return True

    def remove_edge(self, i: int, j: int) -> "Graph":
        """Copy of the graph without edge ``(i, j)``; vertex ids unchanged."""
        u, v = min(i, j), max(i, j)
        keep = ~((self.edges[:, 0] == u) & (self.edges[:, 1] == v))
        if keep.all():
            raise KeyError((i, j))
        return from_edges(self.n, self.edges[keep], labels=self.labels)

    @classmethod
    def from_edges(cls, n: int, edges, labels=None) -> "Graph":
        return from_edges(n, edges, labels=labels)


def from_edges(n: int, edges, labels=None) -> Graph:
    """Build a :class:`Graph` on vertices ``0..n-1`` from an edge array.

    Self-loops and duplicate edges (in either orientation) are dropped and
    counted in ``Graph.dropped``.
    """
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if arr.size and (arr.min() < 0 or arr.max() >= n):
        raise ValueError("edge endpoint outside 0..n-1")
    loops = arr[:, 0] == arr[:, 1]
    arr = arr[~loops]
    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    und = np.unique(np.stack([lo, hi], axis=1), axis=0) if arr.size else np.zeros((0, 2), np.int64)
    dropped = {"self_loops": int(loops.sum()), "duplicates": int(arr.shape[0] - und.shape[0])}

    m = und.shape[0]
    src = np.concatenate([und[:, 0], und[:, 1]])
    dst = np.concatenate([und[:, 1], und[:, 0]])
    eid = np.concatenate([np.arange(m), np.arange(m)])
    order = np.lexsort((dst, src))
    src, dst, eid = src[order], dst[order], eid[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])

    # half-edge ids of u->v (first) and v->u (second) for each edge k
    first = np.full(m, -1, dtype=np.int64)
    second = np.full(m, -1, dtype=np.int64)
    h = np.arange(2 * m)
    is_fwd = src < dst
    first[eid[is_fwd]] = h[is_fwd]
    second[eid[~is_fwd]] = h[~is_fwd]
    reverse = np.empty(2 * m, dtype=np.int64)
    reverse[first] = second
    reverse[second] = first

    if labels is None:
        labels = list(range(n))
    return Graph(
        n=int(n),
        edges=und,
        indptr=indptr,
        src=src.astype(np.int64),
        dst=dst.astype(np.int64),
        reverse=reverse,
        edge_of=eid.astype(np.int64),
        labels=list(labels),
        dropped=dropped,
    )


def _parse_token(tok: str):
    try:
        return int(tok)
    except ValueError:
        return tok


def read_edge_list(path) -> Graph:
    """Read a whitespace-separated edge list.

    Lines starting with ``#`` (and trailing ``#`` comments) are ignored.
    Columns beyond the first two are ignored.  A line with a single token
    declares an isolated vertex.  Integer labels are sorted numerically before
    assigning dense ids; otherwise first-appearance order is used.
    """
    pairs = []
    seen: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            toks = line.split()
            if len(toks) == 1:
                seen.setdefault(_parse_token(toks[0]), lineno)
                continue
            a, b = _parse_token(toks[0]), _parse_token(toks[1])
            seen.setdefault(a, lineno)
            seen.setdefault(b, lineno)
            pairs.append((a, b, lineno))
    if not seen:
        raise GraphFormatError(f"{path}: empty graph")
    return _assemble(seen, pairs)


def _assemble(seen: dict, pairs: list) -> Graph:
    keys = list(seen)
    if all(isinstance(k, int) for k in keys):
        keys.sort()
    index = {k: i for i, k in enumerate(keys)}
    edges = np.array([(index[a], index[b]) for a, b, _ in pairs], dtype=np.int64).reshape(-1, 2)
    g = from_edges(len(keys), edges, labels=keys)
    if g.dropped["self_loops"] or g.dropped["duplicates"]:
        logger.info("dropped %(self_loops)d self-loops and %(duplicates)d duplicate edges", g.dropped)
    return g


_GML_TOKEN = re.compile(r'"[^"]*"|\[|\]|[^\s\[\]]+')


def read_gml(path) -> Graph:
    """Read the node/edge subset of GML.

    Only ``node [ id ... ]`` and ``edge [ source ... target ... ]`` blocks are
    interpreted; other keys are skipped.  Ids must be integers.
    """
    tokens = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            if raw.lstrip().startswith("#"):
                continue
            tokens.extend((t, lineno) for t in _GML_TOKEN.findall(raw))

    seen: dict = {}
    pairs = []
    stack: list[tuple[str, dict]] = []
    k = 0
    while k < len(tokens):
        tok, lineno = tokens[k]
        if tok == "]":
            if not stack:
                raise GraphFormatError("unbalanced ']'", lineno)
            kind, attrs = stack.pop()
            if kind == "node":
                if "id" not in attrs:
                    raise GraphFormatError("node without id", attrs["_line"])
                seen.setdefault(attrs["id"], attrs["_line"])
            elif kind == "edge":
                if "source" not in attrs or "target" not in attrs:
                    raise GraphFormatError("edge without source/target", attrs["_line"])
                pairs.append((attrs["source"], attrs["target"], attrs["_line"]))
            k += 1
            continue
        if k + 1 >= len(tokens):
            raise GraphFormatError(f"dangling key {tok!r}", lineno)
        val, vline = tokens[k + 1]
        if val == "[":
            stack.append((tok, {"_line": lineno}))
        elif stack and stack[-1][0] in ("node", "edge") and tok in ("id", "source", "target"):
            try:
                stack[-1][1][tok] = int(val)
            except ValueError:
                raise GraphFormatError(f"non-integer {tok} {val!r}", vline) from None
        k += 2
    if stack:
        raise GraphFormatError("unterminated block", stack[-1][1]["_line"])
    for a, b, lineno in pairs:
        for v in (a, b):
            if v not in seen:
                raise GraphFormatError(f"edge refers to undeclared node {v}", lineno)
    if not seen:
        raise GraphFormatError(f"{path}: empty graph")
    return _assemble(seen, pairs)


def load_graph(path, format: str | None = None) -> Graph:
    """Load a graph from an edge list or GML file.

    ``format`` is ``"edge-list"`` or ``"gml"``; when omitted it is inferred
    from the file suffix (``.gml`` means GML, anything else an edge list).
    """
    path = Path(path)
    if format is None:
        format = "gml" if path.suffix.lower() == ".gml" else "edge-list"
    if format == "gml":
        return read_gml(path)
    if format in ("edge-list", "edgelist"):
        return read_edge_list(path)
    raise ValueError(f"unknown graph format {format!r}")


def write_edge_list(g: Graph, path, use_labels: bool = False) -> None:
    """Write the canonical edge list, one ``u v`` per line sorted by endpoint."""
    with open(path, "w") as fh:
        isolated = np.flatnonzero(g.degrees == 0)
        for v in isolated:
            fh.write(f"{g.labels[v] if use_labels else v}\n")
        for u, v in g.edges:
            if use_labels:
                fh.write(f"{g.labels[u]} {g.labels[v]}\n")
            else:
                fh.write(f"{u} {v}\n")


def connected_components(g: Graph) -> np.ndarray:
    """Component id per vertex, numbered in order of the lowest vertex id."""
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import connected_components as cc

    adj = csr_matrix((np.ones(2 * g.m), g.dst, g.indptr), shape=(g.n, g.n))
    _, comp = cc(adj, directed=False)
    # renumber so component ids follow the first vertex they contain
    _, first = np.unique(comp, return_index=True)
    rank = np.empty_like(first)
    rank[np.argsort(first)] = np.arange(first.size)
    return rank[comp]


def largest_component(g: Graph) -> tuple[Graph, np.ndarray]:
    """Induced subgraph on the largest connected component.

    Ties are broken toward the component containing the lowest vertex id.
    Returns the subgraph and ``old_to_new`` (``-1`` for dropped vertices).
    """
    comp = connected_components(g)
    sizes = np.bincount(comp)
    best = int(np.argmax(sizes))  # first max = lowest-id component
    keep = comp == best
    old_to_new = np.full(g.n, -1, dtype=np.int64)
    old_to_new[keep] = np.arange(int(keep.sum()))
    mask = keep[g.edges[:, 0]]
    sub_edges = old_to_new[g.edges[mask]]
    labels = [g.labels[v] for v in np.flatnonzero(keep)]
    return from_edges(int(keep.sum()), sub_edges, labels=labels), old_to_new
