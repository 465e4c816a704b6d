"""Architecture graphs and the cell search spaces they live in."""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

NODE_INPUT = 0
NODE_OUTPUT = 1


class InvalidGraphError(ValueError):
    pass


class UnsupportedEnumerationError(ValueError):
    pass


class RecordParseError(ValueError):
    def __init__(self, line: int, detail: str):
        super().__init__(f"line {line}: {detail}")
        self.line = line


@dataclass(frozen=True)
class ArchGraph:
    """A DAG with integer node and edge attributes.

    ``edges`` holds ``(src, dst, attr)`` triples.  Canonical graphs have
    ``src < dst`` everywhere and lexicographically sorted edges.
    """

    num_nodes: int
    node_attrs: tuple[int, ...]
    edges: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "node_attrs", tuple(int(a) for a in self.node_attrs))
        object.__setattr__(self, "edges", tuple((int(s), int(d), int(a)) for s, d, a in self.edges))
        if len(self.node_attrs) != self.num_nodes:
            raise InvalidGraphError(
                f"{len(self.node_attrs)} node attributes for {self.num_nodes} nodes"
            )
        pairs = set()
        for s, d, _ in self.edges:
            if not (0 <= s < self.num_nodes and 0 <= d < self.num_nodes) or s == d:
                raise InvalidGraphError(f"edge ({s}, {d}) out of range or a self-loop")
            if (s, d) in pairs:
                raise InvalidGraphError(f"duplicate edge ({s}, {d})")
            pairs.add((s, d))

    def key(self) -> tuple:
        return (self.num_nodes, self.node_attrs, self.edges)

    def to_record(self, score: float | None = None) -> dict:
        return {
            "nodes": list(self.node_attrs),
            "edges": [list(e) for e in self.edges],
            "score": score,
        }

    def serialize(self) -> str:
        return json.dumps({"nodes": list(self.node_attrs), "edges": [list(e) for e in self.edges]},
                          separators=(",", ":"))

    def arch_hash(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()[:16]

    def is_canonical(self) -> bool:
        return canonicalize(self) == self


def _topological_orders(n: int, preds: list[set[int]]) -> Iterator[list[int]]:
    order: list[int] = []
    placed = [False] * n

    def rec():
        if len(order) == n:
            yield list(order)
            return
        for v in range(n):
            if not placed[v] and all(placed[u] for u in preds[v]):
                placed[v] = True
                order.append(v)
                yield from rec()
                order.pop()
                placed[v] = False

    return rec()


def canonicalize(g: ArchGraph) -> ArchGraph:
    """Relabel ``g`` into its canonical topological order.

    Among all topological orders, the one whose (node attributes, sorted
    edges) encoding is lexicographically smallest wins, so every relabeling
    of the same DAG maps to the same result.
    """
    n = g.num_nodes
    preds: list[set[int]] = [set() for _ in range(n)]
    for s, d, _ in g.edges:
        preds[d].add(s)
    # candidate orders only need to respect topology; attribute-sorted
    # branch-and-bound keeps the search small on realistic cells
    best: tuple | None = None
    found = False
    for order in _bounded_orders(g, preds):
        found = True
        pos = {v: i for i, v in enumerate(order)}
        attrs = tuple(g.node_attrs[v] for v in order)
        edges = tuple(sorted((pos[s], pos[d], a) for s, d, a in g.edges))
        enc = (attrs, edges)
        if best is None or enc < best:
            best = enc
    if not found:
        raise InvalidGraphError("graph contains a cycle")
    return ArchGraph(n, best[0], best[1])


def _bounded_orders(g: ArchGraph, preds: list[set[int]]) -> Iterator[list[int]]:
    """Topological orders whose attribute sequence is minimal at every prefix.

    The canonical encoding compares attribute tuples first, so only orders
    that pick a smallest-attribute available node at each step can win.
    """
    n = g.num_nodes
    if n == 0:
        yield []
        return
    order: list[int] = []
    placed = [False] * n

    def rec():
        if len(order) == n:
            yield list(order)
            return
        avail = [v for v in range(n) if not placed[v] and all(placed[u] for u in preds[v])]
        if not avail:
            return
        low = min(g.node_attrs[v] for v in avail)
        for v in avail:
            if g.node_attrs[v] != low:
                continue
            placed[v] = True
            order.append(v)
            yield from rec()
            order.pop()
            placed[v] = False

    yield from rec()


@dataclass(frozen=True)
class SearchSpace:
    """Declarative description of a cell search space.

    ``kind`` is ``"edge"`` (operators on edges, fixed node order labels) or
    ``"node"`` (operators on nodes; attribute 0 is the input node and 1 the
    output node).  Fixed-template edge spaces default to every ordered pair
    ``i < j`` as an edge slot unless ``slots`` is given.
    """

    kind: str
    num_nodes: int
    node_vocab_size: int
    edge_vocab_size: int
    edge_template: str = "fixed"
    max_edges: int = 0
    slots: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        if self.kind not in ("edge", "node"):
            raise ValueError(f"kind must be 'edge' or 'node', got {self.kind!r}")
        if self.edge_template not in ("fixed", "free"):
            raise ValueError(f"edge_template must be 'fixed' or 'free', got {self.edge_template!r}")
        if self.num_nodes < 2:
            raise ValueError("a space needs at least two nodes")
        if self.kind == "node" and self.edge_vocab_size != 1:
            raise ValueError("operator-on-node spaces use a single (zero) edge attribute")
        if self.kind == "node" and self.node_vocab_size < 3:
            raise ValueError("operator-on-node spaces need input, output and at least one operator")
        if self.kind == "edge" and self.node_vocab_size != self.num_nodes:
            raise ValueError("operator-on-edge spaces label nodes by their order")
        slots = tuple(tuple(map(int, s)) for s in self.slots)
        if not slots:
            slots = tuple(itertools.combinations(range(self.num_nodes), 2))
        for s, d in slots:
            if not 0 <= s < d < self.num_nodes:
                raise ValueError(f"slot ({s}, {d}) is not a forward pair")
        object.__setattr__(self, "slots", slots)
        if self.max_edges <= 0:
            object.__setattr__(self, "max_edges", len(slots))

    @classmethod
    def nb201(cls) -> SearchSpace:
        return cls(kind="edge", num_nodes=4, node_vocab_size=4, edge_vocab_size=5)

    @classmethod
    def nb101(cls) -> SearchSpace:
        return cls(kind="node", num_nodes=7, node_vocab_size=5, edge_vocab_size=1,
                   edge_template="free", max_edges=9)

    @property
    def num_pairs(self) -> int:
        return len(self.slots)

    @property
    def node_classes(self) -> int:
        # node spaces reserve one extra class for padded ("absent") slots
        return self.node_vocab_size + (1 if self.kind == "node" else 0)

    @property
    def absent_node(self) -> int:
        return self.node_vocab_size

    def size(self) -> int | None:
        if self.edge_template == "fixed" and self.kind == "edge":
            return self.edge_vocab_size ** self.num_pairs
        return None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "num_nodes": self.num_nodes,
            "node_vocab_size": self.node_vocab_size,
            "edge_vocab_size": self.edge_vocab_size,
            "edge_template": self.edge_template,
            "max_edges": self.max_edges,
            "slots": [list(s) for s in self.slots],
        }

    @classmethod
    def from_dict(cls, d: dict) -> SearchSpace:
        d = dict(d)
        d["slots"] = tuple(tuple(s) for s in d.get("slots", ()))
        return cls(**d)

    # -- validity --------------------------------------------------------

    def validate(self, g: ArchGraph) -> None:
        """Raise :class:`InvalidGraphError` unless ``g`` belongs to this space."""
        for s, d, a in g.edges:
            if s >= d:
                raise InvalidGraphError(f"edge ({s}, {d}) is not in topological order")
            if not 0 <= a < self.edge_vocab_size:
                raise InvalidGraphError(f"edge attribute {a} outside vocabulary of {self.edge_vocab_size}")
        for a in g.node_attrs:
            if not 0 <= a < self.node_vocab_size:
                raise InvalidGraphError(f"node attribute {a} outside vocabulary of {self.node_vocab_size}")
        if self.kind == "edge":
            if g.num_nodes != self.num_nodes or g.node_attrs != tuple(range(self.num_nodes)):
                raise InvalidGraphError("operator-on-edge graphs must label nodes 0..n-1 in order")
            if self.edge_template == "fixed":
                if sorted((s, d) for s, d, _ in g.edges) != sorted(self.slots):
                    raise InvalidGraphError("edge set does not match the fixed template")
            elif not {(s, d) for s, d, _ in g.edges} <= set(self.slots):
                raise InvalidGraphError("edge outside the allowed slots")
            return
        n = g.num_nodes
        if n < 2 or n > self.num_nodes:
            raise InvalidGraphError(f"{n} nodes outside [2, {self.num_nodes}]")
        if len(g.edges) > self.max_edges:
            raise InvalidGraphError(f"{len(g.edges)} edges exceed the limit of {self.max_edges}")
        if g.node_attrs[0] != NODE_INPUT or g.node_attrs[-1] != NODE_OUTPUT:
            raise InvalidGraphError("first node must be the input and last node the output")
        if any(a in (NODE_INPUT, NODE_OUTPUT) for a in g.node_attrs[1:-1]):
            raise InvalidGraphError("intermediate nodes must carry operator attributes")
        if any(a != 0 for _, _, a in g.edges):
            raise InvalidGraphError("operator-on-node edges carry attribute 0")
        fwd, bwd = _reach(n, g.edges)
        if not all(fwd[v] and bwd[v] for v in range(n)):
            raise InvalidGraphError("every node must lie on an input-to-output path")

    def is_valid(self, g: ArchGraph) -> bool:
        try:
            self.validate(g)
        except InvalidGraphError:
            return False
        return True

    # -- enumeration and sampling ---------------------------------------

    def _from_assignment(self, ops: Sequence[int]) -> ArchGraph:
        edges = tuple((s, d, int(a)) for (s, d), a in zip(self.slots, ops))
        return ArchGraph(self.num_nodes, tuple(range(self.num_nodes)), tuple(sorted(edges)))

    def assignment(self, g: ArchGraph) -> tuple[int, ...]:
        """Operator per slot, in slot order (fixed-template edge spaces only)."""
        attr = {(s, d): a for s, d, a in g.edges}
        return tuple(attr[s] for s in self.slots)

    def enumerate(self) -> Iterator[ArchGraph]:
        if self.kind != "edge" or self.edge_template != "fixed":
            raise UnsupportedEnumerationError(
                "only fixed-template operator-on-edge spaces have a finite enumeration"
            )
        for ops in itertools.product(range(self.edge_vocab_size), repeat=self.num_pairs):
            yield self._from_assignment(ops)

    def graph_at(self, index: int) -> ArchGraph:
        """The ``index``-th graph of :meth:`enumerate`, for disjoint-range consumers."""
        total = self.size()
        if total is None:
            raise UnsupportedEnumerationError("space is not enumerable")
        if not 0 <= index < total:
            raise IndexError(index)
        ops = []
        for _ in range(self.num_pairs):
            index, r = divmod(index, self.edge_vocab_size)
            ops.append(r)
        return self._from_assignment(ops[::-1])

    def index_of(self, g: ArchGraph) -> int:
        idx = 0
        for a in self.assignment(g):
            idx = idx * self.edge_vocab_size + a
        return idx

    def sample(self, rng: np.random.Generator) -> ArchGraph:
        if self.kind == "edge" and self.edge_template == "fixed":
            return self._from_assignment(rng.integers(0, self.edge_vocab_size, size=self.num_pairs))
        while True:
            g = self._sample_free(rng)
            if g is not None:
                return g

    def _sample_free(self, rng: np.random.Generator) -> ArchGraph | None:
        n = self.num_nodes
        if self.kind == "edge":
            mask = rng.random(self.num_pairs) < 0.5
            edges = [(s, d, int(rng.integers(self.edge_vocab_size)))
                     for (s, d), keep in zip(self.slots, mask) if keep]
            g = ArchGraph(n, tuple(range(n)), tuple(sorted(edges)))
            return g if len(edges) <= self.max_edges else None
        attrs = [NODE_INPUT] + [int(a) for a in rng.integers(2, self.node_vocab_size, size=n - 2)] + [NODE_OUTPUT]
        pairs = [(s, d) for s, d in self.slots]
        mask = rng.random(len(pairs)) < 0.5
        edges = [(s, d, 0) for (s, d), keep in zip(pairs, mask) if keep]
        g = prune_dangling(ArchGraph(n, tuple(attrs), tuple(edges)))
        if g is None or len(g.edges) > self.max_edges:
            return None
        return canonicalize(g)


def _reach(n: int, edges) -> tuple[list[bool], list[bool]]:
    succ: list[list[int]] = [[] for _ in range(n)]
    pred: list[list[int]] = [[] for _ in range(n)]
    for s, d, _ in edges:
        succ[s].append(d)
        pred[d].append(s)

    def flood(start, nbrs):
        seen = [False] * n
        stack = [start]
        seen[start] = True
        while stack:
            v = stack.pop()
            for u in nbrs[v]:
                if not seen[u]:
                    seen[u] = True
                    stack.append(u)
        return seen

    return flood(0, succ), flood(n - 1, pred)


def prune_dangling(g: ArchGraph) -> ArchGraph | None:
    """Drop nodes off every input-to-output path; None if no such path exists.

    Assumes node 0 is the input and the last node the output.
    """
    n = g.num_nodes
    fwd, bwd = _reach(n, g.edges)
    if not fwd[n - 1]:
        return None
    keep = [v for v in range(n) if fwd[v] and bwd[v]]
    remap = {v: i for i, v in enumerate(keep)}
    edges = tuple(sorted((remap[s], remap[d], a) for s, d, a in g.edges if s in remap and d in remap))
    return ArchGraph(len(keep), tuple(g.node_attrs[v] for v in keep), edges)


def count_space(space: SearchSpace) -> int:
    total = space.size()
    if total is None:
        raise UnsupportedEnumerationError("space is not enumerable")
    return total


# -- JSON-lines records ------------------------------------------------------

def parse_record(obj, space: SearchSpace | None = None, line: int = 0) -> tuple[ArchGraph, float | None]:
    if not isinstance(obj, dict) or "nodes" not in obj or "edges" not in obj:
        raise RecordParseError(line, "record needs 'nodes' and 'edges'")
    try:
        nodes = [int(a) for a in obj["nodes"]]
        edges = [tuple(int(v) for v in e) for e in obj["edges"]]
        if any(len(e) != 3 for e in edges):
            raise ValueError("edges must be [src, dst, attr] triples")
        g = ArchGraph(len(nodes), tuple(nodes), tuple(edges))
    except (TypeError, ValueError) as exc:
        raise RecordParseError(line, str(exc)) from None
    score = obj.get("score")
    if score is not None:
        if isinstance(score, bool) or not isinstance(score, (int, float)) or not math.isfinite(score):
            raise RecordParseError(line, f"score must be a finite number or null, got {score!r}")
        score = float(score)
    try:
        g = canonicalize(g)
        if space is not None:
            space.validate(g)
    except InvalidGraphError as exc:
        raise RecordParseError(line, str(exc)) from None
    return g, score


def write_records(path: str | Path, records: Iterable[tuple[ArchGraph, float | None]]) -> int:
    n = 0
    with open(path, "w") as fh:
        for g, score in records:
            fh.write(json.dumps(g.to_record(score), separators=(",", ":")) + "\n")
            n += 1
    return n


def read_records(path: str | Path, space: SearchSpace | None = None) -> list[tuple[ArchGraph, float | None]]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordParseError(lineno, f"invalid JSON: {exc.msg}") from None
            out.append(parse_record(obj, space, lineno))
    return out


def encode_io(g: ArchGraph, path: str | Path, score: float | None = None) -> None:
    write_records(path, [(g, score)])


def decode_io(path: str | Path, space: SearchSpace | None = None) -> ArchGraph:
    records = read_records(path, space)
    if len(records) != 1:
        raise RecordParseError(len(records), f"expected a single record, found {len(records)}")
    return records[0][0]
