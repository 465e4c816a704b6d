"""Performance oracles: a synthetic cell benchmark, the 2-D toy function, tabular dumps."""
from __future__ import annotations

import json
import math
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

from .graphspace import (
    ArchGraph,
    InvalidGraphError,
    SearchSpace,
    canonicalize,
    read_records,
    write_records,
)

TABLE_VERSION = 1


class OracleLookupError(KeyError):
    pass


class IntegrityError(ValueError):
    pass


def _paths(slots, n: int) -> list[list[int]]:
    """Every input-to-output path, as lists of slot indices."""
    out_edges: dict[int, list[tuple[int, int]]] = {}
    for j, (s, d) in enumerate(slots):
        out_edges.setdefault(s, []).append((j, d))
    paths = []

    def walk(v, acc):
        if v == n - 1:
            paths.append(list(acc))
            return
        for j, d in out_edges.get(v, []):
            walk(d, acc + [j])

    walk(0, [])
    return paths


def build_table(space: SearchSpace, seed: int) -> dict:
    """Constant table for a fixed-template operator-on-edge space.

    Operator 0 plays the role of a "none" edge that cuts information flow.
    Per-slot utilities follow a shared operator profile plus slot noise; slot
    pairs sharing a node get random interaction matrices.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    n_ops, slots = space.edge_vocab_size, [list(s) for s in space.slots]
    if n_ops == 5:
        profile = np.array([-6.0, 0.5, 2.5, 4.0, -1.0])
    else:
        profile = np.concatenate([[-6.0], rng.normal(1.0, 2.0, size=n_ops - 1)])[:n_ops]
    slot_weight = rng.uniform(0.5, 1.5, size=len(slots))
    utility = slot_weight[:, None] * profile[None, :] + rng.normal(0.0, 1.5, size=(len(slots), n_ops))
    interaction = {}
    for j, (a, b) in enumerate(slots):
        for k, (c, d) in enumerate(slots):
            if k > j and len({a, b} & {c, d}) == 1:
                interaction[f"{j},{k}"] = np.round(rng.normal(0.0, 1.0, size=(n_ops, n_ops)), 4).tolist()
    # the two best-profile operators count as "deep" for the depth bonus
    deep = sorted(int(i) for i in np.argsort(-profile)[:2]) if n_ops > 2 else [n_ops - 1]
    return {
        "version": TABLE_VERSION,
        "space": space.to_dict(),
        "seed": seed,
        "base": 52.0,
        "utility": np.round(utility, 4).tolist(),
        "interaction": interaction,
        "deep_ops": deep,
        "path_bonus": 1.5,
        "depth_bonus": 2.0,
        "disconnected_penalty": 22.0,
    }


class SyntheticBench:
    """Deterministic accuracy-like scores over a fixed-template edge space.

    score = base + sum of per-slot utilities + pairwise interactions of slots
    sharing a node + path_bonus * (#live input-output paths)
    + depth_bonus * (most deep operators on one live path), minus a large
    penalty when no live path exists.  Operator 0 is a dead edge.
    """

    def __init__(self, table: dict):
        self.table = table
        self.space = SearchSpace.from_dict(table["space"])
        if self.space.kind != "edge" or self.space.edge_template != "fixed":
            raise ValueError("the synthetic benchmark needs a fixed-template operator-on-edge space")
        self.utility = np.asarray(table["utility"], dtype=np.float64)
        self.interaction = {tuple(int(x) for x in k.split(",")): np.asarray(v, dtype=np.float64)
                            for k, v in table["interaction"].items()}
        self.paths = _paths(self.space.slots, self.space.num_nodes)
        self.deep = np.zeros(self.space.edge_vocab_size, dtype=bool)
        self.deep[table["deep_ops"]] = True
        self.calls = 0

    @classmethod
    def default(cls) -> SyntheticBench:
        """The committed benchmark over the NB201-shaped space."""
        text = resources.files("crlso.data").joinpath(f"synth_table_v{TABLE_VERSION}.json").read_text()
        return cls(json.loads(text))

    @classmethod
    def for_space(cls, space: SearchSpace, seed: int = 0) -> SyntheticBench:
        if space == SearchSpace.nb201() and seed == 0:
            return cls.default()
        return cls(build_table(space, seed))

    def _score_assignments(self, A: np.ndarray) -> np.ndarray:
        t = self.table
        A = np.atleast_2d(A)
        cols = np.arange(A.shape[1])
        s = t["base"] + self.utility[cols[None, :], A].sum(axis=1)
        for (j, k), w in self.interaction.items():
            s += w[A[:, j], A[:, k]]
        live_paths = np.zeros(A.shape[0])
        depth = np.zeros(A.shape[0])
        for path in self.paths:
            live = np.all(A[:, path] != 0, axis=1)
            live_paths += live
            depth = np.maximum(depth, np.where(live, self.deep[A[:, path]].sum(axis=1), 0))
        s += t["path_bonus"] * live_paths + t["depth_bonus"] * depth
        s -= np.where(live_paths == 0, t["disconnected_penalty"], 0.0)
        return s

    def score(self, g: ArchGraph) -> float:
        try:
            self.space.validate(g)
        except InvalidGraphError as exc:
            raise InvalidGraphError(f"synthetic oracle: {exc}") from None
        self.calls += 1
        return float(self._score_assignments(np.array(self.space.assignment(g)))[0])

    __call__ = score

    @cached_property
    def all_scores(self) -> np.ndarray:
        """Scores of the full enumeration, in enumeration order."""
        n, p = self.space.edge_vocab_size, self.space.num_pairs
        idx = np.arange(n**p)
        A = np.stack([(idx // n ** (p - 1 - j)) % n for j in range(p)], axis=1)
        return self._score_assignments(A)

    @cached_property
    def ranking(self) -> np.ndarray:
        """Enumeration indices ordered best first (ties broken by index)."""
        return np.lexsort((np.arange(self.all_scores.size), -self.all_scores))

    @cached_property
    def _rank_of_index(self) -> np.ndarray:
        r = np.empty(self.ranking.size, dtype=np.int64)
        r[self.ranking] = np.arange(1, self.ranking.size + 1)
        return r

    def rank(self, g: ArchGraph) -> int:
        """1-based global rank (1 = best)."""
        return int(self._rank_of_index[self.space.index_of(g)])

    def dump(self, path: str | Path) -> int:
        return write_records(path, zip(self.space.enumerate(), self.all_scores.tolist()))


class TabularOracle:
    """Scores looked up from a JSON-lines dump of labeled architectures."""

    def __init__(self, records: Iterable[tuple[ArchGraph, float]], space: SearchSpace | None = None):
        self.space = space
        self.table: dict[ArchGraph, float] = {}
        for g, s in records:
            if s is None:
                continue
            prev = self.table.get(g)
            if prev is not None and prev != s:
                raise IntegrityError(f"conflicting scores {prev} and {s} for architecture {g.arch_hash()}")
            self.table[g] = float(s)
        self.calls = 0

    def score(self, g: ArchGraph) -> float:
        try:
            s = self.table[canonicalize(g)]
        except KeyError:
            raise OracleLookupError(f"architecture {g.arch_hash()} is not in the table") from None
        self.calls += 1
        return s

    __call__ = score

    def __len__(self) -> int:
        return len(self.table)


def load_tabular(path: str | Path, space: SearchSpace | None = None) -> TabularOracle:
    return TabularOracle(read_records(path, space), space)


# -- toy problem -----------------------------------------------------------------

TOY_BOX = (-3.0, 3.0)


def toy_h(x) -> np.ndarray | float:
    """Multimodal 2-D test function; rows of ``x`` are points."""
    x = np.asarray(x, dtype=np.float64)
    x1, x2 = x[..., 0], x[..., 1]
    y = (-0.64 * (x1 - 1.0) ** 2 - 0.64 * (x2 + 0.2) ** 2
         - 2.0 * np.sin(np.pi * (x1 - 0.2)) - 2.0 * np.cos(np.pi * (x2 - 0.1)) - 4.0)
    return float(y) if y.ndim == 0 else y


def toy_grid(points_per_axis: int = 64) -> np.ndarray:
    g = np.linspace(TOY_BOX[0], TOY_BOX[1], points_per_axis)
    x1, x2 = np.meshgrid(g, g, indexing="ij")
    return np.stack([x1.ravel(), x2.ravel()], axis=1)

