"""Graph variational autoencoder: GNN encoder, one-shot MLP decoder, losses."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ndgrad as nd
from .graphspace import ArchGraph, InvalidGraphError, SearchSpace, canonicalize, prune_dangling
from .ndgrad import MLP, Embedding, Linear, Module, Tensor

DIRECTIONS = ("in", "out", "both")


class DecodeInvalidError(ValueError):
    """The decoder's argmax graph cannot be repaired into a valid architecture."""


class SpaceMismatchError(ValueError):
    pass


# -- graph batching ------------------------------------------------------------

@dataclass
class GraphBatch:
    """Disjoint union of graphs, flattened for message passing."""

    node_attr: np.ndarray  # (n_nodes,)
    src: np.ndarray  # (n_edges,)
    dst: np.ndarray
    edge_attr: np.ndarray
    node_graph: np.ndarray  # graph index per node
    num_graphs: int

    @classmethod
    def from_graphs(cls, graphs: Sequence[ArchGraph]) -> GraphBatch:
        attrs, src, dst, eattr, owner = [], [], [], [], []
        offset = 0
        for b, g in enumerate(graphs):
            attrs.extend(g.node_attrs)
            owner.extend([b] * g.num_nodes)
            for s, d, a in g.edges:
                src.append(s + offset)
                dst.append(d + offset)
                eattr.append(a)
            offset += g.num_nodes
        as_int = lambda v: np.asarray(v, dtype=np.int64)
        return cls(as_int(attrs), as_int(src), as_int(dst), as_int(eattr), as_int(owner), len(graphs))


@dataclass
class PackedGraphs:
    """Graphs laid out on the space's padded node/slot grid.

    The same arrays are the decoder's reconstruction targets and, after
    masking, the encoder's input.
    """

    space: SearchSpace
    nodes: np.ndarray  # (G, N) node class, padded with the absent class
    presence: np.ndarray  # (G, P) bool
    edge_attr: np.ndarray  # (G, P) int, 0 where absent

    @classmethod
    def from_graphs(cls, graphs: Sequence[ArchGraph], space: SearchSpace) -> PackedGraphs:
        n, slot_index = space.num_nodes, {s: j for j, s in enumerate(space.slots)}
        nodes = np.full((len(graphs), n), space.absent_node, dtype=np.int64)
        presence = np.zeros((len(graphs), space.num_pairs), dtype=bool)
        eattr = np.zeros((len(graphs), space.num_pairs), dtype=np.int64)
        for i, g in enumerate(graphs):
            if g.num_nodes > n:
                raise SpaceMismatchError(f"graph with {g.num_nodes} nodes in a {n}-node space")
            nodes[i, : g.num_nodes] = g.node_attrs
            for s, d, a in g.edges:
                j = slot_index.get((s, d))
                if j is None:
                    raise SpaceMismatchError(f"edge ({s}, {d}) is not a slot of the space")
                presence[i, j] = True
                eattr[i, j] = a
        return cls(space, nodes, presence, eattr)

    def __len__(self) -> int:
        return self.nodes.shape[0]

    def batch(self, idx: np.ndarray | slice | None = None) -> GraphBatch:
        idx = slice(None) if idx is None else idx
        nodes = self.nodes[idx]
        presence = self.presence[idx]
        valid = nodes != self.space.absent_node
        node_id = np.full(nodes.shape, -1, dtype=np.int64)
        node_id[valid] = np.arange(int(valid.sum()))
        b, j = np.nonzero(presence)
        slots = np.asarray(self.space.slots, dtype=np.int64).reshape(-1, 2)
        src = node_id[b, slots[j, 0]]
        dst = node_id[b, slots[j, 1]]
        return GraphBatch(
            node_attr=nodes[valid],
            src=src,
            dst=dst,
            edge_attr=self.edge_attr[idx][b, j],
            node_graph=np.repeat(np.arange(nodes.shape[0]), valid.sum(axis=1)),
            num_graphs=nodes.shape[0],
        )

    def subset(self, idx) -> PackedGraphs:
        return PackedGraphs(self.space, self.nodes[idx], self.presence[idx], self.edge_attr[idx])


# -- encoder -------------------------------------------------------------------

class GraphEncoder(Module):
    """L rounds of residual message passing followed by sum pooling.

    x_v <- Theta x_v + psi(x_v, sum_u phi(x_v, x_u, e_uv)), with the sum over
    in-neighbors by default (``direction`` selects in, out or both).
    """

    def __init__(self, space: SearchSpace, channels: int, layers: int, rng: np.random.Generator,
                 direction: str = "in"):
        if direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
        self.space = space
        self.channels = channels
        self.direction = direction
        self.node_emb = Embedding(space.node_vocab_size, channels, rng)
        # operator-on-node spaces carry no edge information: a fixed zero embedding
        self.edge_emb = Embedding(space.edge_vocab_size, channels, rng) if space.kind == "edge" else None
        self.theta = [Linear(channels, channels, rng, bias=False) for _ in range(layers)]
        self.message = [MLP([3 * channels, channels, channels], rng) for _ in range(layers)]
        self.update = [MLP([2 * channels, channels, channels], rng) for _ in range(layers)]

    @property
    def layers(self) -> int:
        return len(self.theta)

    def __call__(self, batch: GraphBatch) -> Tensor:
        n_nodes = batch.node_attr.shape[0]
        if n_nodes and batch.node_attr.max() >= self.space.node_vocab_size:
            raise SpaceMismatchError("node attribute outside the encoder's vocabulary")
        x = self.node_emb(batch.node_attr)
        if self.edge_emb is not None:
            e = self.edge_emb(batch.edge_attr)
        else:
            e = Tensor(np.zeros((batch.src.shape[0], self.channels)))
        if self.direction == "in":
            routes = [(batch.src, batch.dst)]
        elif self.direction == "out":
            routes = [(batch.dst, batch.src)]
        else:
            routes = [(batch.src, batch.dst), (batch.dst, batch.src)]
        for theta, phi, psi in zip(self.theta, self.message, self.update):
            h = None
            for sender, receiver in routes:
                msg = phi(nd.concat([nd.gather_rows(x, receiver), nd.gather_rows(x, sender), e], axis=1))
                agg = nd.segment_sum(msg, receiver, n_nodes)
                h = agg if h is None else h + agg
            if h is None:
                h = Tensor(np.zeros((n_nodes, self.channels)))
            x = theta(x) + psi(nd.concat([x, h], axis=1))
        return nd.segment_sum(x, batch.node_graph, batch.num_graphs)


class VariationalEncoder(Module):
    """GNN encoder plus two linear heads for the Gaussian posterior."""

    def __init__(self, space: SearchSpace, channels: int, layers: int, latent_dim: int,
                 rng: np.random.Generator, direction: str = "in"):
        self.gnn = GraphEncoder(space, channels, layers, rng, direction)
        # small heads keep the initial posterior close to the prior
        self.mu_head = Linear(channels, latent_dim, rng, scale=0.1)
        self.logvar_head = Linear(channels, latent_dim, rng, scale=0.01)
        self.latent_dim = latent_dim

    def __call__(self, batch: GraphBatch) -> tuple[Tensor, Tensor]:
        h = self.gnn(batch)
        return self.mu_head(h), self.logvar_head(h)


def encode(g: ArchGraph | Sequence[ArchGraph], enc: VariationalEncoder) -> tuple[np.ndarray, np.ndarray]:
    """Posterior (mu, sigma) for one graph or a sequence of graphs."""
    single = isinstance(g, ArchGraph)
    graphs = [g] if single else list(g)
    with nd.no_grad():
        mu, logvar = enc(GraphBatch.from_graphs(graphs))
    sigma = np.exp(0.5 * logvar.data)
    return (mu.data[0], sigma[0]) if single else (mu.data, sigma)


def posterior_means(packed: PackedGraphs, enc: VariationalEncoder, batch_size: int = 2048) -> np.ndarray:
    out = []
    with nd.no_grad():
        for start in range(0, len(packed), batch_size):
            mu, _ = enc(packed.batch(slice(start, start + batch_size)))
            out.append(mu.data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, enc.latent_dim))


@dataclass
class LatentPoint:
    z: np.ndarray
    origin: str = "posterior-mean"

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        if not np.all(np.isfinite(self.z)):
            raise ValueError("latent point has non-finite entries")
        if self.origin not in ("posterior-mean", "perturbed", "stepped"):
            raise ValueError(f"unknown origin {self.origin!r}")


def reparameterize(mu, sigma, rng: np.random.Generator) -> LatentPoint:
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != sigma.shape:
        raise ValueError(f"mu {mu.shape} and sigma {sigma.shape} differ")
    return LatentPoint(mu + sigma * rng.standard_normal(mu.shape), "perturbed")


# -- decoder -------------------------------------------------------------------

@dataclass
class DecodedLogits:
    nodes: np.ndarray  # (..., N, node_classes)
    presence: np.ndarray  # (..., P)
    edges: np.ndarray  # (..., P, edge_vocab)


class GraphDecoder(Module):
    """Three-layer perceptron emitting every node, edge and edge-type logit at once."""

    def __init__(self, space: SearchSpace, latent_dim: int, hidden: int, rng: np.random.Generator):
        self.space = space
        self.latent_dim = latent_dim
        self.mlp = MLP([latent_dim, hidden, hidden, self.output_dim], rng)

    @property
    def output_dim(self) -> int:
        s = self.space
        return s.num_nodes * s.node_classes + s.num_pairs + s.num_pairs * s.edge_vocab_size

    def blocks(self, out: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        s = self.space
        a = s.num_nodes * s.node_classes
        b = a + s.num_pairs
        return out[:, :a], out[:, a:b], out[:, b:]

    def __call__(self, z: Tensor) -> Tensor:
        return self.mlp(z)


def decode_logits(z: LatentPoint | np.ndarray, dec: GraphDecoder) -> DecodedLogits:
    zz = z.z if isinstance(z, LatentPoint) else np.asarray(z, dtype=np.float64)
    single = zz.ndim == 1
    with nd.no_grad():
        out = dec(Tensor(zz.reshape(1, -1) if single else zz)).data
    s = dec.space
    a = s.num_nodes * s.node_classes
    b = a + s.num_pairs
    lead = out.shape[:1]
    nodes = out[:, :a].reshape(lead + (s.num_nodes, s.node_classes))
    pres = out[:, a:b]
    edges = out[:, b:].reshape(lead + (s.num_pairs, s.edge_vocab_size))
    if single:
        return DecodedLogits(nodes[0], pres[0], edges[0])
    return DecodedLogits(nodes, pres, edges)


def graph_from_logits(logits: DecodedLogits, space: SearchSpace) -> ArchGraph:
    """Per-slot argmax (ties to the lowest index) followed by validity repair."""
    node_cls = np.argmax(logits.nodes, axis=-1)
    present = logits.presence > 0.0
    edge_cls = np.argmax(logits.edges, axis=-1)
    if space.kind == "edge":
        n = space.num_nodes
        if space.edge_template == "fixed":
            edges = [(s, d, int(edge_cls[j])) for j, (s, d) in enumerate(space.slots)]
        else:
            edges = [(s, d, int(edge_cls[j])) for j, (s, d) in enumerate(space.slots) if present[j]]
            if len(edges) > space.max_edges:
                raise DecodeInvalidError(f"{len(edges)} edges exceed the limit of {space.max_edges}")
        g = ArchGraph(n, tuple(range(n)), tuple(sorted(edges)))
    else:
        keep = [v for v in range(space.num_nodes) if node_cls[v] != space.absent_node]
        if len(keep) < 2:
            raise DecodeInvalidError("fewer than two nodes decoded")
        remap = {v: i for i, v in enumerate(keep)}
        edges = [(remap[s], remap[d], 0) for j, (s, d) in enumerate(space.slots)
                 if present[j] and s in remap and d in remap]
        attrs = tuple(int(node_cls[v]) for v in keep)
        raw = ArchGraph(len(keep), attrs, tuple(edges))
        if attrs[0] != 0 or attrs[-1] != 1:
            raise DecodeInvalidError("decoded graph does not start at the input and end at the output")
        pruned = prune_dangling(raw)
        if pruned is None:
            raise DecodeInvalidError("no path from input to output")
        g = canonicalize(pruned)
    try:
        space.validate(g)
    except InvalidGraphError as exc:
        raise DecodeInvalidError(str(exc)) from None
    return g


def decode_argmax(z: LatentPoint | np.ndarray, dec: GraphDecoder, space: SearchSpace) -> ArchGraph:
    return graph_from_logits(decode_logits(z, dec), space)


def decode_many(Z: np.ndarray, dec: GraphDecoder, space: SearchSpace) -> list[ArchGraph | None]:
    """Decode each row of ``Z``; invalid decodes come back as None."""
    logits = decode_logits(np.atleast_2d(Z), dec)
    out: list[ArchGraph | None] = []
    for i in range(logits.nodes.shape[0]):
        try:
            out.append(graph_from_logits(DecodedLogits(logits.nodes[i], logits.presence[i], logits.edges[i]), space))
        except DecodeInvalidError:
            out.append(None)
    return out


# -- losses ---------------------------------------------------------------------

def kl_divergence(mu: Tensor, logvar: Tensor) -> Tensor:
    """Per-row KL(N(mu, diag exp(logvar)) || N(0, I)) in closed form."""
    return nd.sum_(nd.square(mu) + nd.exp(logvar) - logvar - 1.0, axis=1) * 0.5


def _one_hot(idx: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(idx.shape + (n,))
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def reconstruction_nll(out: Tensor, packed: PackedGraphs, dec: GraphDecoder) -> Tensor:
    """Per-row negative log-likelihood of the packed graphs under the decoder logits."""
    s = dec.space
    node_logits, pres_logits, edge_logits = dec.blocks(out)
    B = out.shape[0]
    node_lp = nd.log_softmax(node_logits.reshape(B * s.num_nodes, s.node_classes))
    node_t = _one_hot(packed.nodes.reshape(-1), s.node_classes)
    node_nll = -nd.sum_((node_lp * node_t).reshape(B, -1), axis=1)
    y = packed.presence.astype(np.float64)
    pres_nll = nd.sum_(nd.softplus(pres_logits) - pres_logits * y, axis=1)
    edge_lp = nd.log_softmax(edge_logits.reshape(B * s.num_pairs, s.edge_vocab_size))
    edge_t = _one_hot(packed.edge_attr.reshape(-1), s.edge_vocab_size) * y.reshape(-1, 1)
    edge_nll = -nd.sum_((edge_lp * edge_t).reshape(B, -1), axis=1)
    return node_nll + pres_nll + edge_nll


def _batch_elbo(packed: PackedGraphs, enc: VariationalEncoder, dec: GraphDecoder, eps: np.ndarray):
    mu, logvar = enc(packed.batch())
    z = mu + nd.exp(logvar * 0.5) * eps
    kl = kl_divergence(mu, logvar)
    rec = reconstruction_nll(dec(z), packed, dec)
    return z, kl, rec


def elbo_loss(g: ArchGraph | PackedGraphs, enc: VariationalEncoder, dec: GraphDecoder,
              rng: np.random.Generator | None = None, eps: np.ndarray | None = None,
              kl_weight: float = 1.0) -> Tensor:
    """Mean over graphs of KL + reconstruction NLL at one reparameterized draw.

    ``kl_weight`` below 1 trades prior matching for reconstruction; see TrainConfig.
    """
    packed = g if isinstance(g, PackedGraphs) else PackedGraphs.from_graphs([g], dec.space)
    if eps is None:
        eps = rng.standard_normal((len(packed), enc.latent_dim))
    _, kl, rec = _batch_elbo(packed, enc, dec, eps)
    return nd.mean(kl * kl_weight + rec)


@dataclass
class ScoreNormalizer:
    """Affine map of raw scores to zero mean and unit variance."""

    mean: float = 0.0
    std: float = 1.0

    @classmethod
    def fit(cls, scores) -> ScoreNormalizer:
        s = np.asarray(scores, dtype=np.float64)
        std = float(s.std())
        return cls(float(s.mean()), std if std > 1e-12 else 1.0)

    def forward(self, s):
        return (np.asarray(s, dtype=np.float64) - self.mean) / self.std

    def inverse(self, y):
        return np.asarray(y, dtype=np.float64) * self.std + self.mean


@dataclass
class ModelBundle:
    """Everything latent-space search needs: encoder, decoder, latent predictor."""

    space: SearchSpace
    encoder: VariationalEncoder
    decoder: GraphDecoder
    head: Module  # ICNN (mode "cr") or plain MLP (mode "unconstrained")
    mode: str = "cr"
    normalizer: ScoreNormalizer = field(default_factory=ScoreNormalizer)
    predictor: Module | None = None
    history: list = field(default_factory=list)

    def predict_latent(self, Z: np.ndarray) -> np.ndarray:
        with nd.no_grad():
            return self.head(Tensor(np.atleast_2d(Z))).data.reshape(-1)


def joint_loss(g: ArchGraph | PackedGraphs, s_score, models: ModelBundle,
               rng: np.random.Generator | None = None, eps: np.ndarray | None = None,
               kl_weight: float = 1.0) -> Tensor:
    """ELBO plus the squared error of the latent predictor at the sampled z.

    ``s_score`` is the already-normalized label (scalar or per-graph array).
    """
    packed = g if isinstance(g, PackedGraphs) else PackedGraphs.from_graphs([g], models.space)
    if eps is None:
        eps = rng.standard_normal((len(packed), models.encoder.latent_dim))
    z, kl, rec = _batch_elbo(packed, models.encoder, models.decoder, eps)
    target = np.broadcast_to(np.asarray(s_score, dtype=np.float64), (len(packed),))
    pred = models.head(z).reshape(-1)
    return nd.mean(kl * kl_weight + rec + nd.square(pred - target))
