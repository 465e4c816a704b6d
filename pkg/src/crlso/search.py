"""Semi-supervised G-VAE training and the latent gradient-ascent search loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from . import ndgrad as nd
from .graphspace import ArchGraph, SearchSpace
from .gvae import (
    GraphDecoder,
    LatentPoint,
    ModelBundle,
    PackedGraphs,
    ScoreNormalizer,
    VariationalEncoder,
    _batch_elbo,
    decode_many,
    posterior_means,
)
from .icnn import ICNN, RegressionConfig, latent_mlp, train_regressor
from .ndgrad import Tensor
from .predictor import PredictorConfig, pseudo_label, train_predictor, unlabeled_pool

log = logging.getLogger(__name__)

MODES = ("cr", "unconstrained", "random")


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for an independent named stream of a run seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


@dataclass
class TrainConfig:
    gnn_channels: int = 512
    gnn_layers: int = 3
    latent_dim: int = 64
    decoder_hidden: int = 512
    icnn_hidden: int = 256
    icnn_layers: int = 3
    direction: str = "in"
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.5
    epochs: int = 200
    pred_epochs: int = 200
    batch_vae: int = 512
    batch_pred: int = 32
    # Weight of the KL term. A uniform architecture distribution makes the
    # unweighted bound indifferent between encoding and posterior collapse.
    kl_weight: float = 0.1

    def predictor_config(self) -> PredictorConfig:
        return PredictorConfig(channels=self.gnn_channels, layers=self.gnn_layers, epochs=self.pred_epochs,
                               batch_size=self.batch_pred, lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                               direction=self.direction)


@dataclass
class SearchConfig:
    Q_start: int = 300
    Q_max: int = 600
    K: int = 10
    eta0: float = 0.02
    delta_eta: float = 0.02
    noise_eps: float = 0.05
    max_escalations: int = 50
    mode: str = "cr"
    finetune_epochs: int = 50
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0 < self.Q_start <= self.Q_max:
            raise ValueError(f"need 0 < Q_start <= Q_max, got {self.Q_start} and {self.Q_max}")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.eta0 <= 0 or self.delta_eta <= 0:
            raise ValueError("eta0 and delta_eta must be positive")
        if self.noise_eps < 0 or self.max_escalations < 0:
            raise ValueError("noise_eps and max_escalations must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


class LabeledSet:
    """Insertion-ordered (architecture, score) records with a hash index."""

    def __init__(self, records: Iterable[tuple[ArchGraph, float]] = ()):
        self._graphs: list[ArchGraph] = []
        self._scores: list[float] = []
        self._index: dict[ArchGraph, int] = {}
        for g, s in records:
            self.add(g, s)

    def add(self, g: ArchGraph, score: float) -> None:
        if not g.is_canonical():
            raise ValueError("labeled architectures must be canonical")
        if g in self._index:
            raise ValueError(f"architecture {g.arch_hash()} is already labeled")
        score = float(score)
        if not math.isfinite(score):
            raise ValueError("scores must be finite")
        self._index[g] = len(self._graphs)
        self._graphs.append(g)
        self._scores.append(score)

    def __contains__(self, g: ArchGraph) -> bool:
        return g in self._index

    def __len__(self) -> int:
        return len(self._graphs)

    def __iter__(self) -> Iterator[tuple[ArchGraph, float]]:
        return iter(zip(self._graphs, self._scores))

    @property
    def graphs(self) -> list[ArchGraph]:
        return list(self._graphs)

    @property
    def scores(self) -> np.ndarray:
        return np.array(self._scores, dtype=np.float64)

    def score_of(self, g: ArchGraph) -> float:
        return self._scores[self._index[g]]

    def top(self, k: int) -> list[int]:
        """Positions of the k best records; ties go to the earlier insertion."""
        s = self.scores
        return np.lexsort((np.arange(s.size), -s))[:k].tolist()

    def best(self) -> tuple[ArchGraph, float]:
        i = self.top(1)[0]
        return self._graphs[i], self._scores[i]


# -- latent-space training ----------------------------------------------------------

def build_models(space: SearchSpace, cfg: TrainConfig, mode: str, rng: np.random.Generator) -> ModelBundle:
    enc = VariationalEncoder(space, cfg.gnn_channels, cfg.gnn_layers, cfg.latent_dim, rng, cfg.direction)
    dec = GraphDecoder(space, cfg.latent_dim, cfg.decoder_hidden, rng)
    if mode == "cr":
        head = ICNN(cfg.latent_dim, cfg.icnn_hidden, cfg.icnn_layers, rng)
    else:
        head = latent_mlp(cfg.latent_dim, cfg.icnn_hidden, cfg.icnn_layers, rng)
    return ModelBundle(space, enc, dec, head, mode)


def train_joint(models: ModelBundle, packed: PackedGraphs, y: np.ndarray, cfg: TrainConfig,
                rng: np.random.Generator) -> list[dict]:
    """Minimize KL + reconstruction + squared prediction error over (packed, y)."""
    params = models.encoder.parameters() + models.decoder.parameters() + models.head.parameters()
    opt = nd.Adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    project = models.mode == "cr"
    if project:
        models.head.project_()
    n = len(packed)
    curve = []
    for epoch in range(cfg.epochs):
        opt.lr = nd.cosine_lr(epoch, cfg.epochs, cfg.lr)
        order = rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, cfg.batch_vae):
            idx = order[start: start + cfg.batch_vae]
            eps = rng.standard_normal((len(idx), cfg.latent_dim))
            z, kl, rec = _batch_elbo(packed.subset(idx), models.encoder, models.decoder, eps)
            pred = nd.square(models.head(z).reshape(-1) - y[idx])
            loss = nd.mean(kl * cfg.kl_weight + rec + pred)
            opt.zero_grad()
            nd.backward(loss)
            opt.step()
            if project:
                models.head.project_()
            sums += [kl.data.sum(), rec.data.sum(), pred.data.sum()]
        kl_m, rec_m, pred_m = sums / n
        row = {"epoch": epoch + 1, "loss": cfg.kl_weight * kl_m + rec_m + pred_m, "kl": kl_m, "reconstruction": rec_m,
               "prediction": pred_m}
        curve.append(row)
        log.debug("joint epoch %d: %s", epoch + 1, row)
    return curve


def train_latent_space(D: LabeledSet, space: SearchSpace, cfg: TrainConfig, mode: str, rng: np.random.Generator,
                   pool: Sequence[ArchGraph] | None = None) -> ModelBundle:
    """Predictor on D, pseudo-labels on the pool, then joint G-VAE + latent-predictor training on both.

    ``pool`` defaults to the whole space minus D (or uniform samples for large spaces).
    """
    if mode not in ("cr", "unconstrained"):
        raise ValueError(f"latent-space training needs mode 'cr' or 'unconstrained', got {mode!r}")
    predictor = train_predictor(D, space, cfg.predictor_config(), rng)
    if pool is None:
        pool = unlabeled_pool(space, set(D.graphs), rng)
    pool = [g for g in pool if g not in D]
    pseudo = pseudo_label(predictor, pool)
    graphs = D.graphs + [g for g, _ in pseudo]
    scores = np.concatenate([D.scores, np.array([s for _, s in pseudo], dtype=np.float64)])
    normalizer = ScoreNormalizer.fit(scores)
    models = build_models(space, cfg, mode, rng)
    models.normalizer = normalizer
    models.predictor = predictor
    packed = PackedGraphs.from_graphs(graphs, space)
    models.history = train_joint(models, packed, normalizer.forward(scores), cfg, rng)
    models.big_size = len(graphs)
    return models


# -- inference -----------------------------------------------------------------------

def latent_gradient(head, Z: np.ndarray) -> np.ndarray:
    """Row-wise gradient of the scalar head at each row of Z."""
    z = Tensor(np.atleast_2d(np.asarray(Z, dtype=np.float64)).copy(), requires_grad=True)
    nd.backward(nd.sum_(head(z)))
    g = z.grad
    if not np.all(np.isfinite(g)):
        raise nd.NumericalError(f"non-finite latent gradient (max |g| = {np.nanmax(np.abs(g))})")
    return g


def score_gradient(models: ModelBundle, Z: np.ndarray) -> np.ndarray:
    """Gradient of the de-normalized latent predictor, i.e. in raw score units."""
    return models.normalizer.std * latent_gradient(models.head, Z)


def gradient_step(z: LatentPoint | np.ndarray, head, eta: float, noise_eps: float,
                  rng: np.random.Generator, scale: float = 1.0) -> LatentPoint:
    """Perturb by noise_eps * N(0, I), then move eta along ``scale`` times the head's gradient."""
    if eta < 0:
        raise ValueError("step size must be non-negative")
    zz = z.z if isinstance(z, LatentPoint) else np.asarray(z, dtype=np.float64)
    if noise_eps > 0:
        zz = zz + noise_eps * rng.standard_normal(zz.shape)
    return LatentPoint(zz + eta * scale * latent_gradient(head, zz)[0], "stepped")


@dataclass
class Candidate:
    graph: ArchGraph
    eta: float
    seed_rank: int


def infer_candidates(D: LabeledSet, models: ModelBundle, cfg: SearchConfig,
                     rng: np.random.Generator) -> list[Candidate]:
    """One escalating gradient step per top-K seed; returns novel decodes in seed order."""
    if len(D) < cfg.K:
        raise ValueError(f"need at least K={cfg.K} labeled architectures, have {len(D)}")
    top = D.top(cfg.K)
    graphs = D.graphs
    seeds = posterior_means(PackedGraphs.from_graphs([graphs[i] for i in top], models.space), models.encoder)
    etas = cfg.eta0 + cfg.delta_eta * np.arange(cfg.max_escalations + 1)
    taken: set[ArchGraph] = set()
    out: list[Candidate] = []
    for k, z in enumerate(seeds):
        found = None
        for _attempt in range(2):  # the second pass redraws the noise
            noisy = z + cfg.noise_eps * rng.standard_normal(z.shape)
            grad = score_gradient(models, noisy)[0]
            decoded = decode_many(noisy[None, :] + etas[:, None] * grad[None, :], models.decoder, models.space)
            for eta, g in zip(etas, decoded):
                if g is not None and g not in D and g not in taken:
                    found = Candidate(g, float(eta), k)
                    break
            if found is not None:
                break
        if found is None:
            log.info("seed %d exhausted %d escalations twice without a novel architecture", k, cfg.max_escalations)
            continue
        taken.add(found.graph)
        out.append(found)
    if not out:
        log.warning("no seed produced a novel architecture; falling back to uniform sampling")
    return out


def finetune_head(models: ModelBundle, D: LabeledSet, cfg: SearchConfig, tcfg: TrainConfig,
                  rng: np.random.Generator) -> None:
    """Continue training the latent predictor on posterior means of the labeled set."""
    if cfg.finetune_epochs <= 0:
        return
    Z = posterior_means(PackedGraphs.from_graphs(D.graphs, models.space), models.encoder)
    y = models.normalizer.forward(D.scores)
    rcfg = RegressionConfig(epochs=cfg.finetune_epochs, batch_size=tcfg.batch_pred, lr=tcfg.lr,
                            beta1=tcfg.beta1, beta2=tcfg.beta2)
    train_regressor(models.head, Z, y, rcfg, rng, project=models.mode == "cr")


# -- search loop --------------------------------------------------------------------

TRACE_COLUMNS = ("query_index", "arch_hash", "score", "eta", "mode", "seed")


@dataclass
class TraceRow:
    query_index: int
    arch_hash: str
    score: float
    eta: float | None
    mode: str
    seed: int

    def as_csv(self) -> list[str]:
        return [str(self.query_index), self.arch_hash, repr(self.score),
                "" if self.eta is None else repr(self.eta), self.mode, str(self.seed)]


@dataclass
class SearchResult:
    best: ArchGraph
    best_score: float
    trace: list[TraceRow]
    labeled: LabeledSet
    models: ModelBundle | None = None
    oracle_calls: int = 0
    fallbacks: int = 0
    config: dict = field(default_factory=dict)


def _sample_new(space: SearchSpace, D: LabeledSet, rng: np.random.Generator, count: int) -> list[ArchGraph]:
    out: list[ArchGraph] = []
    seen: set[ArchGraph] = set()
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > 1000 * (count + 1):
            raise RuntimeError("could not draw enough unlabeled architectures; the space is exhausted")
        g = space.sample(rng)
        if g not in D and g not in seen:
            seen.add(g)
            out.append(g)
    return out


def run_crlso(space: SearchSpace, oracle: Callable[[ArchGraph], float], cfg: SearchConfig,
              tcfg: TrainConfig | None = None,
              on_checkpoint: Callable[[ModelBundle, int], None] | None = None,
              pool: Sequence[ArchGraph] | None = None) -> SearchResult:
    """Full search loop; every query of the oracle is recorded in the trace."""
    tcfg = tcfg or TrainConfig()
    D = LabeledSet()
    trace: list[TraceRow] = []
    calls = 0

    def query(g: ArchGraph, eta: float | None) -> None:
        nonlocal calls
        s = float(oracle(g))
        calls += 1
        D.add(g, s)
        trace.append(TraceRow(len(D), g.arch_hash(), s, eta, cfg.mode, cfg.seed))

    sample_rng = make_rng(cfg.seed, 0)
    if cfg.mode == "random":
        for g in _sample_new(space, D, sample_rng, cfg.Q_max):
            query(g, None)
        best, best_score = D.best()
        return SearchResult(best, best_score, trace, D, None, calls, 0, asdict(cfg))

    for g in _sample_new(space, D, sample_rng, cfg.Q_start):
        query(g, None)
    train_rng, search_rng = make_rng(cfg.seed, 1), make_rng(cfg.seed, 2)
    models = train_latent_space(D, space, tcfg, cfg.mode, train_rng, pool)
    fallbacks = 0
    iteration = 0
    while len(D) < cfg.Q_max:
        iteration += 1
        finetune_head(models, D, cfg, tcfg, search_rng)
        cands = infer_candidates(D, models, cfg, search_rng)
        room = cfg.Q_max - len(D)
        if cands:
            for c in cands[:room]:
                query(c.graph, c.eta)
        else:
            fallbacks += 1
            for g in _sample_new(space, D, search_rng, min(cfg.K, room)):
                query(g, None)
        if on_checkpoint is not None and cfg.checkpoint_every and iteration % cfg.checkpoint_every == 0:
            on_checkpoint(models, len(D))
    best, best_score = D.best()
    return SearchResult(best, best_score, trace, D, models, calls, fallbacks, asdict(cfg))


def write_trace(path: str | Path, trace: Sequence[TraceRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow(row.as_csv())


def write_curve(path: str | Path, curve: Sequence[dict]) -> None:
    if not curve:
        raise ValueError("empty training curve")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = list(curve[0])
        w.writerow(cols)
        for row in curve:
            w.writerow([row[c] if isinstance(row[c], int) else repr(float(row[c])) for c in cols])
