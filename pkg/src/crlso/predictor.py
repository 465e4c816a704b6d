"""Semi-supervised GNN performance predictor and correlation metrics."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import ndgrad as nd
from .graphspace import ArchGraph, SearchSpace
from .gvae import GraphEncoder, PackedGraphs, ScoreNormalizer
from .ndgrad import MLP, Module, Tensor
from .ndgrad.kernels import concordance_counts

log = logging.getLogger(__name__)


class UndefinedCorrelationError(ValueError):
    pass


@dataclass
class PredictorConfig:
    channels: int = 512
    layers: int = 3
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.5
    direction: str = "in"
    early_stop_tol: float = 1e-6
    early_stop_window: int = 20


class GnnPredictor(Module):
    """Graph encoder with the G-VAE's architecture followed by a two-layer scalar head."""

    def __init__(self, space: SearchSpace, channels: int, layers: int, rng: np.random.Generator,
                 direction: str = "in"):
        self.space = space
        self.gnn = GraphEncoder(space, channels, layers, rng, direction)
        self.head = MLP([channels, channels, 1], rng)
        self.normalizer = ScoreNormalizer()

    def __call__(self, batch) -> Tensor:
        return self.head(self.gnn(batch)).reshape(-1)

    def predict(self, graphs: Sequence[ArchGraph] | PackedGraphs, batch_size: int = 2048) -> np.ndarray:
        """Raw-scale predictions."""
        packed = graphs if isinstance(graphs, PackedGraphs) else PackedGraphs.from_graphs(list(graphs), self.space)
        out = [np.zeros(0)]
        with nd.no_grad():
            for start in range(0, len(packed), batch_size):
                out.append(self(packed.batch(slice(start, start + batch_size))).data)
        return self.normalizer.inverse(np.concatenate(out))


def train_predictor(D: Iterable[tuple[ArchGraph, float]], space: SearchSpace, cfg: PredictorConfig,
                    rng: np.random.Generator) -> GnnPredictor:
    """MSE regression on normalized labels; stops early once the epoch loss plateaus."""
    pairs = list(D)
    if not pairs:
        raise nd.ContractError("cannot train a predictor on an empty labeled set")
    graphs = [g for g, _ in pairs]
    scores = np.array([s for _, s in pairs], dtype=np.float64)
    model = GnnPredictor(space, cfg.channels, cfg.layers, rng, cfg.direction)
    model.normalizer = ScoreNormalizer.fit(scores)
    y = model.normalizer.forward(scores)
    packed = PackedGraphs.from_graphs(graphs, space)
    opt = nd.Adam(model.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    n = len(pairs)
    curve: list[float] = []
    for epoch in range(cfg.epochs):
        opt.lr = nd.cosine_lr(epoch, cfg.epochs, cfg.lr)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start: start + cfg.batch_size]
            loss = nd.mean(nd.square(model(packed.batch(idx)) - y[idx]))
            opt.zero_grad()
            nd.backward(loss)
            opt.step()
            total += loss.item() * len(idx)
        curve.append(total / n)
        w = cfg.early_stop_window
        if len(curve) > w and curve[-w - 1] - min(curve[-w:]) < cfg.early_stop_tol:
            log.info("predictor converged after %d epochs", epoch + 1)
            break
    model.curve = curve
    return model


def pseudo_label(pred: GnnPredictor, unlabeled: Sequence[ArchGraph]) -> list[tuple[ArchGraph, float]]:
    graphs = list(unlabeled)
    if not graphs:
        return []
    return list(zip(graphs, pred.predict(graphs).tolist()))


def kendall_tau(x, y) -> float:
    """Kendall tau-b, accounting for ties in either list."""
    c, d, tx, ty = concordance_counts(np.asarray(x), np.asarray(y))
    denom = np.sqrt(float(c + d + tx) * float(c + d + ty))
    if denom == 0.0:
        raise UndefinedCorrelationError("Kendall tau is undefined for constant input")
    return float((c - d) / denom)


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=np.float64) - np.mean(x)
    y = np.asarray(y, dtype=np.float64) - np.mean(y)
    denom = np.sqrt(np.dot(x, x) * np.dot(y, y))
    if denom == 0.0:
        raise UndefinedCorrelationError("Pearson correlation is undefined for constant input")
    return float(np.clip(np.dot(x, y) / denom, -1.0, 1.0))


def correlation_metrics(pred_scores, true_scores) -> tuple[float, float]:
    pred_scores = np.asarray(pred_scores, dtype=np.float64)
    true_scores = np.asarray(true_scores, dtype=np.float64)
    if pred_scores.shape != true_scores.shape or pred_scores.ndim != 1:
        raise ValueError("correlation needs two equal-length 1-D lists")
    if pred_scores.size < 2:
        raise ValueError("correlation needs at least two points")
    return pearson_r(pred_scores, true_scores), kendall_tau(pred_scores, true_scores)


def unlabeled_pool(space: SearchSpace, exclude: set, rng: np.random.Generator,
                   max_enumerate: int = 100_000, samples: int = 50_000) -> list[ArchGraph]:
    """Full enumeration for small spaces, else uniform samples; graphs in ``exclude`` are left out."""
    size = space.size()
    if size is not None and size <= max_enumerate:
        return [g for g in space.enumerate() if g not in exclude]
    pool, seen = [], set(exclude)
    attempts = 0
    while len(pool) < samples and attempts < 20 * samples:
        attempts += 1
        g = space.sample(rng)
        if g not in seen:
            seen.add(g)
            pool.append(g)
    return pool
