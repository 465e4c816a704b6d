"""Two-dimensional toy study: autoencoder plus latent ICNN against direct regressors."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ndgrad as nd
from .icnn import ICNN
from .ndgrad import MLP, Module, Tensor
from .oracle import toy_grid, toy_h


@dataclass
class ToyConfig:
    latent_dims: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    points_per_axis: int = 64
    hidden: int = 64
    icnn_hidden: int = 64
    icnn_layers: int = 3
    epochs: int = 300
    batch_size: int = 64
    lr: float = 3e-3
    beta1: float = 0.0
    beta2: float = 0.5
    seed: int = 0


@dataclass
class ToyRow:
    model: str
    dimension: int | None
    prediction: float
    reconstruction: float | None


class ToyAutoencoder(Module):
    """Deterministic encoder 2 -> d and decoder d -> 2, both three-layer perceptrons, plus an ICNN on z."""

    def __init__(self, d: int, cfg: ToyConfig, rng: np.random.Generator):
        self.encoder = MLP([2, cfg.hidden, cfg.hidden, d], rng)
        self.decoder = MLP([d, cfg.hidden, cfg.hidden, 2], rng)
        self.icnn = ICNN(d, cfg.icnn_hidden, cfg.icnn_layers, rng)

    def losses(self, x: np.ndarray, y: np.ndarray) -> tuple[Tensor, Tensor]:
        z = self.encoder(Tensor(x))
        rec = nd.sum_(nd.square(self.decoder(z) - x), axis=1)
        pred = nd.square(self.icnn(z).reshape(-1) - y)
        return rec, pred


def _train(model: Module, loss_fn, n: int, cfg: ToyConfig, rng: np.random.Generator, project=None) -> None:
    opt = nd.Adam(model.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    for epoch in range(cfg.epochs):
        opt.lr = nd.cosine_lr(epoch, cfg.epochs, cfg.lr)
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            loss = loss_fn(order[start: start + cfg.batch_size])
            opt.zero_grad()
            nd.backward(loss)
            opt.step()
            if project is not None:
                project()


def _mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((a - b) ** 2))


def run_toy_study(cfg: ToyConfig | None = None) -> list[ToyRow]:
    """Fit the direct baselines and one autoencoder+ICNN per latent dimension on the grid samples of h.

    Losses are training-set means in the raw units of h and x.
    """
    cfg = cfg or ToyConfig()
    if not cfg.latent_dims:
        raise ValueError("latent_dims must not be empty")
    x = toy_grid(cfg.points_per_axis)
    y = toy_h(x)
    n = x.shape[0]
    rows: list[ToyRow] = []

    def rng_for(k: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, k])))

    for k, name in enumerate(("MLP", "ICNN")):
        rng = rng_for(k)
        if name == "MLP":
            net = MLP([2] + [cfg.icnn_hidden] * (cfg.icnn_layers - 1) + [1], rng)
            project = None
        else:
            net = ICNN(2, cfg.icnn_hidden, cfg.icnn_layers, rng)
            project = net.project_
            net.project_()
        _train(net, lambda idx: nd.mean(nd.square(net(Tensor(x[idx])).reshape(-1) - y[idx])), n, cfg, rng, project)
        with nd.no_grad():
            pred = net(Tensor(x)).data.reshape(-1)
        rows.append(ToyRow(name, None, _mse(pred, y), None))

    for d in sorted(cfg.latent_dims):
        rng = rng_for(100 + d)
        ae = ToyAutoencoder(d, cfg, rng)
        ae.icnn.project_()

        def loss(idx, ae=ae):
            rec, pred = ae.losses(x[idx], y[idx])
            return nd.mean(rec + pred)

        _train(ae, loss, n, cfg, rng, ae.icnn.project_)
        with nd.no_grad():
            rec, pred = ae.losses(x, y)
        rows.append(ToyRow("CR-LSO", d, float(pred.data.mean()), float(rec.data.mean())))
    return rows


def write_toy_csv(path: str | Path, rows: list[ToyRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "dimension", "prediction", "reconstruction"])
        for r in rows:
            w.writerow([r.model, "" if r.dimension is None else r.dimension, repr(r.prediction),
                        "" if r.reconstruction is None else repr(r.reconstruction)])
