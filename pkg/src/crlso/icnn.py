"""Input convex neural networks and convex regression."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import ndgrad as nd
from .ndgrad import MLP, Linear, Module, Tensor, param

log = logging.getLogger(__name__)

CONVEXITY_TOL = 1e-9


class RankDeficiencyWarning(UserWarning):
    pass


class ICNN(Module):
    """Scalar network y_{i+1} = h(Wy_i y_i + Wz_i z + b_i), convex in z.

    Layer 0 has no recurrence term (y_0 = 0).  Recurrence weights of layers
    1..k-1 must stay non-negative; the passthrough weights are free.  Hidden
    activations are LeakyReLU with a non-negative slope, the last layer is
    affine with width 1.
    """

    def __init__(self, input_dim: int, hidden: int, layers: int, rng: np.random.Generator,
                 slope: float = 0.1):
        if layers < 1:
            raise ValueError("an ICNN needs at least one layer")
        if slope < 0:
            raise ValueError("activation slope must be non-negative to stay convex and non-decreasing")
        self.input_dim = input_dim
        self.slope = slope
        widths = [hidden] * (layers - 1) + [1]
        self.wz = [Linear(input_dim, w, rng) for w in widths]
        self.wy = [param(rng.uniform(0.0, 2.0 / w_in, size=(w_in, w_out)))
                   for w_in, w_out in zip(widths[:-1], widths[1:])]

    @property
    def layers(self) -> int:
        return len(self.wz)

    def __call__(self, z: Tensor) -> Tensor:
        if z.shape[-1] != self.input_dim:
            raise nd.ShapeError("icnn", f"expected input dimension {self.input_dim}, got {z.shape[-1]}")
        y = self.wz[0](z)
        for i in range(1, self.layers):
            y = nd.leaky_relu(y, self.slope)
            y = y @ self.wy[i - 1] + self.wz[i](z)
        return y

    def project_(self) -> ICNN:
        """Clamp recurrence weights at zero in place (idempotent)."""
        for w in self.wy:
            np.maximum(w.data, 0.0, out=w.data)
        return self

    def negative_layers(self) -> list[int]:
        """Indices i of layers whose recurrence weights Wy_i have a negative entry."""
        return [i + 1 for i, w in enumerate(self.wy) if np.any(w.data < 0)]


def icnn_forward(z, p: ICNN) -> np.ndarray | float:
    """Evaluate without recording; a single vector gives a float."""
    zz = np.asarray(z, dtype=np.float64)
    with nd.no_grad():
        out = p(Tensor(np.atleast_2d(zz))).data.reshape(-1)
    return float(out[0]) if zz.ndim == 1 else out


def project_nonneg(p: ICNN) -> ICNN:
    return p.project_()


@dataclass
class ConvexityReport:
    passed: bool
    max_violation: float
    trials: int
    offending_layer: int | None = None


def verify_convexity(p: ICNN, trials: int, rng: np.random.Generator, scale: float = 3.0,
                     tol: float = CONVEXITY_TOL) -> ConvexityReport:
    """Sample (z1, z2, lam) and measure f(lam z1 + (1-lam) z2) - (lam f(z1) + (1-lam) f(z2))."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    d = p.input_dim
    z1 = rng.normal(scale=scale, size=(trials, d))
    z2 = rng.normal(scale=scale, size=(trials, d))
    lam = rng.uniform(0.0, 1.0, size=(trials, 1))
    mid = lam * z1 + (1.0 - lam) * z2
    f = icnn_forward(np.concatenate([z1, z2, mid]), p)
    f1, f2, fm = f[:trials], f[trials: 2 * trials], f[2 * trials:]
    lam = lam[:, 0]
    violation = float(np.max(fm - (lam * f1 + (1.0 - lam) * f2)))
    bad = p.negative_layers()
    if bad:
        return ConvexityReport(False, violation, trials, bad[0])
    return ConvexityReport(violation <= tol, violation, trials)


@dataclass
class RegressionConfig:
    hidden: int = 256
    layers: int = 3
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.5
    cosine: bool = True


def train_regressor(model: Module, Z: np.ndarray, y: np.ndarray, cfg: RegressionConfig,
                    rng: np.random.Generator, project: bool = False) -> list[float]:
    """Minibatch MSE regression with Adam; projects ICNN weights after every step.

    Returns the per-epoch mean training loss.
    """
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    opt = nd.Adam(model.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    n = Z.shape[0]
    curve = []
    if project:
        model.project_()
    for epoch in range(cfg.epochs):
        if cfg.cosine:
            opt.lr = max(nd.cosine_lr(epoch, cfg.epochs, cfg.lr), 1e-3 * cfg.lr)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start: start + cfg.batch_size]
            pred = model(Tensor(Z[idx])).reshape(-1)
            loss = nd.mean(nd.square(pred - y[idx]))
            opt.zero_grad()
            nd.backward(loss)
            opt.step()
            if project:
                model.project_()
            total += loss.item() * len(idx)
        curve.append(total / n)
    return curve


def fit_convex_regression(Z, s, cfg: RegressionConfig | None = None,
                          rng: np.random.Generator | None = None, init: ICNN | None = None) -> ICNN:
    """Fit an ICNN to (z, s) pairs by projected Adam on the mean squared error."""
    cfg = cfg or RegressionConfig()
    rng = rng if rng is not None else np.random.Generator(np.random.Philox(0))
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[0] == 1 and np.ndim(s) == 1 and len(s) > 1:
        Z = Z.T
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    if Z.shape[0] < 2:
        raise ValueError("convex regression needs at least two samples")
    if not np.all(np.isfinite(s)):
        raise ValueError("targets must be finite")
    if np.allclose(Z, Z[0]):
        warnings.warn("all inputs are identical; the fit is rank deficient", RankDeficiencyWarning)
    model = init if init is not None else ICNN(Z.shape[1], cfg.hidden, cfg.layers, rng)
    train_regressor(model, Z, s, cfg, rng, project=True)
    return model


def fit_mlp_regression(Z, s, cfg: RegressionConfig | None = None,
                       rng: np.random.Generator | None = None) -> MLP:
    """Unconstrained perceptron with the same depth and width as the ICNN."""
    cfg = cfg or RegressionConfig()
    rng = rng if rng is not None else np.random.Generator(np.random.Philox(0))
    Z = np.asarray(Z, dtype=np.float64)
    model = latent_mlp(Z.shape[1], cfg.hidden, cfg.layers, rng)
    train_regressor(model, Z, s, cfg, rng, project=False)
    return model


def latent_mlp(input_dim: int, hidden: int, layers: int, rng: np.random.Generator) -> MLP:
    return MLP([input_dim] + [hidden] * (layers - 1) + [1], rng)
