import numpy as np
import pytest

from crlso import ndgrad as nd
from crlso.icnn import (
    ICNN,
    RankDeficiencyWarning,
    RegressionConfig,
    fit_convex_regression,
    fit_mlp_regression,
    icnn_forward,
    project_nonneg,
    verify_convexity,
)


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


def test_single_layer_is_affine():
    p = ICNN(2, 8, 1, rng())
    p.wz[0].weight.data[:] = [[1.0], [2.0]]
    p.wz[0].bias.data[:] = 0.5
    assert icnn_forward(np.array([1.0, 1.0]), p) == pytest.approx(3.5)


def test_constant_network():
    p = ICNN(3, 4, 2, rng())
    for lin in p.wz:
        lin.weight.data[:] = 0.0
    p.wz[-1].bias.data[:] = 2.5
    out = icnn_forward(rng(1).normal(size=(10, 3)), p)
    assert np.allclose(out, 2.5)


def test_shape_error_names_icnn():
    p = ICNN(3, 4, 2, rng())
    with pytest.raises(nd.ShapeError, match="icnn"):
        p(nd.Tensor(np.ones((2, 4))))


def test_midpoint_convexity_random_networks():
    r = rng(2)
    for d in (2, 8):
        p = ICNN(d, 16, 3, r)
        for w in p.wy:
            w.data[:] = r.normal(size=w.shape)
        project_nonneg(p)
        rep = verify_convexity(p, 5000, r)
        assert rep.passed and rep.max_violation <= 1e-9


def test_projection():
    p = ICNN(2, 4, 3, rng())
    p.wy[0].data[0, 0] = -0.3
    wz = [lin.weight.data.copy() for lin in p.wz]
    p.project_()
    assert p.wy[0].data[0, 0] == 0.0
    once = [w.data.copy() for w in p.wy]
    p.project_()
    assert all(np.array_equal(a, w.data) for a, w in zip(once, p.wy))
    assert all(np.array_equal(a, lin.weight.data) for a, lin in zip(wz, p.wz))


def test_negative_weight_detected_and_layer_named():
    # slope 0 with a negative recurrence weight: f(z) = -relu(z) is concave
    p = ICNN(1, 1, 2, rng(), slope=0.0)
    p.wz[0].weight.data[:] = 1.0
    p.wz[0].bias.data[:] = 0.0
    p.wz[1].weight.data[:] = 0.0
    p.wz[1].bias.data[:] = 0.0
    p.wy[0].data[:] = -1.0
    rep = verify_convexity(p, 2000, rng(3))
    assert not rep.passed
    assert rep.max_violation > 1e-3
    assert rep.offending_layer == 1


def test_endpoints_are_exact():
    p = ICNN(4, 8, 3, rng(4))
    z1, z2 = rng(5).normal(size=(2, 4))
    for lam in (0.0, 1.0):
        mid = lam * z1 + (1 - lam) * z2
        assert icnn_forward(mid, p) == lam * icnn_forward(z1, p) + (1 - lam) * icnn_forward(z2, p)


def test_fit_abs_value():
    z = np.linspace(-2, 2, 200)[:, None]
    cfg = RegressionConfig(hidden=32, layers=3, epochs=300, batch_size=32, lr=1e-2)
    p = fit_convex_regression(z, np.abs(z[:, 0]), cfg, rng(6))
    assert np.mean((icnn_forward(z, p) - np.abs(z[:, 0])) ** 2) < 1e-3
    assert not p.negative_layers()


def test_fit_piecewise_max():
    z = np.linspace(-3, 3, 300)[:, None]
    y = np.maximum.reduce([z[:, 0], -z[:, 0], 0.5 * z[:, 0] + 1])
    cfg = RegressionConfig(hidden=32, layers=3, epochs=300, batch_size=32, lr=1e-2)
    p = fit_convex_regression(z, y, cfg, rng(7))
    assert np.mean((icnn_forward(z, p) - y) ** 2) < 1e-3


def test_fit_constant_target():
    z = rng(8).normal(size=(64, 3))
    cfg = RegressionConfig(hidden=16, layers=2, epochs=200, lr=1e-2)
    p = fit_convex_regression(z, np.full(64, 1.5), cfg, rng(9))
    assert np.allclose(icnn_forward(z, p), 1.5, atol=0.05)


def test_identical_inputs_warn():
    with pytest.warns(RankDeficiencyWarning):
        fit_convex_regression(np.ones((5, 2)), np.arange(5.0), RegressionConfig(hidden=4, epochs=2), rng())


def test_too_few_samples():
    with pytest.raises(ValueError):
        fit_convex_regression(np.ones((1, 2)), [1.0], RegressionConfig(hidden=4, epochs=2), rng())


def test_mlp_regression_fits_nonconvex():
    z = np.linspace(-2, 2, 200)[:, None]
    y = np.sin(2 * z[:, 0])
    m = fit_mlp_regression(z, y, RegressionConfig(hidden=32, layers=3, epochs=300, lr=1e-2), rng(10))
    with nd.no_grad():
        pred = m(nd.Tensor(z)).data[:, 0]
    assert np.mean((pred - y) ** 2) < 0.02
