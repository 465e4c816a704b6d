import logging

import numpy as np
import pytest

from crlso import ndgrad as nd
from crlso.graphspace import SearchSpace
from crlso.gvae import LatentPoint, PackedGraphs, decode_argmax, posterior_means
from crlso.icnn import ICNN, verify_convexity
from crlso.ndgrad import Linear, Tensor
from crlso.oracle import SyntheticBench
from crlso.search import (
    LabeledSet,
    SearchConfig,
    TrainConfig,
    build_models,
    gradient_step,
    infer_candidates,
    latent_gradient,
    make_rng,
    run_crlso,
    train_latent_space,
    write_trace,
)

SMALL = SearchSpace(kind="edge", num_nodes=4, node_vocab_size=4, edge_vocab_size=3)  # 729 architectures
BENCH = SyntheticBench.for_space(SMALL, 0)
TINY = TrainConfig(gnn_channels=16, gnn_layers=2, latent_dim=4, decoder_hidden=32, icnn_hidden=16, lr=3e-3,
                   epochs=6, pred_epochs=30, batch_vae=64, batch_pred=32)


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


def labeled(n, seed=0):
    D = LabeledSet()
    r = rng(seed)
    while len(D) < n:
        g = SMALL.sample(r)
        if g not in D:
            D.add(g, BENCH(g))
    return D


@pytest.fixture(scope="module")
def trained():
    D = labeled(60)
    return D, train_latent_space(D, SMALL, TINY, "cr", make_rng(0, 1))


# -- configuration and labeled set ---------------------------------------------------

@pytest.mark.parametrize("kw", [dict(Q_start=0), dict(Q_start=10, Q_max=5), dict(K=0), dict(eta0=0.0),
                                dict(delta_eta=-1.0), dict(mode="bogus")])
def test_search_config_rejects(kw):
    with pytest.raises(ValueError):
        SearchConfig(**kw)


def test_labeled_set_invariants():
    D = labeled(5)
    g = D.graphs[0]
    with pytest.raises(ValueError):
        D.add(g, 1.0)
    other = next(x for x in SMALL.enumerate() if x not in D)
    with pytest.raises(ValueError):
        D.add(other, float("nan"))
    assert len(D) == 5 and g in D


def test_top_breaks_ties_by_insertion():
    graphs = list(SMALL.enumerate())[:4]
    D = LabeledSet([(graphs[0], 1.0), (graphs[1], 3.0), (graphs[2], 3.0), (graphs[3], 2.0)])
    assert D.top(3) == [1, 2, 3]
    assert D.best() == (graphs[1], 3.0)


# -- gradient steps ------------------------------------------------------------------

def test_null_step_is_identity():
    head = ICNN(4, 8, 3, rng()).project_()
    z = rng(1).standard_normal(4)
    out = gradient_step(LatentPoint(z), head, 0.0, 0.0, rng())
    np.testing.assert_array_equal(out.z, z)
    assert out.origin == "stepped"


def test_linear_head_moves_along_its_coefficients():
    lin = Linear(5, 1, rng(2))
    c = lin.weight.data[:, 0]
    z = rng(3).standard_normal(5)
    out = gradient_step(z, lin, 0.3, 0.0, rng())
    np.testing.assert_allclose(out.z, z + 0.3 * c, rtol=0, atol=1e-15)


def test_negative_step_rejected():
    with pytest.raises(ValueError):
        gradient_step(np.zeros(2), Linear(2, 1, rng()), -0.1, 0.0, rng())


def test_small_step_ascends_a_convex_head():
    r = rng(4)
    for _ in range(20):
        head = ICNN(6, 16, 3, r).project_()
        z = r.standard_normal(6)
        f0 = head(Tensor(z[None])).item()
        f1 = head(Tensor(gradient_step(z, head, 1e-4, 0.0, r).z[None])).item()
        assert f1 >= f0


def test_convex_head_never_decreases_along_repeated_steps():
    r = rng(5)
    head = ICNN(4, 16, 3, r).project_()
    z = r.standard_normal(4)
    values = []
    for _ in range(25):
        values.append(head(Tensor(z[None])).item())
        z = gradient_step(z, head, 0.5, 0.0, r).z
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_non_finite_gradient_aborts():
    lin = Linear(3, 1, rng())
    lin.weight.data[0, 0] = np.nan
    with pytest.raises(nd.NumericalError):
        latent_gradient(lin, np.zeros(3))


# -- training and inference ----------------------------------------------------------

def test_training_uses_labeled_plus_pool(trained):
    D, models = trained
    assert models.big_size == SMALL.size()
    pool = list(SMALL.enumerate())[:100]
    m2 = train_latent_space(D, SMALL, TrainConfig(**{**TINY.__dict__, "epochs": 1, "pred_epochs": 1}), "cr",
                            rng(), pool)
    assert m2.big_size == len(D) + len([g for g in pool if g not in D])


def test_trained_head_stays_convex(trained):
    _, models = trained
    assert verify_convexity(models.head, 2000, rng(6)).passed


def test_unconstrained_mode_uses_a_plain_perceptron():
    m = build_models(SMALL, TINY, "unconstrained", rng())
    assert not isinstance(m.head, ICNN)
    with pytest.raises(ValueError):
        train_latent_space(labeled(10), SMALL, TINY, "random", rng())


def test_candidates_are_novel_and_valid(trained):
    D, models = trained
    cfg = SearchConfig(Q_start=60, Q_max=100, K=5)
    cands = infer_candidates(D, models, cfg, rng(7))
    assert len(cands) <= 5
    assert len({c.graph for c in cands}) == len(cands)
    for c in cands:
        assert c.graph not in D
        SMALL.validate(c.graph)
        assert c.eta >= cfg.eta0


def test_collapsed_decoder_exhausts_escalation(trained, caplog):
    D, models = trained
    saved = models.decoder.state_dict()
    for p in models.decoder.parameters():
        p.data[...] = 0.0
    try:
        const = decode_argmax(np.zeros(TINY.latent_dim), models.decoder, SMALL)
        D2 = LabeledSet(list(D))
        if const not in D2:
            D2.add(const, BENCH(const))
        with caplog.at_level(logging.WARNING, logger="crlso.search"):
            out = infer_candidates(D2, models, SearchConfig(Q_start=60, Q_max=100, K=3, max_escalations=5), rng())
        assert out == []
        assert "falling back" in caplog.text
    finally:
        models.decoder.load_state_dict(saved)


def test_too_few_seeds(trained):
    _, models = trained
    with pytest.raises(ValueError):
        infer_candidates(labeled(3), models, SearchConfig(K=5), rng())


# -- full loop -------------------------------------------------------------------------

def _check_trace(res, cfg):
    assert res.oracle_calls == cfg.Q_max == len(res.trace) == len(res.labeled)
    hashes = [r.arch_hash for r in res.trace]
    assert len(set(hashes)) == len(hashes)
    best = np.maximum.accumulate([r.score for r in res.trace])
    assert np.all(np.diff(best) >= 0)
    assert best[-1] == res.best_score
    assert [r.query_index for r in res.trace] == list(range(1, cfg.Q_max + 1))


def test_random_mode_queries_exactly_q_max():
    cfg = SearchConfig(Q_start=10, Q_max=40, K=3, mode="random", seed=3)
    res = run_crlso(SMALL, BENCH, cfg)
    _check_trace(res, cfg)
    assert res.models is None
    assert all(r.eta is None for r in res.trace)


@pytest.mark.parametrize("mode", ["cr", "unconstrained"])
def test_search_budget_and_record(mode):
    cfg = SearchConfig(Q_start=40, Q_max=70, K=5, mode=mode, finetune_epochs=3, seed=1)
    res = run_crlso(SMALL, BENCH, cfg, TINY)
    _check_trace(res, cfg)
    assert all(r.eta is None for r in res.trace[:40])
    if mode == "cr":
        assert verify_convexity(res.models.head, 500, rng()).passed


def test_search_is_deterministic(tmp_path):
    cfg = SearchConfig(Q_start=40, Q_max=55, K=5, finetune_epochs=2, seed=2)
    a, b = run_crlso(SMALL, BENCH, cfg, TINY), run_crlso(SMALL, BENCH, cfg, TINY)
    write_trace(tmp_path / "a.csv", a.trace)
    write_trace(tmp_path / "b.csv", b.trace)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_checkpoint_callback_fires():
    seen = []
    cfg = SearchConfig(Q_start=40, Q_max=55, K=5, finetune_epochs=1, checkpoint_every=1)
    run_crlso(SMALL, BENCH, cfg, TINY, on_checkpoint=lambda m, n: seen.append(n))
    assert seen and seen[-1] == 55


def test_posterior_means_are_deterministic(trained):
    D, models = trained
    packed = PackedGraphs.from_graphs(D.graphs[:10], SMALL)
    np.testing.assert_array_equal(posterior_means(packed, models.encoder), posterior_means(packed, models.encoder))
