import numpy as np
import pytest
from scipy import stats

from crlso import ndgrad as nd
from crlso.graphspace import SearchSpace
from crlso.oracle import SyntheticBench
from crlso.predictor import (
    GnnPredictor,
    PredictorConfig,
    UndefinedCorrelationError,
    correlation_metrics,
    kendall_tau,
    pseudo_label,
    train_predictor,
    unlabeled_pool,
)

SMALL = SearchSpace(kind="edge", num_nodes=3, node_vocab_size=3, edge_vocab_size=5)
FAST = PredictorConfig(channels=16, layers=2, epochs=40, batch_size=16, lr=3e-3)


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


def test_identical_lists_are_perfectly_correlated():
    assert correlation_metrics([1, 2, 3, 4], [1, 2, 3, 4]) == pytest.approx((1.0, 1.0))


def test_reversed_list():
    assert correlation_metrics([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx((-1.0, -1.0))


def test_three_element_kendall():
    assert kendall_tau([1, 2, 3], [1, 3, 2]) == pytest.approx(1 / 3, abs=1e-15)


def test_kendall_returns_python_float():
    assert type(kendall_tau([1, 2, 3], [1, 3, 2])) is float


@pytest.mark.parametrize("ties", [False, True])
def test_against_scipy(ties):
    r = rng(3)
    x = r.standard_normal(400)
    y = x + r.standard_normal(400)
    if ties:
        x, y = np.round(x), np.round(y * 2)
    p, t = correlation_metrics(x, y)
    assert p == pytest.approx(stats.pearsonr(x, y)[0], abs=1e-12)
    assert t == pytest.approx(stats.kendalltau(x, y, variant="b")[0], abs=1e-12)


def test_kendall_invariant_under_monotone_transform():
    r = rng(4)
    x, y = r.standard_normal(200), r.standard_normal(200)
    assert kendall_tau(np.exp(x), y ** 3) == pytest.approx(kendall_tau(x, y), abs=1e-15)


def test_constant_input_is_undefined():
    with pytest.raises(UndefinedCorrelationError):
        correlation_metrics([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(UndefinedCorrelationError):
        kendall_tau([1, 2, 3], [5, 5, 5])


def test_length_checks():
    with pytest.raises(ValueError):
        correlation_metrics([1.0], [1.0])
    with pytest.raises(ValueError):
        correlation_metrics([1.0, 2.0], [1.0, 2.0, 3.0])


def test_numba_and_numpy_paths_agree(monkeypatch):
    from crlso.ndgrad import kernels

    r = rng(5)
    x, y = np.round(r.standard_normal(300), 1), np.round(r.standard_normal(300), 1)
    a = kendall_tau(x, y)
    monkeypatch.setattr(kernels, "USE_NUMBA", False)
    assert kendall_tau(x, y) == pytest.approx(a, abs=1e-15)


def test_empty_training_set_is_a_contract_error():
    with pytest.raises(nd.ContractError):
        train_predictor([], SMALL, FAST, rng())


def test_head_emits_one_scalar_per_graph():
    model = GnnPredictor(SMALL, 8, 2, rng())
    graphs = list(SMALL.enumerate())[:7]
    assert model.predict(graphs).shape == (7,)
    assert model.head.layers[-1].weight.data.shape[-1] == 1


def test_learns_the_small_space():
    bench = SyntheticBench.for_space(SMALL, 0)
    graphs = list(SMALL.enumerate())
    order = rng(1).permutation(len(graphs))
    train = [(graphs[i], bench(graphs[i])) for i in order[:60]]
    held = [graphs[i] for i in order[60:]]
    model = train_predictor(train, SMALL, FAST, rng(2))
    _, tau = correlation_metrics(model.predict(held), [bench(g) for g in held])
    assert tau > 0.5
    assert len(model.curve) <= FAST.epochs


def test_duplicates_with_equal_labels_train():
    g = list(SMALL.enumerate())[:5]
    data = [(x, float(i)) for i, x in enumerate(g)] * 2
    model = train_predictor(data, SMALL, PredictorConfig(channels=8, layers=1, epochs=5, batch_size=4), rng())
    assert np.all(np.isfinite(model.predict(g)))


def test_constant_labels_give_constant_predictor():
    g = list(SMALL.enumerate())[:20]
    cfg = PredictorConfig(channels=8, layers=1, epochs=150, batch_size=20, lr=3e-3)
    model = train_predictor([(x, 7.5) for x in g], SMALL, cfg, rng())
    assert model.curve[-1] < 1e-2
    np.testing.assert_allclose(model.predict(g), 7.5, atol=0.15)


def test_pseudo_label_is_pure_and_size_preserving():
    model = GnnPredictor(SMALL, 8, 2, rng())
    pool = list(SMALL.enumerate())[10:40]
    a, b = pseudo_label(model, pool), pseudo_label(model, pool)
    assert a == b
    assert [g for g, _ in a] == pool
    assert pseudo_label(model, []) == []


def test_unlabeled_pool_enumerates_small_spaces():
    graphs = list(SMALL.enumerate())
    pool = unlabeled_pool(SMALL, set(graphs[:10]), rng())
    assert pool == graphs[10:]


def test_unlabeled_pool_samples_large_spaces():
    pool = unlabeled_pool(SearchSpace.nb101(), set(), rng(), samples=200)
    assert len(pool) == len(set(pool)) == 200
