import numpy as np
import pytest

from crlso import ndgrad as nd
from crlso.ndgrad import kernels
from gradcheck_cases import PRIMITIVES, fd_grad, primitive_error, rel_err


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_matches_finite_differences(name):
    assert primitive_error(name) < 1e-4


def test_forward_examples():
    assert np.array_equal(nd.relu(nd.Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    m = np.array([[3.0, 4.0], [5.0, 6.0]])
    assert np.array_equal((nd.Tensor(np.eye(2)) @ nd.Tensor(m)).data, m)
    assert np.allclose(nd.softmax(nd.Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_backward_square_sum():
    x = nd.Tensor([1.0, 2.0], requires_grad=True)
    grads = nd.backward(nd.sum_(nd.square(x)))
    assert np.array_equal(x.grad, [2.0, 4.0])
    assert np.array_equal(grads[x], [2.0, 4.0])


def test_matmul_chain_against_finite_differences():
    rng = np.random.default_rng(0)
    a, b, c = rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=(5, 2))
    ta = nd.Tensor(a, requires_grad=True)
    loss = nd.sum_(nd.tanh(ta @ nd.Tensor(b)) @ nd.Tensor(c))
    nd.backward(loss)
    num = fd_grad(lambda x: float((np.tanh(x @ b) @ c).sum()), a.copy())
    assert rel_err(ta.grad, num) < 1e-4


def test_detached_leaf_gets_no_gradient():
    x = nd.Tensor([1.0, 2.0], requires_grad=True)
    y = nd.Tensor([3.0, 4.0], requires_grad=True)
    grads = nd.backward(nd.sum_(nd.square(y)))
    assert x.grad is None
    assert x not in grads


def test_detach_cuts_the_tape():
    x = nd.Tensor([1.0, 2.0], requires_grad=True)
    nd.backward(nd.sum_(x.detach() * 3.0 + nd.square(x)))
    assert np.array_equal(x.grad, [2.0, 4.0])


def test_nonscalar_loss_is_rejected():
    x = nd.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(nd.ContractError):
        nd.backward(x * 2.0)


def test_shape_errors_name_the_primitive():
    with pytest.raises(nd.ShapeError, match="matmul"):
        nd.matmul(nd.Tensor(np.ones((2, 3))), nd.Tensor(np.ones((2, 3))))
    with pytest.raises(nd.ShapeError, match="add"):
        nd.add(nd.Tensor(np.ones((2, 3))), nd.Tensor(np.ones(4)))
    with pytest.raises(nd.ShapeError, match="concat"):
        nd.concat([nd.Tensor(np.ones((2, 3))), nd.Tensor(np.ones((3, 3)))], axis=1)


def test_tape_is_topologically_ordered():
    x = nd.Tensor(np.ones(3), requires_grad=True)
    y = nd.tanh(x) * x
    z = nd.sum_(y + nd.exp(y))
    tape = nd.build_tape(z)
    pos = {id(t): i for i, t in enumerate(tape)}
    for t in tape:
        for p in t._parents:
            assert pos[id(p)] < pos[id(t)]


def test_no_grad_records_nothing():
    x = nd.Tensor(np.ones(3), requires_grad=True)
    with nd.no_grad():
        y = nd.sum_(x * 2.0)
    assert not y.requires_grad
    assert nd.backward(y) == {}


def test_backward_is_deterministic():
    def run():
        rng = np.random.default_rng(7)
        w = nd.Tensor(rng.normal(size=(8, 16)), requires_grad=True)
        x = nd.Tensor(rng.normal(size=(32, 8)))
        idx = rng.integers(0, 10, size=32)
        h = nd.segment_sum(nd.leaky_relu(x @ w), idx, 10)
        nd.backward(nd.sum_(nd.square(h)))
        return w.grad

    assert np.array_equal(run(), run())


def test_adam_zero_gradient_is_fixed_point():
    p = nd.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    opt = nd.Adam([p], lr=1e-2)
    for _ in range(3):
        opt.step([np.zeros(3)])
    assert np.array_equal(p.data, [1.0, -2.0, 3.0])
    assert opt.step_count == 3


def test_adam_single_step_scalar():
    p = nd.Tensor(np.array(0.5), requires_grad=True)
    opt = nd.Adam([p], lr=1e-4, beta1=0.0, beta2=0.5)
    opt.step([np.array(1.0)])
    # m = 1, v = 0.5, bias corrected both to 1 -> step of lr / (1 + eps)
    assert p.data == pytest.approx(0.5 - 1e-4, abs=1e-12)


def test_adam_step_counter():
    p = nd.Tensor(np.zeros(2), requires_grad=True)
    opt = nd.Adam([p])
    opt.step([np.ones(2)])
    opt.step([np.ones(2)])
    assert opt.step_count == 2
    assert opt.m[0].shape == p.shape and opt.v[0].shape == p.shape


def test_adam_rejects_non_finite_gradient():
    p = nd.Tensor(np.zeros(2), requires_grad=True)
    opt = nd.Adam([p])
    with pytest.raises(nd.NumericalError, match="non-finite"):
        opt.step([np.array([1.0, np.nan])])


def test_cosine_lr():
    assert nd.cosine_lr(0, 100, 1e-3) == 1e-3
    assert nd.cosine_lr(100, 100, 1e-3) == pytest.approx(0.0, abs=1e-18)
    assert nd.cosine_lr(50, 100, 1e-3) == pytest.approx(5e-4)
    with pytest.raises(ValueError):
        nd.cosine_lr(101, 100, 1e-3)


def test_segment_sum_paths_agree():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(500, 7))
    idx = rng.integers(0, 40, size=500)
    fast = kernels.segment_sum(v, idx, 40)
    slow = kernels._segment_sum_numpy(v, idx, 40)
    assert np.allclose(fast, slow, atol=1e-12)


def test_concordance_paths_agree():
    rng = np.random.default_rng(4)
    x = rng.integers(0, 20, size=300).astype(float)
    y = x + rng.integers(0, 5, size=300)
    assert kernels.concordance_counts(x, y) == kernels._concordance_numpy(x, y, block=64)
