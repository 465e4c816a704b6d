"""Dense reverse-mode autodiff, optimizers and schedules."""
from .kernels import USE_NUMBA
from .nn import MLP, Embedding, Linear, Module, param
from .optim import Adam, NumericalError, cosine_lr
from .tensor import (
    ContractError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    build_tape,
    concat,
    exp,
    gather_rows,
    getitem,
    grad_enabled,
    leaky_relu,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    segment_sum,
    sigmoid,
    softmax,
    softplus,
    square,
    sub,
    sum_,
    tanh,
)
