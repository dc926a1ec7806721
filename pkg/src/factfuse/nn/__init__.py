"""Numerical kernels, reverse-mode tape, Adam and gradient checking."""
from .gradcheck import compare_gradients, finite_diff_grad, relative_error
from .kernels import (
    AttentionParams,
    cross_entropy,
    layer_norm,
    linear,
    masked_softmax,
    multi_head_attention,
    relu,
    scaled_dot_attention,
    softmax,
)
from .optim import adam_step
from .params import ParameterStore, RngState
from .tape import Node, Tape


def backward(tape: Tape, loss: Node) -> None:
    """Write d(loss)/d(param) for every parameter of ``tape.store``."""
    tape.backward(loss)


__all__ = [
    "AttentionParams",
    "Node",
    "ParameterStore",
    "RngState",
    "Tape",
    "adam_step",
    "backward",
    "compare_gradients",
    "cross_entropy",
    "finite_diff_grad",
    "layer_norm",
    "linear",
    "masked_softmax",
    "multi_head_attention",
    "relative_error",
    "relu",
    "scaled_dot_attention",
    "softmax",
]
