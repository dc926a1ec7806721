"""Recorded-operation tape for reverse-mode differentiation.

The tape knows a small, fixed set of kernels (the ones the model needs).  Each
kernel computes its forward value with :mod:`factfuse.nn.kernels` and, when
gradients are enabled, records a closure mapping the output gradient to the
gradients of its inputs.  :meth:`Tape.backward` replays the closures in reverse
order and writes parameter gradients into the :class:`ParameterStore`.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from factfuse.errors import NoRecordedForward, ShapeMismatch

from . import kernels as K
from .params import ParameterStore, RngState

Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "param_name", "index")

    def __init__(self, value, parents=(), backward_fn=None, param_name=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.param_name = param_name
        self.index = -1

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" param={self.param_name}" if self.param_name else ""
        return f"Node(shape={self.value.shape}{tag})"


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tape:
    """One forward pass worth of recorded operations.

    ``train`` switches dropout on; ``grad`` controls whether backward closures
    are recorded at all (evaluation runs with ``grad=False``).
    """

    def __init__(
        self,
        store: ParameterStore,
        train: bool = False,
        rng: RngState | None = None,
        grad: bool = True,
    ):
        self.store = store
        self.train = train
        self.rng = rng
        self.grad_enabled = grad
        self.nodes: list[Node] = []
        self._params: dict[str, Node] = {}
        self._consumed = False

    # -- leaves ---------------------------------------------------------
    def param(self, name: str) -> Node:
        node = self._params.get(name)
        if node is None:
            node = Node(self.store[name], param_name=name)
            self._params[name] = node
        return node

    def const(self, value) -> Node:
        return Node(np.asarray(value, dtype=K.DTYPE))

    def _record(self, value, parents, backward_fn) -> Node:
        if not self.grad_enabled:
            return Node(value)
        node = Node(value, tuple(parents), backward_fn)
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node

    # -- kernels ---------------------------------------------------------
    def linear(self, x: Node, w: Node, b: Node) -> Node:
        out = K.linear(x.value, w.value, b.value)

        def back(g):
            gx = g @ w.value.T
            x2 = x.value.reshape(-1, x.value.shape[-1])
            g2 = g.reshape(-1, g.shape[-1])
            return gx, x2.T @ g2, g2.sum(axis=0).reshape(b.value.shape)

        return self._record(out, (x, w, b), back)

    def add(self, a: Node, b: Node) -> Node:
        out = a.value + b.value

        def back(g):
            return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

        return self._record(out, (a, b), back)

    def relu(self, x: Node) -> Node:
        active = x.value > 0
        out = np.where(active, x.value, 0.0)
        return self._record(out, (x,), lambda g: (g * active,))

    def layer_norm(self, x: Node, gain: Node, bias: Node) -> Node:
        mu = x.value.mean(axis=-1, keepdims=True)
        centred = x.value - mu
        inv = 1.0 / np.sqrt((centred**2).mean(axis=-1, keepdims=True) + K.LN_EPS)
        xhat = centred * inv
        out = xhat * gain.value + bias.value

        def back(g):
            n = x.value.shape[-1]
            gx_hat = g * gain.value
            gx = inv / n * (
                n * gx_hat
                - gx_hat.sum(axis=-1, keepdims=True)
                - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True)
            )
            flat = (-1, n)
            ggain = (g * xhat).reshape(flat).sum(axis=0)
            gbias = g.reshape(flat).sum(axis=0)
            return gx, ggain.reshape(gain.value.shape), gbias.reshape(bias.value.shape)

        return self._record(out, (x, gain, bias), back)

    def dropout(self, x: Node, rate: float) -> Node:
        if not self.train or rate <= 0.0:
            return x
        if self.rng is None:
            raise RuntimeError("dropout in training mode needs an RngState")
        keep = self.rng.generator().random(x.value.shape) >= rate
        scale = keep / (1.0 - rate)
        return self._record(x.value * scale, (x,), lambda g: (g * scale,))

    def embedding(self, table: Node, ids: np.ndarray) -> Node:
        ids = np.asarray(ids, dtype=np.int64)
        out = table.value[ids]

        def back(g):
            gt = np.zeros_like(table.value)
            np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.value.shape[1]))
            return (gt,)

        return self._record(out, (table,), back)

    def attention(self, q: Node, k: Node, v: Node, mask: np.ndarray | None, heads: int) -> Node:
        """Multi-head scaled dot-product attention on already projected inputs.

        q ``(..., Lq, H)``, k and v ``(..., Lk, H)``, mask ``(..., Lk)``.
        """
        hidden = q.value.shape[-1]
        K.check_heads(hidden, heads)
        if k.value.shape[-1] != hidden or v.value.shape[-1] != hidden:
            raise ShapeMismatch("query, key and value widths differ")
        qh = K.split_heads(q.value, heads)
        kh = K.split_heads(k.value, heads)
        vh = K.split_heads(v.value, heads)
        head_mask = None if mask is None else np.asarray(mask, dtype=bool)[..., None, :]
        oh, weights = K.scaled_dot_attention(qh, kh, vh, head_mask, return_weights=True)
        out = K.merge_heads(oh)
        scale = 1.0 / np.sqrt(qh.shape[-1])

        def back(g):
            gh = K.split_heads(g, heads)
            gv = np.swapaxes(weights, -1, -2) @ gh
            gw = gh @ np.swapaxes(vh, -1, -2)
            gs = weights * (gw - (gw * weights).sum(axis=-1, keepdims=True))
            gq = (gs @ kh) * scale
            gk = (np.swapaxes(gs, -1, -2) @ qh) * scale
            return K.merge_heads(gq), K.merge_heads(gk), K.merge_heads(gv)

        return self._record(out, (q, k, v), back)

    def softmax(self, x: Node) -> Node:
        p = K.softmax(x.value)

        def back(g):
            return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

        return self._record(p, (x,), back)

    def cross_entropy(self, P: Node, labels) -> Node:
        """Mean of ``-log max(P[i, y_i], eps)`` over the rows of ``P``."""
        probs = P.value.reshape(-1, P.value.shape[-1])
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != probs.shape[0]:
            raise ShapeMismatch(f"{probs.shape[0]} distributions but {labels.shape[0]} labels")
        for row, y in zip(probs, labels):
            K.cross_entropy(row, int(y))  # validates
        rows = np.arange(len(labels))
        picked = probs[rows, labels]
        clamped = np.maximum(picked, K.LOG_EPS)
        out = np.asarray(-np.log(clamped).mean())

        def back(g):
            gp = np.zeros_like(probs)
            live = picked > K.LOG_EPS
            gp[rows[live], labels[live]] = -g / (len(labels) * picked[live])
            return (gp.reshape(P.value.shape),)

        return self._record(out, (P,), back)

    def getitem(self, x: Node, key) -> Node:
        out = x.value[key]

        def back(g):
            gx = np.zeros_like(x.value)
            np.add.at(gx, key, g)
            return (gx,)

        return self._record(np.array(out), (x,), back)

    def scatter_rows(self, x: Node, index: np.ndarray, n_rows: int) -> Node:
        """Place row ``i`` of ``x`` at row ``index[i]`` of a zero ``(n_rows, D)`` array."""
        index = np.asarray(index, dtype=np.int64)
        out = np.zeros((n_rows, x.value.shape[-1]), dtype=K.DTYPE)
        out[index] = x.value
        return self._record(out, (x,), lambda g: (g[index],))

    def reshape(self, x: Node, shape) -> Node:
        orig = x.value.shape
        return self._record(x.value.reshape(shape), (x,), lambda g: (g.reshape(orig),))

    def sum(self, x: Node) -> Node:
        return self._record(np.asarray(x.value.sum()), (x,), lambda g: (np.full(x.value.shape, g),))

    # -- composites --------------------------------------------------------
    def mha(self, prefix: str, query: Node, keys: Node, mask, heads: int) -> Node:
        """Multi-head attention whose projections live under ``prefix``."""
        p = self.param
        q = self.linear(query, p(f"{prefix}.wq"), p(f"{prefix}.bq"))
        k = self.linear(keys, p(f"{prefix}.wk"), p(f"{prefix}.bk"))
        v = self.linear(keys, p(f"{prefix}.wv"), p(f"{prefix}.bv"))
        return self.linear(self.attention(q, k, v, mask, heads), p(f"{prefix}.wo"), p(f"{prefix}.bo"))

    # -- reverse pass ------------------------------------------------------
    def backward(self, loss: Node) -> None:
        """Populate every store gradient with d(loss)/d(param).

        Gradients of parameters that did not take part in the forward pass are
        left at zero.  A tape can be replayed only once.
        """
        if not self.grad_enabled or not self.nodes or loss.index < 0 or self._consumed:
            raise NoRecordedForward("no recorded forward pass for this loss")
        if loss.value.size != 1:
            raise ShapeMismatch("backward needs a scalar loss")
        self._consumed = True
        self.store.zero_grad()
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.index + 1]):
            if node.grad is None:
                continue
            grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None:
                    continue
                if parent.index < 0 and parent.param_name is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
        for name, node in self._params.items():
            if node.grad is not None:
                self.store.grad(name)[...] = node.grad

