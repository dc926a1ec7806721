"""Pre-norm transformer encoder stack shared by the text and table encoders."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from factfuse.errors import ConfigError
from factfuse.nn import ParameterStore, RngState, Tape
from factfuse.nn.params import add_attention_params
from factfuse.nn.kernels import check_heads
from factfuse.nn.tape import Node


@dataclass
class EncoderConfig:
    kind: str = "learned"
    dim: int = 64
    heads: int = 4
    layers: int = 2
    ff_dim: int | None = None
    max_seq_len: int = 128
    dropout: float = 0.0
    max_rows: int = 64
    max_cols: int = 64

    def __post_init__(self):
        if self.dim < 1 or self.layers < 1 or self.max_seq_len < 3:
            raise ConfigError(f"invalid encoder config {self}")
        check_heads(self.dim, self.heads)
        if self.ff_dim is None:
            self.ff_dim = 4 * self.dim

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class TransformerStack:
    """``layers`` pre-norm blocks followed by a final layer norm."""

    def __init__(self, store: ParameterStore, prefix: str, cfg: EncoderConfig, rng: RngState):
        self.prefix = prefix
        self.cfg = cfg
        g = rng.generator()
        d = cfg.dim
        for i in range(cfg.layers):
            p = f"{prefix}.layer{i}"
            store.add_ones(f"{p}.ln1.g", (d,))
            store.add_zeros(f"{p}.ln1.b", (d,))
            add_attention_params(store, f"{p}.attn", d, d, g)
            store.add_ones(f"{p}.ln2.g", (d,))
            store.add_zeros(f"{p}.ln2.b", (d,))
            store.add_weight(f"{p}.ff1.w", (d, cfg.ff_dim), g)
            store.add_zeros(f"{p}.ff1.b", (cfg.ff_dim,))
            store.add_weight(f"{p}.ff2.w", (cfg.ff_dim, d), g)
            store.add_zeros(f"{p}.ff2.b", (d,))
        store.add_ones(f"{prefix}.ln_f.g", (d,))
        store.add_zeros(f"{prefix}.ln_f.b", (d,))

    def __call__(self, t: Tape, x: Node, mask: np.ndarray) -> Node:
        p = t.param
        rate = self.cfg.dropout
        for i in range(self.cfg.layers):
            pre = f"{self.prefix}.layer{i}"
            h = t.layer_norm(x, p(f"{pre}.ln1.g"), p(f"{pre}.ln1.b"))
            x = t.add(x, t.dropout(t.mha(f"{pre}.attn", h, h, mask, self.cfg.heads), rate))
            h = t.layer_norm(x, p(f"{pre}.ln2.g"), p(f"{pre}.ln2.b"))
            h = t.relu(t.linear(h, p(f"{pre}.ff1.w"), p(f"{pre}.ff1.b")))
            x = t.add(x, t.dropout(t.linear(h, p(f"{pre}.ff2.w"), p(f"{pre}.ff2.b")), rate))
        return t.layer_norm(x, p(f"{self.prefix}.ln_f.g"), p(f"{self.prefix}.ln_f.b"))


def cls_state(t: Tape, hidden: Node) -> Node:
    """Hidden state at position 0 of every sequence: ``(n, L, D) -> (n, D)``."""
    return t.getitem(hidden, (slice(None), 0))
