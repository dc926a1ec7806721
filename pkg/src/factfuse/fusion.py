"""Evidence-set assembly, claim-query cross-attention and the verdict MLP."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from factfuse.errors import BudgetExceeded, ConfigError, NoEvidence, ShapeMismatch
from factfuse.nn import ParameterStore, RngState, Tape, cross_entropy
from factfuse.nn.kernels import check_heads
from factfuse.nn.params import add_attention_params
from factfuse.nn.tape import Node
from factfuse.records import LABELS, label_index

DROPOUT_PLACEMENTS = ("final", "every", "none")


@dataclass
class EvidenceEmbeddingSet:
    """``(M+N) x D`` evidence matrix: ``M`` text rows, then ``N`` table rows.

    ``mask`` is True for real evidence; padding rows are all zeros.
    """

    matrix: np.ndarray
    mask: np.ndarray
    M: int
    N: int

    @property
    def n_text(self) -> int:
        return int(self.mask[: self.M].sum())

    @property
    def n_table(self) -> int:
        return int(self.mask[self.M :].sum())


def assemble_evidence_set(
    text_vecs: Sequence[np.ndarray],
    table_vecs: Sequence[np.ndarray],
    budget_M: int = 5,
    budget_N: int = 2,
    dim: int | None = None,
) -> EvidenceEmbeddingSet:
    if len(text_vecs) > budget_M:
        raise BudgetExceeded(f"{len(text_vecs)} text vectors for a budget of {budget_M}")
    if len(table_vecs) > budget_N:
        raise BudgetExceeded(f"{len(table_vecs)} table vectors for a budget of {budget_N}")
    vecs = [np.asarray(v, dtype=np.float64) for v in (*text_vecs, *table_vecs)]
    if dim is None:
        if not vecs:
            raise ShapeMismatch("cannot infer the embedding width of an empty evidence set")
        dim = vecs[0].shape[-1]
    matrix = np.zeros((budget_M + budget_N, dim))
    mask = np.zeros(budget_M + budget_N, dtype=bool)
    rows = [*range(len(text_vecs)), *range(budget_M, budget_M + len(table_vecs))]
    for row, vec in zip(rows, vecs):
        if vec.shape != (dim,):
            raise ShapeMismatch(f"evidence vector of shape {vec.shape}, expected ({dim},)")
        matrix[row] = vec
        mask[row] = True
    return EvidenceEmbeddingSet(matrix, mask, budget_M, budget_N)


@dataclass
class FusionConfig:
    hidden: int = 64
    heads: int = 4
    mlp_widths: list[int] = field(default_factory=list)
    dropout: float = 0.2
    dropout_placement: str = "final"
    final_relu: bool = True
    zero_init_output: bool = False

    def __post_init__(self):
        check_heads(self.hidden, self.heads)
        if not self.mlp_widths:
            self.mlp_widths = [self.hidden, max(1, self.hidden // 2), len(LABELS)]
        if len(self.mlp_widths) != 3 or self.mlp_widths[-1] != len(LABELS):
            raise ConfigError(f"MLP needs three layers ending in {len(LABELS)} logits")
        if self.dropout_placement not in DROPOUT_PLACEMENTS:
            raise ConfigError(f"dropout_placement must be one of {DROPOUT_PLACEMENTS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


class FusionHead:
    """Single-query multi-head attention over the evidence set, then a
    three-layer ReLU MLP and softmax over [S, R, NEI].

    Learned input projections are created only for inputs whose width differs
    from ``cfg.hidden``.
    """

    def __init__(
        self,
        store: ParameterStore,
        cfg: FusionConfig,
        text_dim: int,
        table_dim: int,
        rng: RngState,
        prefix: str = "fusion",
    ):
        self.store = store
        self.cfg = cfg
        self.prefix = prefix
        g = rng.generator()
        H = cfg.hidden
        self.projected = {}
        for part, d in (("claim", text_dim), ("text", text_dim), ("table", table_dim)):
            self.projected[part] = d != H
            if d != H:
                store.add_weight(f"{prefix}.proj_{part}.w", (d, H), g)
                store.add_zeros(f"{prefix}.proj_{part}.b", (H,))
        add_attention_params(store, f"{prefix}.attn", H, H, g)
        widths = [H, *cfg.mlp_widths]
        for i in range(3):
            shape = (widths[i], widths[i + 1])
            if i == 2 and cfg.zero_init_output:
                store.add_zeros(f"{prefix}.mlp{i}.w", shape)
            else:
                store.add_weight(f"{prefix}.mlp{i}.w", shape, g)
            store.add_zeros(f"{prefix}.mlp{i}.b", (widths[i + 1],))

    # -- tape level ------------------------------------------------------------
    def project(self, t: Tape, part: str, x: Node) -> Node:
        if not self.projected[part]:
            return x
        pre = f"{self.prefix}.proj_{part}"
        return t.linear(x, t.param(f"{pre}.w"), t.param(f"{pre}.b"))

    def fuse_nodes(self, t: Tape, claims: Node, evidence: Node, mask: np.ndarray) -> Node:
        """claims ``(B, H)``, evidence ``(B, R, H)``, mask ``(B, R)`` -> z ``(B, H)``."""
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=-1).all():
            raise NoEvidence("claim with an all-masked evidence set")
        B, H = claims.value.shape
        query = t.reshape(claims, (B, 1, H))
        z = t.mha(f"{self.prefix}.attn", query, evidence, mask, self.cfg.heads)
        return t.reshape(z, (B, H))

    def classify_nodes(self, t: Tape, z: Node) -> Node:
        p, pre = t.param, self.prefix
        rate, where = self.cfg.dropout, self.cfg.dropout_placement
        h = z
        for i in range(3):
            if where == "every" or (where == "final" and i == 2):
                h = t.dropout(h, rate)
            h = t.linear(h, p(f"{pre}.mlp{i}.w"), p(f"{pre}.mlp{i}.b"))
            if i < 2 or self.cfg.final_relu:
                h = t.relu(h)
        return t.softmax(h)

    # -- single example --------------------------------------------------------
    def align(self, part: str, vecs) -> np.ndarray:
        """Map encoder outputs of ``part`` (claim/text/table) to the attention width."""
        t = Tape(self.store, grad=False)
        return self.project(t, part, t.const(np.atleast_2d(vecs))).value

    def fuse(self, c_vec, E: EvidenceEmbeddingSet, mode: str = "eval", rng: RngState | None = None):
        """Fused vector z for one claim.

        ``c_vec`` is a claim-encoder output; the rows of ``E`` must already have
        the attention width (see :meth:`align`).
        """
        t = Tape(self.store, train=mode == "train", rng=rng, grad=False)
        c = self.project(t, "claim", t.const(np.asarray(c_vec)[None, :]))
        ev = t.const(E.matrix[None, :, :])
        return self.fuse_nodes(t, c, ev, E.mask[None, :]).value[0]

    def classify(self, z, mode: str = "eval", rng: RngState | None = None) -> np.ndarray:
        t = Tape(self.store, train=mode == "train", rng=rng, grad=False)
        return self.classify_nodes(t, t.const(np.asarray(z)[None, :])).value[0]


def verdict_loss(P, gold: str) -> float:
    return cross_entropy(P, label_index(gold))


def predict_label(P) -> str:
    """Argmax over [S, R, NEI]; ties go to the earliest label."""
    return LABELS[int(np.argmax(np.asarray(P)))]
