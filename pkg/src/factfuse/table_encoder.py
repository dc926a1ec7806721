"""Table linearisation with row/column ids and the table encoder."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from factfuse.errors import ConfigError
from factfuse.nn import ParameterStore, RngState, Tape
from factfuse.nn.tape import Node
from factfuse.records import Claim, TableEvidence
from factfuse.text_encoder import pad_batch
from factfuse.vocab import CLS, PAD, SEP, Vocabulary
from factfuse.transformer import EncoderConfig, TransformerStack, cls_state


@dataclass(frozen=True)
class StructuredTokenSequence:
    ids: tuple[int, ...]
    row_ids: tuple[int, ...]
    col_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)


def linearize_table(
    table: TableEvidence,
    claim: Claim,
    vocab: Vocabulary,
    max_len: int = 128,
    max_rows: int = 64,
    max_cols: int = 64,
) -> StructuredTokenSequence:
    """``[CLS] claim [SEP] caption cells...`` with 1-based grid coordinates.

    Cells go in row-major order; rows/columns past ``max_rows``/``max_cols``
    are dropped.  When the length budget runs out, trailing cells are dropped
    whole; a cell is cut only if it alone is longer than the table budget.
    """
    budget = max_len - 2
    claim_ids = vocab.tokenize(claim.text)[:budget]
    units: list[list[tuple[int, int, int]]] = []
    if table.caption:
        units.append([(tok, 0, 0) for tok in vocab.tokenize(table.caption)])
    for r, row in enumerate(table.cells[:max_rows], start=1):
        for c, cell in enumerate(row[:max_cols], start=1):
            units.append([(tok, r, c) for tok in vocab.tokenize(cell)])

    table_budget = budget - len(claim_ids)
    room = table_budget
    body: list[tuple[int, int, int]] = []
    for unit in units:
        if len(unit) <= room:
            body.extend(unit)
            room -= len(unit)
            continue
        if len(unit) > table_budget:
            body.extend(unit[:room])
        break

    head = [CLS, *claim_ids, SEP]
    n_head = len(head)
    return StructuredTokenSequence(
        ids=tuple(head + [tok for tok, _, _ in body]),
        row_ids=tuple([0] * n_head + [r for _, r, _ in body]),
        col_ids=tuple([0] * n_head + [c for _, _, c in body]),
        segment_ids=tuple([0] * n_head + [1] * len(body)),
    )


class TableEncoder:
    """Transformer over linearised tables.

    Input embedding per token = token + row + column + segment embeddings.
    ``cfg.kind == "structural_abs"`` also adds a learned absolute position
    embedding; ``"structural"`` uses grid coordinates only.
    """

    KINDS = ("structural", "structural_abs")

    def __init__(
        self,
        vocab: Vocabulary,
        store: ParameterStore,
        cfg: EncoderConfig,
        rng: RngState,
        prefix: str = "table",
    ):
        if cfg.kind not in self.KINDS:
            raise ConfigError(f"unknown table encoder kind {cfg.kind!r}")
        self.vocab = vocab
        self.store = store
        self.cfg = cfg
        self.prefix = prefix
        g = rng.generator()
        store.add_weight(f"{prefix}.tok_emb", (len(vocab), cfg.dim), g)
        store.add_weight(f"{prefix}.row_emb", (cfg.max_rows + 1, cfg.dim), g)
        store.add_weight(f"{prefix}.col_emb", (cfg.max_cols + 1, cfg.dim), g)
        store.add_weight(f"{prefix}.seg_emb", (2, cfg.dim), g)
        if cfg.kind == "structural_abs":
            store.add_weight(f"{prefix}.pos_emb", (cfg.max_seq_len, cfg.dim), g)
        self.stack = TransformerStack(store, f"{prefix}.enc", cfg, rng)

    @property
    def dim(self) -> int:
        return self.cfg.dim

    def table_sequence(self, claim: Claim, table: TableEvidence) -> StructuredTokenSequence:
        c = self.cfg
        return linearize_table(table, claim, self.vocab, c.max_seq_len, c.max_rows, c.max_cols)

    def forward(self, t: Tape, seqs: Sequence[StructuredTokenSequence]) -> Node:
        p, pre = t.param, self.prefix
        ids = pad_batch([s.ids for s in seqs], PAD)
        mask = pad_batch([[1] * len(s) for s in seqs], 0).astype(bool)
        x = t.embedding(p(f"{pre}.tok_emb"), ids)
        x = t.add(x, t.embedding(p(f"{pre}.row_emb"), pad_batch([s.row_ids for s in seqs])))
        x = t.add(x, t.embedding(p(f"{pre}.col_emb"), pad_batch([s.col_ids for s in seqs])))
        x = t.add(x, t.embedding(p(f"{pre}.seg_emb"), pad_batch([s.segment_ids for s in seqs])))
        if self.cfg.kind == "structural_abs":
            x = t.add(x, t.embedding(p(f"{pre}.pos_emb"), np.arange(ids.shape[1])))
        x = t.dropout(x, self.cfg.dropout)
        return cls_state(t, self.stack(t, x, mask))

    def encode_table_pair(self, claim: Claim, table: TableEvidence) -> np.ndarray:
        t = Tape(self.store, grad=False)
        return self.forward(t, [self.table_sequence(claim, table)]).value[0]
