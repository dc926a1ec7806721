"""End-to-end verifier: two encoders feeding the fusion head.

The fusion and training code only talk to encoders through four members:
``dim``, ``pair_sequence``/``table_sequence`` (featurisation),
``claim_sequence`` (text encoder only) and ``forward(tape, seqs)`` returning
CLS states.  Any object providing them can be plugged in via
:data:`TEXT_ENCODERS` / :data:`TABLE_ENCODERS`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from factfuse.data import ClaimRecord, select_evidence
from factfuse.errors import ConfigError
from factfuse.fusion import FusionConfig, FusionHead
from factfuse.nn import ParameterStore, RngState, Tape
from factfuse.nn.tape import Node
from factfuse.records import LABELS, label_index
from factfuse.table_encoder import TableEncoder
from factfuse.text_encoder import TextEncoder
from factfuse.vocab import Vocabulary
from factfuse.transformer import EncoderConfig

MODALITIES = ("both", "text", "table")

TEXT_ENCODERS: dict[str, Callable] = {kind: TextEncoder for kind in TextEncoder.KINDS}
TABLE_ENCODERS: dict[str, Callable] = {kind: TableEncoder for kind in TableEncoder.KINDS}


@dataclass
class ModelConfig:
    text: EncoderConfig = field(default_factory=lambda: EncoderConfig(kind="learned"))
    table: EncoderConfig = field(default_factory=lambda: EncoderConfig(kind="structural"))
    fusion: FusionConfig = field(default_factory=FusionConfig)
    budget_M: int = 5
    budget_N: int = 2
    vocab_size: int = 8192

    def __post_init__(self):
        if isinstance(self.text, dict):
            self.text = EncoderConfig(**{"kind": "learned", **self.text})
        if isinstance(self.table, dict):
            self.table = EncoderConfig(**{"kind": "structural", **self.table})
        if isinstance(self.fusion, dict):
            self.fusion = FusionConfig(**self.fusion)
        if self.budget_M < 0 or self.budget_N < 0 or self.budget_M + self.budget_N == 0:
            raise ConfigError("evidence budgets must be non-negative and not both zero")

    def to_dict(self) -> dict:
        return {
            "text": self.text.to_dict(),
            "table": self.table.to_dict(),
            "fusion": self.fusion.to_dict(),
            "budget_M": self.budget_M,
            "budget_N": self.budget_N,
            "vocab_size": self.vocab_size,
        }


@dataclass
class Example:
    """A claim with its evidence already tokenised for the encoders."""

    claim_id: int
    claim_seq: object
    text_seqs: list
    table_seqs: list
    label: int | None
    gold_complete: bool

    @property
    def has_evidence(self) -> bool:
        return bool(self.text_seqs or self.table_seqs)


class VerifierModel:
    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, seed: int = 0):
        self.cfg = cfg
        self.vocab = vocab
        self.store = ParameterStore()
        rng = RngState(seed)
        if cfg.text.kind not in TEXT_ENCODERS:
            raise ConfigError(f"unknown text encoder {cfg.text.kind!r}")
        if cfg.table.kind not in TABLE_ENCODERS:
            raise ConfigError(f"unknown table encoder {cfg.table.kind!r}")
        self.text_encoder = TEXT_ENCODERS[cfg.text.kind](vocab, self.store, cfg.text, rng.child())
        self.table_encoder = TABLE_ENCODERS[cfg.table.kind](vocab, self.store, cfg.table, rng.child())
        self.fusion = FusionHead(
            self.store, cfg.fusion, self.text_encoder.dim, self.table_encoder.dim, rng.child()
        )

    @property
    def n_rows(self) -> int:
        return self.cfg.budget_M + self.cfg.budget_N

    def featurize(self, record: ClaimRecord, modality: str = "both") -> Example:
        if modality not in MODALITIES:
            raise ConfigError(f"unknown modality {modality!r}; expected one of {MODALITIES}")
        claim = record.as_claim()
        texts, tables = select_evidence(record, self.cfg.budget_M, self.cfg.budget_N)
        if modality == "table":
            texts = []
        if modality == "text":
            tables = []
        return Example(
            claim_id=record.claim_id,
            claim_seq=self.text_encoder.claim_sequence(claim),
            text_seqs=[self.text_encoder.pair_sequence(claim, t) for t in texts],
            table_seqs=[self.table_encoder.table_sequence(claim, t) for t in tables],
            label=None if record.gold_label is None else label_index(record.gold_label),
            gold_complete=record.evidence_is_gold_complete,
        )

    def evidence_nodes(self, t: Tape, batch: Sequence[Example]) -> tuple[Node, np.ndarray]:
        """Assembled ``(B, M+N, H)`` evidence tensor and its ``(B, M+N)`` mask."""
        M, R, H = self.cfg.budget_M, self.n_rows, self.cfg.fusion.hidden
        mask = np.zeros((len(batch), R), dtype=bool)
        text_seqs, text_rows, table_seqs, table_rows = [], [], [], []
        for b, ex in enumerate(batch):
            for i, seq in enumerate(ex.text_seqs):
                text_seqs.append(seq)
                text_rows.append(b * R + i)
            for j, seq in enumerate(ex.table_seqs):
                table_seqs.append(seq)
                table_rows.append(b * R + M + j)
        parts = []
        if text_seqs:
            rows = self.fusion.project(t, "text", self.text_encoder.forward(t, text_seqs))
            parts.append(t.scatter_rows(rows, np.array(text_rows), len(batch) * R))
        if table_seqs:
            rows = self.fusion.project(t, "table", self.table_encoder.forward(t, table_seqs))
            parts.append(t.scatter_rows(rows, np.array(table_rows), len(batch) * R))
        if not parts:
            flat = t.const(np.zeros((len(batch) * R, H)))
        else:
            flat = parts[0] if len(parts) == 1 else t.add(parts[0], parts[1])
        mask.reshape(-1)[text_rows + table_rows] = True
        return t.reshape(flat, (len(batch), R, H)), mask

    def forward(self, t: Tape, batch: Sequence[Example]) -> Node:
        """Verdict distributions ``(B, 3)``; every example needs evidence."""
        claims = self.text_encoder.forward(t, [ex.claim_seq for ex in batch])
        claims = self.fusion.project(t, "claim", claims)
        evidence, mask = self.evidence_nodes(t, batch)
        z = self.fusion.fuse_nodes(t, claims, evidence, mask)
        return self.fusion.classify_nodes(t, z)

    def loss(self, t: Tape, batch: Sequence[Example]) -> Node:
        return t.cross_entropy(self.forward(t, batch), [ex.label for ex in batch])

    def predict_proba(self, batch: Sequence[Example], batch_size: int = 64) -> np.ndarray:
        """Eval-mode distributions; claims without evidence get ``[0, 0, 1]`` (NEI)."""
        out = np.zeros((len(batch), len(LABELS)))
        out[:, LABELS.index("NEI")] = 1.0
        live = [i for i, ex in enumerate(batch) if ex.has_evidence]
        for start in range(0, len(live), batch_size):
            idx = live[start : start + batch_size]
            t = Tape(self.store, grad=False)
            out[idx] = self.forward(t, [batch[i] for i in idx]).value
        return out
