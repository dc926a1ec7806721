"""The claim-conditioned text encoder."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from factfuse.errors import ConfigError
from factfuse.nn import ParameterStore, RngState, Tape
from factfuse.nn.tape import Node
from factfuse.records import Claim, TextEvidence
from factfuse.transformer import EncoderConfig, TransformerStack, cls_state, sinusoidal_positions
from factfuse.vocab import CLS, PAD, SEP, Vocabulary


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    segment_ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)


def pack_pair(claim_ids: Sequence[int], evidence_ids: Sequence[int], max_len: int) -> TokenSequence:
    """``[CLS] claim [SEP] evidence``, trimming the evidence tail, then the claim tail."""
    budget = max_len - 2
    claim_ids = list(claim_ids)
    evidence_ids = list(evidence_ids)[: max(0, budget - len(claim_ids))]
    claim_ids = claim_ids[:budget]
    ids = [CLS, *claim_ids, SEP, *evidence_ids]
    segments = [0] * (len(claim_ids) + 2) + [1] * len(evidence_ids)
    return TokenSequence(tuple(ids), tuple(segments))


def pad_batch(rows: Sequence[Sequence[int]], fill: int = 0) -> np.ndarray:
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), fill, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


class TextEncoder:
    """Small transformer that returns the final CLS state of
    ``[CLS] claim [SEP] evidence``.

    ``cfg.kind`` selects the position scheme: ``"learned"`` adds a trained
    position table, ``"sinusoidal"`` adds fixed sinusoids.
    """

    KINDS = ("learned", "sinusoidal")

    def __init__(
        self,
        vocab: Vocabulary,
        store: ParameterStore,
        cfg: EncoderConfig,
        rng: RngState,
        prefix: str = "text",
    ):
        if cfg.kind not in self.KINDS:
            raise ConfigError(f"unknown text encoder kind {cfg.kind!r}")
        self.vocab = vocab
        self.store = store
        self.cfg = cfg
        self.prefix = prefix
        g = rng.generator()
        store.add_weight(f"{prefix}.tok_emb", (len(vocab), cfg.dim), g)
        store.add_weight(f"{prefix}.seg_emb", (2, cfg.dim), g)
        if cfg.kind == "learned":
            store.add_weight(f"{prefix}.pos_emb", (cfg.max_seq_len, cfg.dim), g)
        else:
            self._sinusoids = sinusoidal_positions(cfg.max_seq_len, cfg.dim)
        self.stack = TransformerStack(store, f"{prefix}.enc", cfg, rng)

    @property
    def dim(self) -> int:
        return self.cfg.dim

    def pair_sequence(self, claim: Claim, evidence: TextEvidence | None) -> TokenSequence:
        ev_ids = self.vocab.tokenize(evidence.sentence) if evidence is not None else []
        return pack_pair(self.vocab.tokenize(claim.text), ev_ids, self.cfg.max_seq_len)

    def claim_sequence(self, claim: Claim) -> TokenSequence:
        return self.pair_sequence(claim, None)

    def forward(self, t: Tape, seqs: Sequence[TokenSequence]) -> Node:
        """CLS states ``(len(seqs), dim)`` for a batch of packed sequences."""
        ids = pad_batch([s.ids for s in seqs], PAD)
        segs = pad_batch([s.segment_ids for s in seqs], 0)
        mask = pad_batch([[1] * len(s) for s in seqs], 0).astype(bool)
        length = ids.shape[1]
        x = t.embedding(t.param(f"{self.prefix}.tok_emb"), ids)
        x = t.add(x, t.embedding(t.param(f"{self.prefix}.seg_emb"), segs))
        if self.cfg.kind == "learned":
            pos = t.embedding(t.param(f"{self.prefix}.pos_emb"), np.arange(length))
        else:
            pos = t.const(self._sinusoids[:length])
        x = t.add(x, pos)
        x = t.dropout(x, self.cfg.dropout)
        return cls_state(t, self.stack(t, x, mask))

    def encode_pair(self, claim: Claim, evidence: TextEvidence) -> np.ndarray:
        t = Tape(self.store, grad=False)
        return self.forward(t, [self.pair_sequence(claim, evidence)]).value[0]

    def encode_claim(self, claim: Claim) -> np.ndarray:
        t = Tape(self.store, grad=False)
        return self.forward(t, [self.claim_sequence(claim)]).value[0]
