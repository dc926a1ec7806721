"""Training loop with early stopping, checkpoints and evaluation metrics."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from factfuse.data import ClaimRecord, Dataset
from factfuse.errors import ConfigError, EmptyDataset, EmptyInput, NonFiniteGradient, ShapeMismatch
from factfuse.fusion import predict_label
from factfuse.model import MODALITIES, Example, ModelConfig, VerifierModel
from factfuse.nn import RngState, Tape, adam_step
from factfuse.nn.kernels import LOG_EPS
from factfuse.records import LABELS, label_index
from factfuse.vocab import Vocabulary

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "factfuse-checkpoint"
CHECKPOINT_VERSION = 1


# -- metrics -----------------------------------------------------------------

def label_accuracy(preds: Sequence[str], golds: Sequence[str]) -> float:
    if len(preds) != len(golds):
        raise ShapeMismatch(f"{len(preds)} predictions for {len(golds)} gold labels")
    if not golds:
        raise EmptyInput("label accuracy of an empty set")
    return 100.0 * sum(p == g for p, g in zip(preds, golds)) / len(golds)


def feverous_score(preds: Sequence[str], golds: Sequence[str], gold_complete: Sequence[bool]) -> float:
    """Percent of claims that are label-correct and carry a complete gold evidence set."""
    if not len(preds) == len(golds) == len(gold_complete):
        raise ShapeMismatch("predictions, gold labels and completeness flags differ in length")
    if not golds:
        raise EmptyInput("FEVEROUS score of an empty set")
    hits = sum(p == g and bool(c) for p, g, c in zip(preds, golds, gold_complete))
    return 100.0 * hits / len(golds)


@dataclass
class EvalReport:
    label_accuracy: float
    feverous_score: float
    confusion: list[list[int]]  # confusion[gold][pred] in S, R, NEI order
    n_claims: int

    def to_dict(self) -> dict:
        return {
            "label_accuracy": self.label_accuracy,
            "feverous_score": self.feverous_score,
            "confusion": {"labels": list(LABELS), "matrix": self.confusion},
            "n_claims": self.n_claims,
        }


def build_report(preds: Sequence[str], golds: Sequence[str], complete: Sequence[bool]) -> EvalReport:
    confusion = [[0] * len(LABELS) for _ in LABELS]
    for p, g in zip(preds, golds):
        confusion[label_index(g)][label_index(p)] += 1
    return EvalReport(
        label_accuracy=label_accuracy(preds, golds),
        feverous_score=feverous_score(preds, golds, complete),
        confusion=confusion,
        n_claims=len(golds),
    )


# -- configuration -------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 16
    max_epochs: int = 6
    patience: int = 2
    seed: int = 0
    modality: str = "both"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be positive")
        if self.patience > self.max_epochs:
            raise ConfigError("patience may not exceed max_epochs")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.modality not in MODALITIES:
            raise ConfigError(f"modality must be one of {MODALITIES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d


# -- checkpoints -----------------------------------------------------------------

@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    vocab: Vocabulary
    config: TrainConfig
    epoch: int
    dev_metrics: dict

    def build_model(self) -> VerifierModel:
        model = VerifierModel(self.config.model, self.vocab, seed=self.config.seed)
        model.store.load(self.params)
        return model

    def to_json(self) -> str:
        payload = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "dev_metrics": self.dev_metrics,
            "vocab": self.vocab.tokens(),
            "params": {
                name: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                for name, v in self.params.items()
            },
        }
        return json.dumps(payload, separators=(",", ":"))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Checkpoint":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"{path} is not a checkpoint")
        if payload.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {payload.get('version')}")
        params = {
            name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in payload["params"].items()
        }
        return cls(
            params=params,
            vocab=Vocabulary(payload["vocab"]),
            config=TrainConfig(**payload["config"]),
            epoch=payload["epoch"],
            dev_metrics=payload["dev_metrics"],
        )


# -- training ----------------------------------------------------------------------

def corpus_texts(records: Sequence[ClaimRecord]):
    for r in records:
        yield r.claim
        for t in r.text_evidence:
            yield t.sentence
        for tab in r.table_evidence:
            if tab.caption:
                yield tab.caption
            for row in tab.cells:
                yield from row


def mean_loss(probs: np.ndarray, labels: Sequence[int]) -> float:
    picked = probs[np.arange(len(labels)), np.asarray(labels)]
    return float(-np.log(np.maximum(picked, LOG_EPS)).mean())


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]
    initial_dev_loss: float
    initial_params: dict[str, np.ndarray]
    final_params: dict[str, np.ndarray]


def _dev_pass(model: VerifierModel, examples: list[Example]) -> tuple[float, dict]:
    probs = model.predict_proba(examples)
    labelled = [i for i, ex in enumerate(examples) if ex.has_evidence]
    loss = mean_loss(probs[labelled], [examples[i].label for i in labelled]) if labelled else math.nan
    preds = [predict_label(p) for p in probs]
    golds = [LABELS[ex.label] for ex in examples]
    report = build_report(preds, golds, [ex.gold_complete for ex in examples])
    return loss, report.to_dict()


def history_lines(history: list[dict]) -> str:
    return "".join(json.dumps(h, separators=(",", ":")) + "\n" for h in history)


def train(cfg: TrainConfig, train_set: Dataset, dev_set: Dataset) -> TrainResult:
    """Mini-batch Adam training; returns the checkpoint with the best dev loss."""
    if not len(train_set) or not len(dev_set):
        raise EmptyDataset("training needs non-empty train and dev sets")
    vocab = Vocabulary.build(corpus_texts(train_set.records), cfg.model.vocab_size)
    model = VerifierModel(cfg.model, vocab, seed=cfg.seed)
    store = model.store
    train_ex = [model.featurize(r, cfg.modality) for r in train_set.records]
    train_ex = [ex for ex in train_ex if ex.has_evidence and ex.label is not None]
    dev_ex = [model.featurize(r, cfg.modality) for r in dev_set.records]
    if any(ex.label is None for ex in dev_ex):
        raise ConfigError("dev records need gold labels")
    if not train_ex:
        raise EmptyDataset("no training claim has evidence under this modality")

    rng = RngState(cfg.seed + 1)
    initial = store.snapshot()
    initial_loss, _ = _dev_pass(model, dev_ex)
    log.info("initial dev loss %.4f", initial_loss)

    best_loss, best = math.inf, None
    history: list[dict] = []
    since_best = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.generator().permutation(len(train_ex))
        losses = []
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [train_ex[i] for i in order[start : start + cfg.batch_size]]
            tape = Tape(store, train=True, rng=rng)
            loss = model.loss(tape, batch)
            tape.backward(loss)
            try:
                adam_step(store, cfg.learning_rate)
            except NonFiniteGradient as exc:
                raise NonFiniteGradient(exc.name, f"epoch {epoch}, batch {b}") from None
            losses.append(float(loss.value))
        dev_loss, metrics = _dev_pass(model, dev_ex)
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "dev_loss": dev_loss,
            "dev_label_accuracy": metrics["label_accuracy"],
            "dev_feverous_score": metrics["feverous_score"],
        }
        history.append(row)
        log.info("epoch %d train %.4f dev %.4f acc %.2f", epoch, row["train_loss"], dev_loss,
                 metrics["label_accuracy"])
        if dev_loss < best_loss:
            best_loss, since_best = dev_loss, 0
            best = Checkpoint(store.snapshot(), vocab, cfg, epoch, metrics)
        else:
            since_best += 1
            if since_best >= cfg.patience:
                log.info("early stop after epoch %d (best epoch %d)", epoch, best.epoch)
                break
    if best is None:  # dev loss was NaN throughout
        best = Checkpoint(store.snapshot(), vocab, cfg, len(history), metrics)
    return TrainResult(best, history, initial_loss, initial, store.snapshot())


def evaluate(source: Checkpoint | VerifierModel, dataset: Dataset, modality: str = "both") -> EvalReport:
    """Eval-mode metrics over ``dataset``; claims without evidence are predicted NEI."""
    if not len(dataset):
        raise EmptyDataset("cannot evaluate an empty dataset")
    model = source.build_model() if isinstance(source, Checkpoint) else source
    examples = [model.featurize(r, modality) for r in dataset.records]
    if any(ex.label is None for ex in examples):
        raise ConfigError("evaluation needs gold labels")
    probs = model.predict_proba(examples)
    preds = [predict_label(p) for p in probs]
    return build_report(preds, [r.gold_label for r in dataset.records],
                        [r.evidence_is_gold_complete for r in dataset.records])


def predict(source: Checkpoint | VerifierModel, dataset: Dataset, modality: str = "both") -> list[dict]:
    model = source.build_model() if isinstance(source, Checkpoint) else source
    examples = [model.featurize(r, modality) for r in dataset.records]
    probs = model.predict_proba(examples)
    return [
        {"claim_id": ex.claim_id, "label": predict_label(p), "probs": p.tolist()}
        for ex, p in zip(examples, probs)
    ]
