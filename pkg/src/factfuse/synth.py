"""Seeded synthetic claim-verification datasets with controllable label logic.

Every claim is templated over random entities.  Sentences read
``"<entity> <attribute> is <value> ."``; tables are captioned with an entity
name and list ``attribute | value`` rows under a header row.  Depending on
``task`` the deciding fact sits in a sentence, in a table cell, or in both:

* ``text_only`` / ``table_only``: S when the deciding fact agrees with the
  claim, R when it contradicts it, NEI when it is withheld.
* ``joint``: the claim asserts one text attribute and one table attribute.
  R if any present fact contradicts it, S if both are present and agree,
  NEI otherwise.
"""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from factfuse.data import ClaimRecord, Dataset, save_dataset
from factfuse.errors import ConfigError
from factfuse.records import LABELS, TableEvidence, TextEvidence

TASKS = ("text_only", "table_only", "joint")
AGREE, DISAGREE, ABSENT = "agree", "disagree", "absent"

JOINT_CASES = {
    "S": [(AGREE, AGREE)],
    "R": [(DISAGREE, AGREE), (AGREE, DISAGREE), (DISAGREE, DISAGREE),
          (DISAGREE, ABSENT), (ABSENT, DISAGREE)],
    "NEI": [(ABSENT, AGREE), (AGREE, ABSENT), (ABSENT, ABSENT)],
}
SINGLE_CASES = {"S": AGREE, "R": DISAGREE, "NEI": ABSENT}


def _default_entities(n: int = 40) -> list[str]:
    cons, vowels = "bdgklmnprstvz", "aeiou"
    names = ["".join(p) for p in itertools.product(cons, vowels, cons, vowels)]
    return [names[(i * 97) % len(names)] for i in range(n)]


@dataclass
class SynthConfig:
    seed: int = 0
    n_train: int = 2000
    n_dev: int = 500
    n_test: int = 500
    task: str = "joint"
    entities: list[str] = field(default_factory=_default_entities)
    text_attributes: list[str] = field(
        default_factory=lambda: ["color", "shape", "mood", "genre", "fabric", "flavor"])
    text_values: list[str] = field(
        default_factory=lambda: ["red", "blue", "green", "yellow", "black", "white", "orange", "purple"])
    table_attributes: list[str] = field(
        default_factory=lambda: ["height", "weight", "age", "speed", "rank", "score"])
    value_range: list[int] = field(default_factory=lambda: [1, 20])
    n_text: int = 5
    n_tables: int = 2
    table_rows: int = 3
    hard_distractors: bool = True

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        for name in ("n_train", "n_dev", "n_test"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("entities", "text_attributes", "text_values", "table_attributes"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must not be empty")
        if len(self.entities) < 3:
            raise ConfigError("need at least 3 entities")
        if len(self.text_values) < 2:
            raise ConfigError("need at least 2 text values")
        lo, hi = self.value_range
        if hi <= lo:
            raise ConfigError("value_range must span at least 2 values")
        if self.n_text < 2 or self.n_tables < 2:
            raise ConfigError("need room for at least 2 sentences and 2 tables")
        if not 1 <= self.table_rows <= len(self.table_attributes):
            raise ConfigError("table_rows must be between 1 and the number of table attributes")

    def to_dict(self) -> dict:
        return asdict(self)


def _pick(rng: np.random.Generator, items, exclude=()):
    pool = [x for x in items if x not in exclude]
    return pool[int(rng.integers(len(pool)))]


class _RecordBuilder:
    def __init__(self, cfg: SynthConfig, rng: np.random.Generator, claim_id: int):
        self.cfg = cfg
        self.rng = rng
        self.claim_id = claim_id
        lo, hi = cfg.value_range
        self.numbers = [str(v) for v in range(lo, hi + 1)]

    def sentence(self, k: int, ent: str, attr: str, val: str) -> TextEvidence:
        return TextEvidence(f"{self.claim_id}_s{k}", f"{ent} {attr} is {val} .", f"synthetic:{ent}")

    def table(self, k: int, ent: str, rows: list[tuple[str, str]]) -> TableEvidence:
        cells = (("attribute", "value"), *rows)
        return TableEvidence(f"{self.claim_id}_t{k}", cells, header_rows=1, caption=ent)

    def random_rows(self, forced: tuple[str, str] | None = None, banned: str | None = None):
        cfg, rng = self.cfg, self.rng
        pool = [a for a in cfg.table_attributes if a != banned]
        if forced is not None:
            pool = [a for a in pool if a != forced[0]]
        n_free = cfg.table_rows - (forced is not None)
        chosen = [pool[i] for i in rng.permutation(len(pool))[:n_free]]
        rows = [(a, _pick(rng, self.numbers)) for a in chosen]
        if forced is not None:
            rows.insert(int(rng.integers(len(rows) + 1)), forced)
        return rows

    def build(self, label: str) -> ClaimRecord:
        cfg, rng = self.cfg, self.rng
        ent = _pick(rng, cfg.entities)
        t_attr, t_val = _pick(rng, cfg.text_attributes), _pick(rng, cfg.text_values)
        b_attr, b_val = _pick(rng, cfg.table_attributes), _pick(rng, self.numbers)

        if cfg.task == "joint":
            cases = JOINT_CASES[label]
            text_state, table_state = cases[int(rng.integers(len(cases)))]
            claim = f"{ent} {t_attr} is {t_val} and {b_attr} is {b_val} ."
        elif cfg.task == "text_only":
            text_state, table_state = SINGLE_CASES[label], None
            claim = f"{ent} {t_attr} is {t_val} ."
        else:
            text_state, table_state = None, SINGLE_CASES[label]
            claim = f"{ent} {b_attr} is {b_val} ."

        # sentences
        facts = []
        if text_state == AGREE:
            facts.append((ent, t_attr, t_val))
        elif text_state == DISAGREE:
            facts.append((ent, t_attr, _pick(rng, cfg.text_values, exclude=(t_val,))))
        if cfg.hard_distractors and len(cfg.text_attributes) > 1 and rng.random() < 0.5:
            facts.append((ent, _pick(rng, cfg.text_attributes, exclude=(t_attr,)),
                          _pick(rng, cfg.text_values)))
        while len(facts) < cfg.n_text:
            facts.append((_pick(rng, cfg.entities, exclude=(ent,)),
                          _pick(rng, cfg.text_attributes), _pick(rng, cfg.text_values)))
        order = rng.permutation(len(facts))
        texts = tuple(self.sentence(k, *facts[i]) for k, i in enumerate(order))

        # tables
        grids: list[tuple[str, list]] = []
        if table_state == AGREE:
            grids.append((ent, self.random_rows(forced=(b_attr, b_val))))
        elif table_state == DISAGREE:
            other = _pick(rng, self.numbers, exclude=(b_val,))
            grids.append((ent, self.random_rows(forced=(b_attr, other))))
        elif table_state == ABSENT and cfg.hard_distractors and rng.random() < 0.5:
            if len(cfg.table_attributes) > cfg.table_rows:
                grids.append((ent, self.random_rows(banned=b_attr)))
        while len(grids) < cfg.n_tables:
            grids.append((_pick(rng, cfg.entities, exclude=(ent,)), self.random_rows()))
        order = rng.permutation(len(grids))
        tables = tuple(self.table(k, *grids[i]) for k, i in enumerate(order))

        return ClaimRecord(
            claim_id=self.claim_id,
            claim=claim,
            gold_label=label,
            text_evidence=texts,
            table_evidence=tables,
            evidence_is_gold_complete=True,
        )


def generate(cfg: SynthConfig) -> dict[str, Dataset]:
    """Train/dev/test datasets, fully determined by ``cfg``.

    Labels within each split are balanced to within one record; every record
    draws from its own stream derived from ``(seed, split, index)``.
    """
    out = {}
    next_id = 0
    for split_no, (split, n) in enumerate(
        (("train", cfg.n_train), ("dev", cfg.n_dev), ("test", cfg.n_test))
    ):
        split_rng = np.random.default_rng([cfg.seed, split_no])
        labels = [LABELS[i % len(LABELS)] for i in range(n)]
        labels = [labels[i] for i in split_rng.permutation(n)]
        records = []
        for i, label in enumerate(labels):
            rng = np.random.default_rng([cfg.seed, split_no, i])
            records.append(_RecordBuilder(cfg, rng, next_id + i).build(label))
        next_id += n
        out[split] = Dataset(records, split)
    return out


def write_splits(datasets: dict[str, Dataset], out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for split, ds in datasets.items():
        paths[split] = out_dir / f"{split}.jsonl"
        save_dataset(ds.records, paths[split])
    return paths


def label_histogram(ds: Dataset) -> dict[str, int]:
    counts = {label: 0 for label in LABELS}
    for r in ds.records:
        counts[r.gold_label] += 1
    return counts
