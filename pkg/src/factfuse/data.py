"""Line-delimited JSON ingestion of claim/evidence records.

One JSON object per line::

    {"claim_id": int, "claim": str, "label": "S"|"R"|"NEI", "gold_complete": bool,
     "text_evidence": [{"id": str, "sentence": str, "source": str}],
     "table_evidence": [{"id": str, "caption": str|null,
                         "cells": [{"row": int, "col": int, "content": str,
                                    "is_header": bool}]}]}

``label`` may be omitted (or null) only for the ``test`` split.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from factfuse.errors import ConflictingCell, EmptyDataset
from factfuse.records import LABELS, Claim, TableEvidence, TextEvidence

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


class RawCell(NamedTuple):
    cell_id: str
    content: str
    row: int
    col: int
    is_header: bool = False


@dataclass(frozen=True)
class ClaimRecord:
    claim_id: int
    claim: str
    gold_label: str | None
    text_evidence: tuple[TextEvidence, ...] = ()
    table_evidence: tuple[TableEvidence, ...] = ()
    evidence_is_gold_complete: bool = False

    def as_claim(self) -> Claim:
        return Claim(self.claim_id, self.claim, self.gold_label)


@dataclass
class Dataset:
    records: list[ClaimRecord]
    split: str
    skipped: list[tuple[int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]


def resolve_table(
    cells: Iterable[RawCell | Sequence],
    caption: str | None = None,
    table_id: str = "",
) -> TableEvidence:
    """Build a rectangular grid from scattered cells.

    Missing positions become empty strings.  ``header_rows`` counts the leading
    rows whose present cells are all headers, ``header_cols`` the same for
    columns.
    """
    grid: dict[tuple[int, int], str] = {}
    header: dict[tuple[int, int], bool] = {}
    for cell in cells:
        cell = RawCell(*cell)
        if cell.row < 0 or cell.col < 0:
            raise ValueError(f"cell {cell.cell_id!r} has negative coordinates")
        key = (cell.row, cell.col)
        if key in grid and grid[key] != cell.content:
            raise ConflictingCell(
                f"cells at row {cell.row}, col {cell.col} disagree: "
                f"{grid[key]!r} vs {cell.content!r}"
            )
        grid[key] = cell.content
        header[key] = header.get(key, False) or bool(cell.is_header)
    n_rows = 1 + max((r for r, _ in grid), default=-1)
    n_cols = 1 + max((c for _, c in grid), default=-1)
    rows = tuple(tuple(grid.get((r, c), "") for c in range(n_cols)) for r in range(n_rows))

    def leading(lines: list[list[tuple[int, int]]]) -> int:
        count = 0
        for keys in lines:
            present = [k for k in keys if k in grid]
            if not present or not all(header[k] for k in present):
                break
            count += 1
        return count

    header_rows = leading([[(r, c) for c in range(n_cols)] for r in range(n_rows)])
    header_cols = leading([[(r, c) for r in range(n_rows)] for c in range(n_cols)])
    return TableEvidence(table_id, rows, header_rows, header_cols, caption)


def select_evidence(
    record: ClaimRecord, budget_M: int = 5, budget_N: int = 2
) -> tuple[list[TextEvidence], list[TableEvidence]]:
    """First ``budget_M`` sentences and first ``budget_N`` tables, in stored order."""
    return list(record.text_evidence[:budget_M]), list(record.table_evidence[:budget_N])


# -- parsing -----------------------------------------------------------------

class _Malformed(ValueError):
    pass


def _req(obj: dict, key: str, kind, where: str):
    if key not in obj:
        raise _Malformed(f"{where}: missing {key!r}")
    value = obj[key]
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise _Malformed(f"{where}: {key!r} has type {type(value).__name__}")
    return value


def _parse_text(obj, i: int) -> TextEvidence:
    where = f"text_evidence[{i}]"
    if not isinstance(obj, dict):
        raise _Malformed(f"{where} is not an object")
    sentence = _req(obj, "sentence", str, where)
    if not sentence:
        raise _Malformed(f"{where}: empty sentence")
    source = obj.get("source", "")
    if not isinstance(source, str):
        raise _Malformed(f"{where}: 'source' is not a string")
    return TextEvidence(_req(obj, "id", str, where), sentence, source)


def _parse_table(obj, i: int) -> TableEvidence:
    where = f"table_evidence[{i}]"
    if not isinstance(obj, dict):
        raise _Malformed(f"{where} is not an object")
    table_id = _req(obj, "id", str, where)
    caption = obj.get("caption")
    if caption is not None and not isinstance(caption, str):
        raise _Malformed(f"{where}: caption is not a string")
    raw = []
    for j, cell in enumerate(_req(obj, "cells", list, where)):
        cw = f"{where}.cells[{j}]"
        if not isinstance(cell, dict):
            raise _Malformed(f"{cw} is not an object")
        row, col = _req(cell, "row", int, cw), _req(cell, "col", int, cw)
        if row < 0 or col < 0:
            raise _Malformed(f"{cw}: negative coordinates")
        is_header = cell.get("is_header", False)
        if not isinstance(is_header, bool):
            raise _Malformed(f"{cw}: is_header is not a boolean")
        raw.append(RawCell(f"{table_id}_{row}_{col}", _req(cell, "content", str, cw), row, col, is_header))
    try:
        table = resolve_table(raw, caption, table_id)
    except ConflictingCell as exc:
        raise _Malformed(f"{where}: {exc}") from None
    highlighted = obj.get("highlighted")
    if highlighted:
        try:
            coords = frozenset((int(r), int(c)) for r, c in highlighted)
        except (TypeError, ValueError):
            raise _Malformed(f"{where}: bad highlighted coordinates") from None
        table = TableEvidence(table.id, table.cells, table.header_rows, table.header_cols,
                              table.caption, coords)
    return table


def parse_record(obj, split: str = "train") -> ClaimRecord:
    if not isinstance(obj, dict):
        raise _Malformed("line is not a JSON object")
    claim_id = _req(obj, "claim_id", int, "record")
    claim = _req(obj, "claim", str, "record")
    label = obj.get("label")
    if label is None:
        if split != "test":
            raise _Malformed(f"record: missing label in {split} split")
    elif label not in LABELS:
        raise _Malformed(f"record: unknown label {label!r}")
    gold_complete = obj.get("gold_complete", False)
    if not isinstance(gold_complete, bool):
        raise _Malformed("record: gold_complete is not a boolean")
    texts = obj.get("text_evidence", [])
    tables = obj.get("table_evidence", [])
    if not isinstance(texts, list) or not isinstance(tables, list):
        raise _Malformed("record: evidence fields must be lists")
    return ClaimRecord(
        claim_id=claim_id,
        claim=claim,
        gold_label=label,
        text_evidence=tuple(_parse_text(t, i) for i, t in enumerate(texts)),
        table_evidence=tuple(_parse_table(t, i) for i, t in enumerate(tables)),
        evidence_is_gold_complete=gold_complete,
    )


def load_dataset(path, split: str = "train") -> Dataset:
    """Parse a JSONL file.  Malformed lines are logged and skipped; see
    ``Dataset.skipped`` for ``(line_number, reason)`` pairs."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    records: list[ClaimRecord] = []
    skipped: list[tuple[int, str]] = []
    seen: set[int] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = parse_record(json.loads(line), split)
                if record.claim_id in seen:
                    raise _Malformed(f"duplicate claim_id {record.claim_id}")
            except (json.JSONDecodeError, _Malformed, ValueError) as exc:
                log.warning("%s:%d: skipped malformed line: %s", path, lineno, exc)
                skipped.append((lineno, str(exc)))
                continue
            seen.add(record.claim_id)
            records.append(record)
    if not records:
        raise EmptyDataset(f"no valid records in {path} ({len(skipped)} malformed lines)")
    return Dataset(records, split, skipped)


# -- serialisation -------------------------------------------------------------

def table_to_json(table: TableEvidence) -> dict:
    out = {
        "id": table.id,
        "caption": table.caption,
        "cells": [
            {"row": r, "col": c, "content": cell, "is_header": table.is_header(r, c)}
            for r, row in enumerate(table.cells)
            for c, cell in enumerate(row)
        ],
    }
    if table.highlighted:
        out["highlighted"] = [list(rc) for rc in sorted(table.highlighted)]
    return out


def record_to_json(record: ClaimRecord) -> dict:
    return {
        "claim_id": record.claim_id,
        "claim": record.claim,
        "label": record.gold_label,
        "gold_complete": record.evidence_is_gold_complete,
        "text_evidence": [
            {"id": t.id, "sentence": t.sentence, "source": t.source} for t in record.text_evidence
        ],
        "table_evidence": [table_to_json(t) for t in record.table_evidence],
    }


def dumps_records(records: Iterable[ClaimRecord]) -> str:
    return "".join(
        json.dumps(record_to_json(r), ensure_ascii=False, separators=(",", ":")) + "\n"
        for r in records
    )


def save_dataset(records: Iterable[ClaimRecord], path) -> None:
    Path(path).write_text(dumps_records(records), encoding="utf-8")
