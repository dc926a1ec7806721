"""Convert FEVEROUS claim files plus the wiki page store into factfuse records.

Inputs are the benchmark's claim lines::

    {"id": 7, "claim": "...", "label": "SUPPORTS",
     "evidence": [{"content": ["Page_sentence_0", "Page_cell_0_1_2"], ...}],
     "predicted_evidence": ["Page_sentence_0", ...]}

and the SQLite page store (table ``wiki`` with columns ``id`` and ``data``,
``data`` being the page JSON).  Retrieved elements are taken from
``predicted_evidence`` in rank order; claims without it fall back to the union
of their gold evidence.  Sentences become text evidence; any retrieved cell or
caption pulls in its whole table, with the retrieved cells highlighted.

``gold_complete`` is true when one gold evidence set is fully covered by the
evidence that survives the 5/2 budget.  List items and section titles are not
ingested, so gold sets that need them never count as covered.
"""
from __future__ import annotations

import argparse
import json
import logging
import re
import sqlite3
import sys
from pathlib import Path

from factfuse.data import ClaimRecord, RawCell, resolve_table, save_dataset, select_evidence
from factfuse.errors import ConflictingCell
from factfuse.records import TextEvidence

log = logging.getLogger(__name__)

LABEL_MAP = {"SUPPORTS": "S", "REFUTES": "R", "NOT ENOUGH INFO": "NEI"}
ELEMENT = re.compile(r"^(?P<page>.+?)_(?P<kind>sentence|header_cell|cell|table_caption|item|section)_(?P<pos>\d+(?:_\d+)*)$")
LINK = re.compile(r"\[\[([^\]|]*)(?:\|([^\]]*))?\]\]")


def strip_markup(text: str) -> str:
    """``[[Target|shown]]`` -> ``shown``; ``[[Target]]`` -> ``Target`` with spaces."""
    return LINK.sub(lambda m: m.group(2) if m.group(2) is not None else m.group(1).replace("_", " "), text).strip()


def parse_element(element_id: str):
    """``(page, kind, positions)`` or None for ids this converter cannot place."""
    m = ELEMENT.match(element_id)
    if m is None:
        return None
    return m.group("page"), m.group("kind"), tuple(int(p) for p in m.group("pos").split("_"))


class PageStore:
    def __init__(self, path):
        self.conn = sqlite3.connect(f"file:{Path(path)}?mode=ro", uri=True)
        self.cache: dict[str, dict | None] = {}

    def page(self, title: str) -> dict | None:
        if title not in self.cache:
            row = self.conn.execute("SELECT data FROM wiki WHERE id = ?", (title,)).fetchone()
            self.cache[title] = json.loads(row[0]) if row else None
        return self.cache[title]

    def close(self) -> None:
        self.conn.close()


def build_table(page_title: str, page: dict, k: int, highlighted: set[tuple[int, int]]):
    raw = page.get(f"table_{k}")
    if not isinstance(raw, dict):
        return None
    cells = []
    for row in raw.get("table", []):
        for cell in row:
            parsed = parse_element(f"{page_title}_{cell.get('id', '')}")
            if parsed is None or parsed[1] not in ("cell", "header_cell"):
                continue
            _, kind, (_, r, c) = parsed
            cells.append(RawCell(cell["id"], strip_markup(str(cell.get("value", ""))), r, c,
                                 kind == "header_cell" or bool(cell.get("is_header"))))
    if not cells:
        return None
    caption = raw.get("caption") or page.get(f"table_caption_{k}")
    table = resolve_table(cells, strip_markup(caption) if caption else None, f"{page_title}_table_{k}")
    marks = {rc for rc in highlighted if rc[0] < table.n_rows and rc[1] < table.n_cols}
    return type(table)(table.id, table.cells, table.header_rows, table.header_cols, table.caption, marks)


def gather(elements: list[str], store: PageStore):
    """Text and table evidence in retrieval order, plus the element ids each covers."""
    texts, covered_text = [], []
    tables: dict[tuple[str, int], set] = {}
    for element in elements:
        parsed = parse_element(element)
        if parsed is None:
            continue
        title, kind, pos = parsed
        if kind == "sentence":
            page = store.page(title)
            sentence = page.get(f"sentence_{pos[0]}") if page else None
            if sentence and element not in covered_text:
                texts.append(TextEvidence(element, strip_markup(sentence), title))
                covered_text.append(element)
        elif kind in ("cell", "header_cell", "table_caption"):
            marks = tables.setdefault((title, pos[0]), set())
            if kind != "table_caption":
                marks.add((pos[1], pos[2]))
    built = []
    for (title, k), marks in tables.items():
        page = store.page(title)
        table = build_table(title, page, k, marks) if page else None
        if table is not None:
            built.append(table)
    return texts, built


def covers(gold_set: list[str], texts, tables) -> bool:
    sentence_ids = {t.id for t in texts}
    table_ids = {t.id for t in tables}
    for element in gold_set:
        parsed = parse_element(element)
        if parsed is None:
            return False
        title, kind, pos = parsed
        if kind == "sentence" and element in sentence_ids:
            continue
        if kind in ("cell", "header_cell", "table_caption") and f"{title}_table_{pos[0]}" in table_ids:
            continue
        return False
    return True


def convert_claim(obj: dict, store: PageStore, budget_M: int = 5, budget_N: int = 2) -> ClaimRecord | None:
    if not obj.get("claim") or obj.get("id") in (None, ""):
        return None
    gold_sets = [e.get("content", []) for e in obj.get("evidence", [])]
    elements = obj.get("predicted_evidence")
    if elements is None:
        elements = [el for s in gold_sets for el in s]
    texts, tables = gather(list(elements), store)
    record = ClaimRecord(int(obj["id"]), obj["claim"], LABEL_MAP.get(obj.get("label")), tuple(texts), tuple(tables))
    kept_text, kept_tables = select_evidence(record, budget_M, budget_N)
    complete = any(s and covers(s, kept_text, kept_tables) for s in gold_sets)
    return ClaimRecord(record.claim_id, record.claim, record.gold_label, tuple(kept_text), tuple(kept_tables),
                       complete)


def convert(claims_path, db_path, out_path) -> dict:
    store = PageStore(db_path)
    records, skipped = [], 0
    try:
        with open(claims_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    record = convert_claim(json.loads(line), store)
                except (json.JSONDecodeError, ValueError, KeyError, TypeError, ConflictingCell) as exc:
                    log.warning("%s:%d: skipped: %s", claims_path, lineno, exc)
                    skipped += 1
                    continue
                if record is None:
                    skipped += 1
                    continue
                records.append(record)
    finally:
        store.close()
    save_dataset(records, out_path)
    return {
        "records": len(records),
        "skipped": skipped,
        "gold_complete": sum(r.evidence_is_gold_complete for r in records),
    }


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="factfuse-convert",
                                     description="Convert FEVEROUS claims and wiki pages to factfuse JSONL.")
    parser.add_argument("--claims", required=True, help="FEVEROUS claim file (JSONL)")
    parser.add_argument("--wiki-db", required=True, help="SQLite page store with a 'wiki' table")
    parser.add_argument("--out", required=True, help="output JSONL path")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    for path in (args.claims, args.wiki_db):
        if not Path(path).is_file():
            print(f"error: not found: {path}", file=sys.stderr)
            return 1
    try:
        stats = convert(args.claims, args.wiki_db, args.out)
    except (OSError, sqlite3.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(json.dumps(stats, separators=(",", ":")) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
