import json
from pathlib import Path

import pytest

from factfuse.data import (
    ClaimRecord,
    RawCell,
    dumps_records,
    load_dataset,
    record_to_json,
    resolve_table,
    save_dataset,
    select_evidence,
)
from factfuse.errors import ConflictingCell, EmptyDataset
from factfuse.records import TableEvidence, TextEvidence

FIXTURES = Path(__file__).parent / "fixtures"


def texts(n):
    return tuple(TextEvidence(f"s{i}", f"sentence {i}") for i in range(n))


def tables(n):
    return tuple(TableEvidence(f"t{i}", [[str(i)]]) for i in range(n))


def semantic(obj: dict) -> dict:
    """Canonical view of a record line: cells as a sorted coordinate map."""
    out = dict(obj)
    out["table_evidence"] = [
        {
            "id": t["id"],
            "caption": t.get("caption"),
            "cells": {(c["row"], c["col"]): (c["content"], c.get("is_header", False)) for c in t["cells"]},
        }
        for t in obj.get("table_evidence", [])
    ]
    out["text_evidence"] = [{"source": "", **t} for t in obj.get("text_evidence", [])]
    return out


# -- loading -----------------------------------------------------------------------

def test_empty_file(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    with pytest.raises(EmptyDataset):
        load_dataset(p)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope.jsonl")


def test_single_line_round_trip(tmp_path):
    obj = json.loads((FIXTURES / "wellformed.jsonl").read_text(encoding="utf-8").splitlines()[4])
    p = tmp_path / "one.jsonl"
    p.write_text(json.dumps(obj) + "\n", encoding="utf-8")
    ds = load_dataset(p, "dev")
    assert len(ds) == 1 and ds.split == "dev"
    r = ds[0]
    assert (r.claim_id, r.claim, r.gold_label, r.evidence_is_gold_complete) == (
        obj["claim_id"], obj["claim"], obj["label"], obj["gold_complete"])
    assert [t.sentence for t in r.text_evidence] == [t["sentence"] for t in obj["text_evidence"]]


def test_malformed_fixture_skip_accounting():
    ds = load_dataset(FIXTURES / "malformed.jsonl")
    assert len(ds) == 8
    assert [line for line, _ in ds.skipped] == [4, 8]
    assert [r.claim_id for r in ds] == [1, 2, 3, 5, 6, 7, 9, 10]


def test_malformed_lines_logged(caplog):
    load_dataset(FIXTURES / "malformed.jsonl")
    assert sum("skipped malformed line" in m for m in caplog.messages) == 2


@pytest.mark.parametrize(
    "line",
    [
        '{"claim": "x", "label": "S"}',
        '{"claim_id": "1", "claim": "x", "label": "S"}',
        '{"claim_id": true, "claim": "x", "label": "S"}',
        '{"claim_id": 1, "claim": "x"}',
        '{"claim_id": 1, "claim": "x", "label": "S", "gold_complete": "yes"}',
        '{"claim_id": 1, "claim": "x", "label": "S", "text_evidence": [{"id": "a", "sentence": ""}]}',
        '{"claim_id": 1, "claim": "x", "label": "S", "table_evidence": [{"id": "t", "cells": '
        '[{"row": 0, "col": 0, "content": "a"}, {"row": 0, "col": 0, "content": "b"}]}]}',
        '{"claim_id": 1, "claim": "x", "label": "S", "table_evidence": [{"id": "t", "cells": '
        '[{"row": -1, "col": 0, "content": "a"}]}]}',
        "[1, 2, 3]",
    ],
)
def test_malformed_variants(tmp_path, line):
    good = '{"claim_id": 99, "claim": "ok", "label": "NEI"}'
    p = tmp_path / "x.jsonl"
    p.write_text(good + "\n" + line + "\n")
    ds = load_dataset(p)
    assert len(ds) == 1 and ds.skipped[0][0] == 2


def test_duplicate_ids_skipped(tmp_path):
    p = tmp_path / "dup.jsonl"
    line = '{"claim_id": 1, "claim": "a", "label": "S"}\n'
    p.write_text(line + line)
    ds = load_dataset(p)
    assert len(ds) == 1 and ds.skipped[0][0] == 2


def test_missing_label_allowed_only_in_test_split(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text('{"claim_id": 1, "claim": "a"}\n')
    assert load_dataset(p, "test")[0].gold_label is None
    with pytest.raises(EmptyDataset):
        load_dataset(p, "dev")


def test_blank_lines_ignored(tmp_path):
    p = tmp_path / "b.jsonl"
    p.write_text('\n{"claim_id": 1, "claim": "a", "label": "S"}\n\n')
    ds = load_dataset(p)
    assert len(ds) == 1 and ds.skipped == []


def test_loading_is_deterministic():
    a, b = load_dataset(FIXTURES / "wellformed.jsonl"), load_dataset(FIXTURES / "wellformed.jsonl")
    assert a.records == b.records


def test_wellformed_round_trip(tmp_path):
    src = FIXTURES / "wellformed.jsonl"
    ds = load_dataset(src)
    out = tmp_path / "out.jsonl"
    save_dataset(ds.records, out)
    orig = [semantic(json.loads(l)) for l in src.read_text(encoding="utf-8").splitlines()]
    again = [semantic(json.loads(l)) for l in out.read_text(encoding="utf-8").splitlines()]
    assert orig == again
    assert load_dataset(out).records == ds.records


def test_dumps_is_stable():
    ds = load_dataset(FIXTURES / "wellformed.jsonl")
    assert dumps_records(ds.records) == dumps_records(load_dataset(FIXTURES / "wellformed.jsonl").records)
    assert "Zürich" in dumps_records(ds.records)


# -- evidence budget ---------------------------------------------------------------------

def record(n_text, n_table):
    return ClaimRecord(1, "c", "S", texts(n_text), tables(n_table))


def test_select_evidence_truncates_in_order():
    t, b = select_evidence(record(8, 3))
    assert [x.id for x in t] == ["s0", "s1", "s2", "s3", "s4"]
    assert [x.id for x in b] == ["t0", "t1"]


def test_select_evidence_empty_and_short():
    assert select_evidence(record(0, 0)) == ([], [])
    t, b = select_evidence(record(2, 1))
    assert len(t) == 2 and len(b) == 1


def test_no_rebalancing_across_modalities():
    t, b = select_evidence(record(9, 0))
    assert len(t) == 5 and b == []


# -- table resolution ------------------------------------------------------------------------

def test_resolve_single_cell():
    t = resolve_table([RawCell("a", "x", 0, 0)])
    assert t.cells == (("x",),)


def test_resolve_diagonal_fills_blanks():
    t = resolve_table([RawCell("a", "x", 0, 0), RawCell("b", "y", 1, 1)])
    assert t.cells == (("x", ""), ("", "y"))


def test_resolve_twelve_cell_ragged_fixture():
    cells = [RawCell(f"h{c}", f"H{c}", 0, c, True) for c in range(5)]
    cells += [RawCell(f"a{c}", f"a{c}", 1, c) for c in range(5)]
    cells += [RawCell("b0", "b0", 2, 0, True), RawCell("b1", "b1", 2, 1)]
    t = resolve_table(cells, caption="cap", table_id="T")
    assert t.cells == (
        ("H0", "H1", "H2", "H3", "H4"),
        ("a0", "a1", "a2", "a3", "a4"),
        ("b0", "b1", "", "", ""),
    )
    assert (t.header_rows, t.header_cols, t.caption, t.id) == (1, 0, "cap", "T")


def test_resolve_header_columns():
    cells = [RawCell("", v, r, c, c == 0) for r in range(3) for c, v in enumerate(["k", "v"])]
    t = resolve_table(cells)
    assert (t.header_rows, t.header_cols) == (0, 1)


def test_resolve_conflict():
    with pytest.raises(ConflictingCell):
        resolve_table([RawCell("a", "x", 0, 0), RawCell("b", "y", 0, 0)])
    # an exact duplicate is not a conflict
    assert resolve_table([RawCell("a", "x", 0, 0), RawCell("b", "x", 0, 0)]).cells == (("x",),)


def test_record_json_keeps_highlighted():
    table = TableEvidence("t", [["a", "b"]], highlighted={(0, 1)})
    obj = record_to_json(ClaimRecord(1, "c", "S", (), (table,)))
    assert obj["table_evidence"][0]["highlighted"] == [[0, 1]]
