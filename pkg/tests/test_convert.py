import json
import sqlite3

import pytest

from factfuse.convert import main, parse_element, strip_markup
from factfuse.data import load_dataset

PAGES = {
    "Tokyo_Tower": {
        "title": "Tokyo Tower",
        "sentence_0": "[[Tokyo_Tower|Tokyo Tower]] is a tower in [[Minato,_Tokyo]].",
        "sentence_1": "It is 333 m tall.",
        "table_0": {
            "caption": "Facts",
            "table": [
                [{"id": "header_cell_0_0_0", "value": "Height", "is_header": True},
                 {"id": "cell_0_0_1", "value": "333 m", "is_header": False}],
                [{"id": "header_cell_0_1_0", "value": "Opened", "is_header": True},
                 {"id": "cell_0_1_1", "value": "[[1958]]", "is_header": False}],
            ],
        },
    },
    "Eiffel_Tower": {"title": "Eiffel Tower", "sentence_0": "The Eiffel Tower is 330 m tall."},
}


@pytest.fixture
def feverous(tmp_path):
    db = tmp_path / "wiki.db"
    conn = sqlite3.connect(db)
    conn.execute("CREATE TABLE wiki (id TEXT PRIMARY KEY, data TEXT)")
    conn.executemany("INSERT INTO wiki VALUES (?, ?)", [(k, json.dumps(v)) for k, v in PAGES.items()])
    conn.commit()
    conn.close()
    claims = [
        {"id": "", "claim": "", "label": "", "evidence": []},
        {"id": 1, "claim": "Tokyo Tower is 333 m tall.", "label": "SUPPORTS",
         "evidence": [{"content": ["Tokyo_Tower_sentence_1"]}],
         "predicted_evidence": ["Eiffel_Tower_sentence_0", "Tokyo_Tower_sentence_1", "Tokyo_Tower_cell_0_0_1"]},
        {"id": 2, "claim": "Tokyo Tower opened in 1960.", "label": "REFUTES",
         "evidence": [{"content": ["Tokyo_Tower_cell_0_1_1", "Tokyo_Tower_sentence_0"]}],
         "predicted_evidence": ["Tokyo_Tower_cell_0_1_1"]},
        {"id": 3, "claim": "Tokyo Tower is in Minato.", "label": "NOT ENOUGH INFO",
         "evidence": [{"content": ["Tokyo_Tower_sentence_0"]}]},
    ]
    path = tmp_path / "claims.jsonl"
    path.write_text("".join(json.dumps(c) + "\n" for c in claims) + "{broken\n")
    return path, db


def test_strip_markup():
    assert strip_markup("[[Tokyo_Tower|Tokyo Tower]] in [[Minato,_Tokyo]]") == "Tokyo Tower in Minato, Tokyo"


def test_parse_element():
    assert parse_element("Tokyo_Tower_header_cell_0_1_2") == ("Tokyo_Tower", "header_cell", (0, 1, 2))
    assert parse_element("A_b_sentence_3") == ("A_b", "sentence", (3,))
    assert parse_element("nonsense") is None


def test_convert_end_to_end(feverous, tmp_path, capsys):
    claims, db = feverous
    out = tmp_path / "out.jsonl"
    assert main(["--claims", str(claims), "--wiki-db", str(db), "--out", str(out)]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats == {"records": 3, "skipped": 2, "gold_complete": 2}

    ds = load_dataset(out, "dev")
    first, second, third = ds
    assert first.gold_label == "S"
    assert [t.id for t in first.text_evidence] == ["Eiffel_Tower_sentence_0", "Tokyo_Tower_sentence_1"]
    table = first.table_evidence[0]
    assert table.cells == (("Height", "333 m"), ("Opened", "1958"))
    assert (table.header_rows, table.header_cols, table.caption) == (0, 1, "Facts")
    assert table.highlighted == {(0, 1)}
    assert first.evidence_is_gold_complete

    assert second.gold_label == "R" and not second.evidence_is_gold_complete
    assert third.gold_label == "NEI" and third.evidence_is_gold_complete
    assert third.text_evidence[0].sentence == "Tokyo Tower is a tower in Minato, Tokyo."


def test_missing_inputs(tmp_path):
    assert main(["--claims", str(tmp_path / "x"), "--wiki-db", str(tmp_path / "y"), "--out", str(tmp_path / "z")]) == 1
    assert main(["--claims"]) == 2
