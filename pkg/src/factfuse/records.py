"""Claim and evidence records shared by every stage of the pipeline."""
from __future__ import annotations

from dataclasses import dataclass, field

from factfuse.errors import UnknownLabel

LABELS = ("S", "R", "NEI")
LABEL_INDEX = {label: i for i, label in enumerate(LABELS)}


def label_index(label: str) -> int:
    try:
        return LABEL_INDEX[label]
    except KeyError:
        raise UnknownLabel(f"unknown verdict label {label!r}; expected one of {LABELS}") from None


@dataclass(frozen=True)
class Claim:
    id: int
    text: str
    label: str | None = None


@dataclass(frozen=True)
class TextEvidence:
    id: str
    sentence: str
    source: str = ""

    def __post_init__(self):
        if not self.sentence:
            raise ValueError(f"text evidence {self.id!r} has an empty sentence")


@dataclass(frozen=True)
class TableEvidence:
    """A rectangular grid of cell strings.

    ``header_rows`` leading rows and ``header_cols`` leading columns are
    header cells.  ``highlighted`` holds 0-based ``(row, col)`` coordinates and
    is metadata only.
    """

    id: str
    cells: tuple[tuple[str, ...], ...]
    header_rows: int = 0
    header_cols: int = 0
    caption: str | None = None
    highlighted: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        cells = tuple(tuple(str(c) for c in row) for row in self.cells)
        width = max((len(r) for r in cells), default=0)
        cells = tuple(row + ("",) * (width - len(row)) for row in cells)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "highlighted", frozenset(map(tuple, self.highlighted)))
        if not 0 <= self.header_rows <= self.n_rows or not 0 <= self.header_cols <= self.n_cols:
            raise ValueError(f"table {self.id!r}: header counts exceed grid size")

    @property
    def n_rows(self) -> int:
        return len(self.cells)

    @property
    def n_cols(self) -> int:
        return len(self.cells[0]) if self.cells else 0

    def is_header(self, row: int, col: int) -> bool:
        return row < self.header_rows or col < self.header_cols

    def transposed(self) -> "TableEvidence":
        return TableEvidence(
            self.id,
            tuple(zip(*self.cells)),
            header_rows=self.header_cols,
            header_cols=self.header_rows,
            caption=self.caption,
            highlighted=frozenset((c, r) for r, c in self.highlighted),
        )
