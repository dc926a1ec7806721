"""Tokenisation and the token <-> id vocabulary shared by both encoders."""
from __future__ import annotations

import re
from collections import Counter
from pathlib import Path
from typing import Iterable

from factfuse.errors import ConfigError

PAD, UNK, CLS, SEP = 0, 1, 2, 3
RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")

# digit runs, letter runs, then any single punctuation character
_TOKEN_RE = re.compile(r"\d+|[^\W\d_]+|[^\w\s]|_")


def split_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Token <-> id map.  Ids 0-3 are PAD, UNK, CLS, SEP."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {tok: i for i, tok in enumerate(RESERVED)}
        for tok in tokens:
            if tok in self.stoi:
                raise ConfigError(f"duplicate vocabulary token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    @classmethod
    def build(cls, texts: Iterable[str], max_size: int = 8192) -> "Vocabulary":
        """Most frequent tokens first, ties broken alphabetically."""
        if max_size < len(RESERVED):
            raise ConfigError(f"vocabulary size {max_size} leaves no room for reserved ids")
        counts = Counter(tok for text in texts for tok in split_tokens(text))
        ranked = sorted(counts, key=lambda tok: (-counts[tok], tok))
        return cls(ranked[: max_size - len(RESERVED)])

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def tokenize(self, text: str) -> list[int]:
        return [self.id(tok) for tok in split_tokens(text)]

    def tokens(self) -> list[str]:
        """Non-reserved tokens in id order."""
        return self.itos[len(RESERVED):]

    def save(self, path) -> None:
        Path(path).write_text("".join(tok + "\n" for tok in self.tokens()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text.split("\n")[:-1] if text else [])
