"""Parameter storage, initialisation and seeded randomness."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from factfuse.errors import ConfigError, ShapeMismatch

from .kernels import DTYPE


class RngState:
    """Seeded source of independent numpy generators.

    Each call to :meth:`generator` derives a fresh PCG64 stream from
    ``(seed, counter)`` and bumps the counter, so the sequence of streams
    depends only on the seed and the order of requests.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence([self.seed, self.counter])
        self.counter += 1
        return np.random.Generator(np.random.PCG64(seq))

    def child(self) -> "RngState":
        """A new RngState whose seed is drawn from this one."""
        return RngState(int(self.generator().integers(0, 2**63 - 1)))


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    fan_in, fan_out = shape
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(DTYPE)


@dataclass
class ParameterStore:
    """Named trainable arrays with gradient slots and Adam moments."""

    entries: dict[str, Parameter] = field(default_factory=dict)
    step_count: int = 0

    def add(self, name: str, value) -> np.ndarray:
        if name in self.entries:
            raise ConfigError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=DTYPE)
        z = np.zeros_like
        self.entries[name] = Parameter(value, z(value), z(value), z(value))
        return value

    def add_weight(self, name: str, shape: tuple[int, int], rng: np.random.Generator):
        return self.add(name, xavier_uniform(rng, shape))

    def add_zeros(self, name: str, shape) -> np.ndarray:
        return self.add(name, np.zeros(shape, dtype=DTYPE))

    def add_ones(self, name: str, shape) -> np.ndarray:
        return self.add(name, np.ones(shape, dtype=DTYPE))

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name].value

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> list[str]:
        return list(self.entries)

    def grad(self, name: str) -> np.ndarray:
        return self.entries[name].grad

    def set_value(self, name: str, value) -> None:
        p = self.entries[name]
        value = np.asarray(value, dtype=DTYPE)
        if value.shape != p.value.shape:
            raise ShapeMismatch(f"{name}: expected shape {p.value.shape}, got {value.shape}")
        p.value[...] = value

    def zero_grad(self) -> None:
        for p in self.entries.values():
            p.grad[...] = 0.0

    def n_scalars(self) -> int:
        return sum(p.value.size for p in self.entries.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.entries.items()}

    def load(self, values: dict[str, np.ndarray]) -> None:
        missing = set(self.entries) - set(values)
        extra = set(values) - set(self.entries)
        if missing or extra:
            raise ShapeMismatch(
                f"parameter sets differ: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, value in values.items():
            self.set_value(name, value)


def add_attention_params(store: ParameterStore, prefix: str, d_in: int, hidden: int, rng) -> None:
    for part in ("q", "k", "v"):
        store.add_weight(f"{prefix}.w{part}", (d_in, hidden), rng)
        store.add_zeros(f"{prefix}.b{part}", (hidden,))
    store.add_weight(f"{prefix}.wo", (hidden, hidden), rng)
    store.add_zeros(f"{prefix}.bo", (hidden,))
