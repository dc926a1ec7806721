"""Central finite differences and backward-vs-numeric comparison."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .params import ParameterStore

# Denominator floor for the relative error; below it the comparison is
# effectively absolute (|a - n| <= tol * floor).
REL_FLOOR = 1e-6


def finite_diff_grad(
    f: Callable[[ParameterStore], float],
    store: ParameterStore,
    h: float = 1e-5,
    entries: dict[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Estimate d f / d theta by ``(f(θ+h) - f(θ-h)) / 2h`` per scalar entry.

    ``entries`` optionally restricts each parameter to a set of flat indices;
    unchecked entries are reported as NaN.  Values are restored exactly.
    """
    out = {}
    names = store.names() if entries is None else list(entries)
    for name in names:
        value = store[name]
        flat = value.reshape(-1)
        est = np.full(flat.shape, np.nan)
        idx = range(flat.size) if entries is None else entries[name]
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = f(store)
            flat[i] = orig - h
            down = f(store)
            flat[i] = orig
            est[i] = (up - down) / (2.0 * h)
        out[name] = est.reshape(value.shape)
    return out


def relative_error(analytic, numeric, floor: float = REL_FLOOR) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


@dataclass
class GroupResult:
    name: str
    checked: int
    size: int
    max_rel_error: float

    def passed(self, tol: float) -> bool:
        return self.max_rel_error <= tol


def pick_entries(grad: np.ndarray, limit: int, rng: np.random.Generator) -> np.ndarray:
    """Flat indices to check: everything when small, else a mix of the
    largest-gradient entries and a uniform sample."""
    flat = np.abs(grad.reshape(-1))
    if flat.size <= limit:
        return np.arange(flat.size)
    half = limit // 2
    top = np.argsort(-flat, kind="stable")[:half]
    rest = np.setdiff1d(np.arange(flat.size), top)
    sample = rng.choice(rest, size=limit - half, replace=False)
    return np.sort(np.concatenate([top, sample]))


def compare_gradients(
    loss_and_backward: Callable[[ParameterStore], float],
    loss_only: Callable[[ParameterStore], float],
    store: ParameterStore,
    h: float = 1e-5,
    limit: int = 256,
    seed: int = 0,
    corrupt: str | None = None,
    tolerance: float | None = None,
) -> list[GroupResult]:
    """Run backward once, then finite differences on selected entries.

    ``corrupt`` names a parameter whose analytic gradient is deliberately
    scaled, a negative control for the checker itself.

    With ``tolerance`` set, entries whose error exceeds a tenth of it are
    re-measured at ``h/10`` and ``h/100`` and the smallest error is kept.  A step that
    straddles a ReLU kink gives a wrong central difference at one ``h`` but not
    at the smaller ones; a wrong backward rule fails at every step size.
    """
    loss_and_backward(store)
    analytic = {name: store.grad(name).copy() for name in store}
    if corrupt is not None:
        analytic[corrupt] = analytic[corrupt] * 1.5 + 1e-3
    rng = np.random.default_rng(seed)
    chosen = {name: pick_entries(analytic[name], limit, rng) for name in store}
    numeric = finite_diff_grad(loss_only, store, h=h, entries=chosen)
    results = []
    for name in store:
        idx = chosen[name]
        want = analytic[name].reshape(-1)[idx]
        err = relative_error(want, numeric[name].reshape(-1)[idx])
        if tolerance is not None:
            for step in (h / 10, h / 100):
                bad = err > 0.1 * tolerance
                if not bad.any():
                    break
                again = finite_diff_grad(loss_only, store, h=step, entries={name: idx[bad]})[name]
                err[bad] = np.minimum(err[bad], relative_error(want[bad], again.reshape(-1)[idx[bad]]))
        results.append(GroupResult(name, len(idx), store[name].size, float(err.max(initial=0.0))))
    return results
