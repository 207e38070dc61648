"""Central finite-difference checks for autodiff gradients."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from . import tensor as T
from .tensor import Tensor


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def _eval(loss_fn, record: bool):
    with T.no_grad():
        if not record:
            return loss_fn().item(), None
        with T.record_kinks() as kinks:
            value = loss_fn().item()
        return value, kinks


def _same_pattern(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def numeric_partial(loss_fn: Callable[[], Tensor], param: Tensor, index, eps: float = 1e-4,
                    smooth_only: bool = False) -> float | None:
    """``(f(x + eps) - f(x - eps)) / (2 eps)`` for a single entry of ``param``.

    With ``smooth_only`` returns ``None`` when a relu or abs changes sign
    between the two evaluations (the secant then spans a kink).
    """
    orig = param.data[index]
    try:
        param.data[index] = orig + eps
        up, k_up = _eval(loss_fn, smooth_only)
        param.data[index] = orig - eps
        down, k_down = _eval(loss_fn, smooth_only)
    finally:
        param.data[index] = orig
    if smooth_only and not _same_pattern(k_up, k_down):
        return None
    return (up - down) / (2 * eps)


def check_gradients(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor], samples: int,
                    rng: np.random.Generator, eps: float = 1e-4, smooth_only: bool = True,
                    max_draws: int = 50, skipped: list | None = None) -> list[tuple[str, tuple, float, float]]:
    """Compare analytic and numeric partials on ``samples`` random parameter entries.

    Entries are spread across tensors round-robin.  When ``smooth_only`` is
    set, an entry whose central difference straddles a kink is redrawn; a
    tensor that yields no kink-free entry in ``max_draws`` draws is dropped
    from the rotation (and its name appended to ``skipped``).  Returns
    ``(name, index, analytic, numeric)`` tuples.
    """
    for p in params.values():
        p.zero_grad()
    T.backward(loss_fn())
    names = sorted(params)
    out = []
    k = 0
    while len(out) < samples and names:
        name = names[k % len(names)]
        p = params[name]
        for _ in range(max_draws):
            index = tuple(int(rng.integers(0, n)) for n in p.data.shape)
            numeric = numeric_partial(loss_fn, p, index, eps, smooth_only)
            if numeric is not None:
                break
        else:
            names.remove(name)
            if skipped is not None:
                skipped.append(name)
            continue
        k += 1
        analytic = 0.0 if p.grad is None else float(p.grad[index])
        out.append((name, index, analytic, numeric))
    return out
