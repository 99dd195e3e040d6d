"""Independent oracles used by the test suite.

Everything here is deliberately naive (triple loops, per-entry finite
differences, one-line recurrences) so it cannot share a bug with the code
under test.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from theta_dse.diffcore import Tensor


def matmul_triple_loop(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def finite_difference_grad(loss_fn: Callable[[], float], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of a rebuildable scalar loss w.r.t. one parameter tensor."""
    base = param.values
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = base[idx]
        base[idx] = orig + h
        up = loss_fn()
        base[idx] = orig - h
        down = loss_fn()
        base[idx] = orig
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Elementwise relative error, skipping entries where both magnitudes < floor."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mask = (np.abs(a) >= floor) | (np.abs(b) >= floor)
    if not mask.any():
        return 0.0
    denom = np.maximum(np.abs(a[mask]), np.abs(b[mask]))
    return float(np.max(np.abs(a[mask] - b[mask]) / denom))


def ema_oracle(start: float, means: Sequence[float], alpha: float) -> list[float]:
    """Iterate r <- alpha*m + (1-alpha)*r, one value per input mean."""
    r = start
    out = []
    for m in means:
        r = alpha * m + (1.0 - alpha) * r
        out.append(r)
    return out


def l1_distance(a: Sequence[int], b: Sequence[int]) -> int:
    return sum(abs(x - y) for x, y in zip(a, b))


def hamming_distance(a: Sequence[int], b: Sequence[int]) -> int:
    return sum(1 for x, y in zip(a, b) if x != y)
