"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Dict, Tuple

import numpy as np


def numerical_gradient(f: Callable[[], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2.0 * eps)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor) over elements.

    ``floor`` keeps entries whose true gradient is zero from dividing
    finite-difference round-off by zero.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def grad_check(
    loss_fn: Callable[[], float],
    analytic: Dict[str, np.ndarray],
    arrays: Dict[str, np.ndarray],
    eps: float = 1e-5,
    floor: float = 1e-6,
) -> Tuple[float, Dict[str, float]]:
    """Compare analytic gradients against central differences.

    ``arrays`` maps names to the live arrays ``loss_fn`` reads (parameters
    and inputs); ``analytic`` holds their gradients under the same names.
    Returns the overall max relative error and a per-array breakdown.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    per = {}
    for name, arr in arrays.items():
        num = numerical_gradient(loss_fn, arr, eps)
        per[name] = relative_error(analytic[name], num, floor)
    return max(per.values()) if per else 0.0, per
