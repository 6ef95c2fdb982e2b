"""Central finite differences, used as an independent oracle for backward."""
from __future__ import annotations

from typing import Callable

import numpy as np


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 0.0) -> float:
    """max |a - n| / max(max |a|, max |n|, floor); 0 when the denominator is 0.

    ``floor`` keeps tensors whose true gradient is exactly zero (a key bias
    under softmax, say) from turning rounding noise into a large ratio.
    """
    denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    if denom == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / denom)
