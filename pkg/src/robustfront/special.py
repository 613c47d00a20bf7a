"""Inverse digamma function."""

import numpy as np
from scipy.special import digamma, polygamma

EULER_GAMMA = 0.5772156649015329
MAX_NEWTON_ITER = 30


def digamma_inverse(y: float, tol: float = 1e-14) -> float:
    """Return ``x > 0`` such that ``digamma(x) == y``.

    Newton's method on the digamma function, started from ``exp(y) + 1/2``
    when ``y >= -2.22`` and from ``-1 / (y + gamma)`` otherwise.  Both starts
    lie on the concave side of the root, so iterates stay positive.
    """
    y = float(y)
    if not np.isfinite(y):
        raise ValueError(f"digamma_inverse needs a finite argument, got {y}")
    x = np.exp(y) + 0.5 if y >= -2.22 else -1.0 / (y + EULER_GAMMA)
    for _ in range(MAX_NEWTON_ITER):
        step = (digamma(x) - y) / polygamma(1, x)
        x_new = x - step
        if x_new <= 0:
            x_new = 0.5 * x
        if abs(x_new - x) <= tol * x_new:
            return float(x_new)
        x = x_new
    return float(x)
