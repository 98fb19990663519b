"""Pure numpy versions of the hot loops; used when the compiled module is absent."""

import numpy as np


def envelope_min(points, a, foci, heights, eps):
    """Pointwise minimum over sheets and the lowest index attaining it."""
    points = np.ascontiguousarray(points, dtype=float)
    k = eps * eps - 1.0
    best = np.full(points.shape[0], np.inf)
    index = np.zeros(points.shape[0], dtype=np.int64)
    for j in range(a.shape[0]):
        r = points - foci[j]
        r2 = np.einsum("ij,ij->i", r, r)
        h = heights[j] - a[j] * eps - np.sqrt(a[j] * a[j] + r2 / k)
        better = h < best
        best[better] = h[better]
        index[better] = j
    return best, index


def capture_flux(r2, weights, a, height, eps, lower, upper):
    """Weight captured by one sheet: strictly below ``lower`` and not above ``upper``."""
    k = eps * eps - 1.0
    h = height - a * eps - np.sqrt(a * a + r2 / k)
    return float(weights[(h < lower) & (h <= upper)].sum())
