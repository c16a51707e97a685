"""NumPy fallback for the triplet hinge scatter kernel."""

import numpy as np


def hinge_scatter(D: np.ndarray, triplets: np.ndarray, margin: float):
    a, p, q = triplets[:, 0], triplets[:, 1], triplets[:, 2]
    raw = margin + D[a, p] - D[a, q]
    active = raw > 0.0
    h = np.where(active, raw, 0.0)
    G = np.zeros_like(D)
    np.add.at(G, (a[active], p[active]), 1.0)
    np.add.at(G, (a[active], q[active]), -1.0)
    return h, G, int(active.sum())
