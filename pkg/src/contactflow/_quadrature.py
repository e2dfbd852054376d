"""Gauss-Legendre quadrature helpers (cached nodes, composite panels)."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_legendre


@lru_cache(maxsize=64)
def gl_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [-1, 1]."""
    x, w = roots_legendre(n)
    return x.copy(), w.copy()


def gl_interval(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [a, b]."""
    x, w = gl_rule(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def composite_panels(t_max: float, nodes_per_unit: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite rule on [0, t_max]: unit-length panels, GL nodes per panel.

    The final panel is shortened to end exactly at t_max.  Nodes are returned
    in increasing order.
    """
    n_full = int(np.floor(t_max))
    edges = list(range(n_full + 1))
    if edges[-1] < t_max:
        edges.append(t_max)
    ts, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = gl_interval(float(a), float(b), nodes_per_unit)
        ts.append(x)
        ws.append(w)
    return np.concatenate(ts), np.concatenate(ws)
