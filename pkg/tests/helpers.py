"""Small shared utilities for the test suite."""

import numpy as np


def wrap_diff(a, b):
    """Signed torus difference a - b folded into [-1/2, 1/2)."""
    return (np.asarray(a) - np.asarray(b) + 0.5) % 1.0 - 0.5


def interior_points(flow, n, seed, margin=1e-3):
    """n invariant-measure samples away from discontinuities and the roof.

    Oversamples and filters; callers get exactly n points (the acceptance
    fraction is high enough at the default margin).
    """
    batch = flow.sample_invariant(seed, 6 * n)
    x, y, z = batch.x, batch.y, batch.z
    tau = flow.roof.tau_arrays(x, y, batch.piece_id)
    dist = flow.min_distance_to_discontinuity(x, y)
    ok = (dist > margin) & (z > margin) & (z < tau - margin)
    idx = np.nonzero(ok)[0]
    assert idx.size >= n, f"only {idx.size} interior points at margin {margin}"
    idx = idx[:n]
    return x[idx], y[idx], z[idx]
