"""Independent reference implementations used to check the real code.

Everything here is written the slow, obvious way (plain loops, direct sums)
and must stay independent of the package's own code paths.
"""

from __future__ import annotations

import numpy as np


def central_diff_grad(fn, x, step=1e-4):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        grad[i] = (fn(hi) - fn(lo)) / (2.0 * step)
    return grad


def relative_error(a, b, floor=1.0):
    """Elementwise |a-b| / max(floor, |a|, |b|)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
    return np.abs(a - b) / denom


def exhaustive_best_split(
    values,
    missing,
    grads,
    hess,
    reg_lambda=0.0,
    gamma=0.0,
    min_child_weight=0.0,
    min_samples_leaf=1,
):
    """Enumerate every (feature, midpoint threshold, default side) candidate.

    Returns (feature, threshold, gain, default_left) for the best split under
    the ranking: gain desc, feature asc, threshold asc, default-left before
    default-right; or None when no candidate has gain > 0.
    """
    values = np.asarray(values, dtype=float)
    missing = np.asarray(missing, dtype=bool)
    grads = np.asarray(grads, dtype=float)
    hess = np.asarray(hess, dtype=float)
    n, d = values.shape
    g_total = 0.0
    h_total = 0.0
    for i in range(n):
        g_total += grads[i]
        h_total += hess[i]
    parent = (g_total * g_total) / (h_total + reg_lambda)

    best = None
    for f in range(d):
        present = sorted({values[i, f] for i in range(n) if not missing[i, f]})
        for a, b in zip(present, present[1:]):
            thr = 0.5 * (a + b)
            for default_left in (True, False):
                gl = 0.0
                hl = 0.0
                nl = 0
                for i in range(n):
                    if missing[i, f]:
                        goes_left = default_left
                    else:
                        goes_left = values[i, f] < thr
                    if goes_left:
                        gl += grads[i]
                        hl += hess[i]
                        nl += 1
                gr = g_total - gl
                hr = h_total - hl
                nr = n - nl
                if hl < min_child_weight or hr < min_child_weight:
                    continue
                if nl < min_samples_leaf or nr < min_samples_leaf:
                    continue
                gain = (
                    0.5
                    * (
                        (gl * gl) / (hl + reg_lambda)
                        + (gr * gr) / (hr + reg_lambda)
                        - parent
                    )
                    - gamma
                )
                if best is None or gain > best[2]:
                    best = (f, thr, gain, default_left)
    if best is None or best[2] <= 0.0:
        return None
    return best
