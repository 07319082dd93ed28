"""Independent reference implementations shared by the unit and acceptance tests."""
import itertools

import numpy as np


def theta_scan_projection(v, radius, grid=20001):
    """Euclidean projection onto the l1 ball by scanning soft-threshold levels.

    The smallest feasible level on a fine grid brackets the exact one, which
    bisection then pins down.
    """
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    ts = np.linspace(0.0, a.max(), grid)
    mass = np.maximum(a[None, :] - ts[:, None], 0.0).sum(axis=1)
    hi = ts[np.argmax(mass <= radius)]
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.maximum(a - mid, 0.0).sum() > radius:
            lo = mid
        else:
            hi = mid
    return np.sign(v) * np.maximum(a - hi, 0.0)


def best_signed_coordinate(g, step):
    """Largest first-order gain over every +/- step move along one coordinate."""
    return max(s * step * gi for gi, s in itertools.product(g, (-1.0, 1.0)))


def naive_covariance(X):
    """Two-pass centred cross-product with explicit loops."""
    N, D = X.shape
    mu = [sum(X[:, j]) / N for j in range(D)]
    S = np.empty((D, D))
    for i in range(D):
        for j in range(D):
            S[i, j] = sum((X[r, i] - mu[i]) * (X[r, j] - mu[j]) for r in range(N)) / (N - 1)
    return S


def central_difference(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        out[j] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def relative_error(analytic, reference, floor=1e-8):
    """Largest entrywise error scaled by the largest reference entry."""
    analytic, reference = np.asarray(analytic), np.asarray(reference)
    return float(np.max(np.abs(analytic - reference)) / max(np.max(np.abs(reference)), floor))
