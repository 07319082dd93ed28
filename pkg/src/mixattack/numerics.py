"""Numerical kernels shared by the attacks, the covariance model and the KDE."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError


def project_l1_ball(v, radius: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto the l1 ball of the given radius.

    Solves ``min_w ||w - v||_2  s.t.  ||w||_1 <= radius`` exactly by sorting
    ``|v|`` and soft-thresholding (Duchi et al., ICML 2008). O(n log n).

    Parameters
    ----------
    v : (n,) array
        Offset from the ball's centre. Callers add the centre back.
    radius : float
        Ball radius, strictly positive.
    """
    v = np.asarray(v, dtype=float)
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if not np.all(np.isfinite(v)):
        raise NumericError("project_l1_ball received non-finite input")
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, len(u) + 1)
    rho = np.nonzero(u * ks > css - radius)[0][-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    return np.sign(v) * np.maximum(a - theta, 0.0)


def l1_steepest_step(gradient, step: float, k: int = 1) -> np.ndarray:
    """Maximiser of ``v @ gradient`` over ``||v||_1 <= step``.

    With ``k == 1`` this is the exact solution: the whole budget goes to the
    coordinate with the largest ``|g|`` (lowest index on ties). ``k > 1``
    spreads ``step / k`` over the top-k coordinates, which is a heuristic and
    no longer optimal. A zero gradient yields a zero step.
    """
    g = np.asarray(gradient, dtype=float)
    if not np.all(np.isfinite(g)):
        raise NumericError("l1_steepest_step received a non-finite gradient")
    if k < 1:
        raise ValueError("k must be >= 1")
    out = np.zeros_like(g)
    if g.size == 0:
        return out
    a = np.abs(g)
    if k == 1:
        j = int(np.argmax(a))
        if a[j] > 0:
            out[j] = step * np.sign(g[j])
        return out
    order = np.argsort(-a, kind="stable")[:k]
    order = order[a[order] > 0]
    out[order] = (step / k) * np.sign(g[order])
    return out


@dataclass(frozen=True)
class SymmetricEigen:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # column j pairs with eigenvalues[j]
    sweeps: int = 0


def sym_eigen(A, tol: float = 1e-12, max_sweeps: int = 100) -> SymmetricEigen:
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    The input is symmetrised as ``(A + A.T) / 2``. Sweeps visit the upper
    triangle row by row, so the result is fully deterministic. Iteration stops
    once the largest off-diagonal magnitude drops below ``tol * max|A|``.
    """
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NumericError("sym_eigen received non-finite entries")
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    V = np.eye(n)
    scale = np.abs(A).max() if n else 0.0
    threshold = tol * scale
    iu = np.triu_indices(n, 1)

    sweeps = 0
    while True:
        off = np.abs(A[iu]).max() if n > 1 else 0.0
        if off <= threshold:
            break
        if sweeps >= max_sweeps:
            raise NumericError(
                f"Jacobi eigensolver did not converge in {max_sweeps} sweeps "
                f"(max off-diagonal {off:.3e}, target {threshold:.3e})"
            )
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= threshold * 1e-3:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J = I except J[p,p]=J[q,q]=c, J[p,q]=s, J[q,p]=-s
                colp = A[:, p].copy()
                colq = A[:, q]
                A[:, p] = c * colp - s * colq
                A[:, q] = s * colp + c * colq
                rowp = A[p, :].copy()
                rowq = A[q, :]
                A[p, :] = c * rowp - s * rowq
                A[q, :] = s * rowp + c * rowq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q]
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq

    vals = np.diag(A).copy()
    order = np.argsort(-vals, kind="stable")
    return SymmetricEigen(vals[order], V[:, order], sweeps)


def log_sum_exp(values, axis=None):
    x = np.asarray(values, dtype=float)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def segment_softmax(z: np.ndarray, starts: np.ndarray) -> np.ndarray:
    """Softmax applied independently to contiguous segments of the last axis.

    ``starts`` lists the first index of each segment; segments run to the next
    start (or the end of the axis).
    """
    z = np.asarray(z, dtype=float)
    if z.shape[-1] == 0:
        return z.copy()
    sizes = np.diff(np.append(starts, z.shape[-1]))
    m = np.repeat(np.maximum.reduceat(z, starts, axis=-1), sizes, axis=-1)
    e = np.exp(z - m)
    s = np.repeat(np.add.reduceat(e, starts, axis=-1), sizes, axis=-1)
    return e / s
