"""Generalized covariance of mixed-type encoded data and the mixed Mahalanobis
distance built on its truncated pseudo-inverse.

The covariance is the centred cross-product ``Xc.T @ Xc / (N - 1)`` of the
encoded matrix (z-scored numerics plus one-hot blocks). One-hot blocks make
it rank deficient, so the inverse keeps only eigenpairs above a relative
cutoff.

Sign convention: for a numeric column ``i`` and a one-hot column ``j`` the
matrix entry equals ``N0 N1 / (N (N-1)) * (mean1 - mean0)``, and for two
one-hot columns ``(N00 N11 - N10 N01) / (N (N-1))``. :func:`closed_form_entry`
evaluates the textbook forms with the opposite sign, ``(mean0 - mean1)`` and
``(N10 N01 - N00 N11)``; they agree with the matrix in absolute value only.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, UsageError
from .numerics import sym_eigen

RELATIVE_CUTOFF = 1e-6
MAGIC = b"MXCOV\x00\x00\x01"
VERSION = 1
_HEADER = struct.Struct("<8sIII")


@dataclass(frozen=True)
class GeneralizedCovariance:
    sigma: np.ndarray
    pseudo_inverse: np.ndarray
    rank: int
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    mean: np.ndarray

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "GeneralizedCovariance":
        eye = np.eye(dim)
        return cls(eye, eye.copy(), dim, np.ones(dim), eye.copy(), np.zeros(dim))


def fit_covariance(encoded, max_rank: int | None = None) -> GeneralizedCovariance:
    """Fit the generalized covariance on clean encoded rows (``N x D``)."""
    X = np.asarray(encoded, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise UsageError("fit_covariance needs at least 2 encoded rows")
    mean = X.mean(axis=0)
    Xc = X - mean
    sigma = Xc.T @ Xc / (X.shape[0] - 1)
    sigma = 0.5 * (sigma + sigma.T)
    eig = sym_eigen(sigma)
    vals, vecs = eig.eigenvalues, eig.eigenvectors
    top = vals[0] if len(vals) else 0.0
    keep = vals > RELATIVE_CUTOFF * top if top > 0 else np.zeros(len(vals), dtype=bool)
    m = int(keep.sum())
    if max_rank is not None:
        m = min(m, int(max_rank))
    V = vecs[:, :m]
    pinv = (V / vals[:m]) @ V.T
    pinv = 0.5 * (pinv + pinv.T)
    return GeneralizedCovariance(sigma, pinv, m, vals, vecs, mean)


def closed_form_entry(case: str, **kw) -> float:
    """Evaluate one covariance entry from summary counts/means.

    ``case="num-num"``: pass ``a`` and ``b`` (two numeric columns).
    ``case="num-cat"``: pass ``n0, n1, mean0, mean1`` where ``mean0``/``mean1``
    are the numeric's averages over rows whose indicator column is 0/1.
    ``case="cat-cat"``: pass ``n00, n01, n10, n11`` (joint indicator counts).

    The two mixed cases use the textbook sign, the negation of the centred
    cross-product (see module docstring). Degenerate inputs where one side
    has no rows give 0 and a ``RuntimeWarning``.
    """
    if case == "num-num":
        a = np.asarray(kw["a"], dtype=float)
        b = np.asarray(kw["b"], dtype=float)
        if len(a) < 2:
            raise UsageError("num-num case needs at least 2 rows")
        return float(np.sum((a - a.mean()) * (b - b.mean())) / (len(a) - 1))
    if case == "num-cat":
        n0, n1 = int(kw["n0"]), int(kw["n1"])
        n = n0 + n1
        if n0 == 0 or n1 == 0:
            warnings.warn("num-cat entry with an empty indicator side", RuntimeWarning)
            return 0.0
        return n0 * n1 / (n * (n - 1)) * (float(kw["mean0"]) - float(kw["mean1"]))
    if case == "cat-cat":
        n00, n01, n10, n11 = (int(kw[k]) for k in ("n00", "n01", "n10", "n11"))
        n = n00 + n01 + n10 + n11
        if n < 2 or (n00 + n01) == 0 or (n10 + n11) == 0 or (n00 + n10) == 0 or (n01 + n11) == 0:
            warnings.warn("cat-cat entry with a constant indicator column", RuntimeWarning)
            return 0.0
        return (n10 * n01 - n00 * n11) / (n * (n - 1))
    raise UsageError(f"unknown covariance case {case!r}")


def m_distance(cov: GeneralizedCovariance, x_prime, x):
    """Mixed Mahalanobis distance ``d.T P d`` with ``d = x' - x`` and its gradient ``2 P d``.

    Accepts single vectors or row batches (broadcast against ``x``).
    """
    d = np.asarray(x_prime, dtype=float) - np.asarray(x, dtype=float)
    Pd = d @ cov.pseudo_inverse
    dist = np.sum(d * Pd, axis=-1)
    grad = 2.0 * Pd
    if np.ndim(dist) == 0:
        return float(dist), grad
    return dist, grad


def expected_m_distance(cov: GeneralizedCovariance, x_n_prime, probs, x, layout):
    """Expected distance when each categorical block of ``x'`` is one-hot drawn
    independently from ``probs``.

    With ``d = x' - x``, ``E[D] = E[d].T P E[d] + sum_b tr(P_bb Cov_b)`` where
    ``Cov_b = diag(pi_b) - pi_b pi_b.T`` is the one-hot covariance of block ``b``.
    Returns ``(value, grad_xn, grad_probs)``.
    """
    P = cov.pseudo_inverse
    d_n = layout.d_n
    m = np.concatenate([np.asarray(x_n_prime, dtype=float), np.asarray(probs, dtype=float)])
    m = m - np.asarray(x, dtype=float)
    Pm = P @ m
    p = np.asarray(probs, dtype=float)
    owner = np.repeat(np.arange(layout.d_c), layout.cat_sizes)
    P_blk = P[d_n:, d_n:] * (owner[:, None] == owner[None, :])
    diag = np.diag(P)[d_n:]
    P_blk_p = P_blk @ p
    value = float(m @ Pm + diag @ p - p @ P_blk_p)
    return value, 2.0 * Pm[:d_n], 2.0 * Pm[d_n:] + diag - 2.0 * P_blk_p


def population_distance(cov: GeneralizedCovariance, x, mean=None):
    """Distance of ``x`` to the clean-data centre; diagnostic only."""
    mu = cov.mean if mean is None else np.asarray(mean, dtype=float)
    return m_distance(cov, x, mu)[0]


def save(cov: GeneralizedCovariance, path) -> None:
    """Header (magic, version, D, m) then row-major f64 sigma, eigenvalues,
    eigenvectors and column means."""
    D = cov.dim
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, D, cov.rank))
        for a in (cov.sigma, cov.eigenvalues, cov.eigenvectors, cov.mean):
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load(path) -> GeneralizedCovariance:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated covariance header")
    magic, version, D, m = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: not a covariance file (bad magic)")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported covariance version {version}")
    expected = _HEADER.size + 8 * (2 * D * D + 2 * D)
    if len(raw) != expected or m > D:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    off = _HEADER.size

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        a = np.frombuffer(raw, dtype="<f8", count=count, offset=off).astype(float).reshape(shape)
        off += 8 * count
        return a

    sigma, vals, vecs, mean = take((D, D)), take((D,)), take((D, D)), take((D,))
    V = vecs[:, :m]
    pinv = (V / vals[:m]) @ V.T
    pinv = 0.5 * (pinv + pinv.T)
    return GeneralizedCovariance(sigma, pinv, m, vals, vecs, mean)
