"""Product-Gaussian kernel density estimate over encoded clean data, used as
an out-of-distribution detector: samples scoring below the 10th percentile
of clean log-likelihoods are flagged."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, UsageError
from .numerics import log_sum_exp

BANDWIDTH_FLOOR = 1e-3
DEFAULT_CAP = 2000
FLAG_PERCENTILE = 10.0
MAGIC = b"MXKDE\x00\x00\x01"
VERSION = 1
_HEADER = struct.Struct("<8sIIIBd")


@dataclass(frozen=True)
class KdeModel:
    reference_points: np.ndarray  # (M, D)
    bandwidths: np.ndarray  # (D,)
    threshold: float | None = None

    @property
    def calibrated(self) -> bool:
        return self.threshold is not None


def fit_kde(encoded_train, cap: int = DEFAULT_CAP, seed: int = 0) -> KdeModel:
    """Subsample up to ``cap`` reference rows and set Scott bandwidths
    ``h_j = std_j * M ** (-1 / (D + 4))`` (floored at 1e-3)."""
    X = np.asarray(encoded_train, dtype=float)
    if X.ndim != 2 or len(X) < 2:
        raise UsageError("fit_kde needs at least 2 training rows")
    if np.all(X == X[0]):
        raise UsageError("fit_kde: all training rows are identical")
    M = min(int(cap), len(X))
    idx = np.sort(np.random.default_rng(seed).choice(len(X), size=M, replace=False))
    ref = X[idx]
    D = X.shape[1]
    std = ref.std(axis=0, ddof=1) if M > 1 else np.zeros(D)
    h = np.maximum(std * M ** (-1.0 / (D + 4)), BANDWIDTH_FLOOR)
    return KdeModel(ref, h)


def log_likelihood(kde: KdeModel, x, chunk: int = 64):
    """Log density of one point or a batch of points under the KDE."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    Q = x[None, :] if single else x
    ref = kde.reference_points / kde.bandwidths
    M, D = ref.shape
    const = -math.log(M) - np.sum(np.log(kde.bandwidths)) - 0.5 * D * math.log(2 * math.pi)
    out = np.empty(len(Q))
    for s in range(0, len(Q), chunk):
        q = Q[s:s + chunk] / kde.bandwidths
        diff = q[:, None, :] - ref[None, :, :]
        out[s:s + chunk] = log_sum_exp(-0.5 * np.einsum("qmd,qmd->qm", diff, diff), axis=1)
    out += const
    return float(out[0]) if single else out


def calibrate_threshold(kde: KdeModel, encoded_clean_eval,
                        percentile: float = FLAG_PERCENTILE) -> KdeModel:
    X = np.asarray(encoded_clean_eval, dtype=float)
    if X.ndim != 2 or len(X) < 10:
        raise UsageError("calibrate_threshold needs at least 10 clean samples")
    ll = log_likelihood(kde, X)
    return replace(kde, threshold=float(np.percentile(ll, percentile)))


def is_flagged(kde: KdeModel, x):
    """True where the log-likelihood is strictly below the calibrated threshold."""
    if not kde.calibrated:
        raise UsageError("KDE detector has not been calibrated")
    ll = log_likelihood(kde, x)
    return bool(ll < kde.threshold) if np.ndim(ll) == 0 else ll < kde.threshold


def save(kde: KdeModel, path) -> None:
    """Header (magic, version, M, D, calibrated flag, threshold) then row-major
    f64 reference points and bandwidths."""
    M, D = kde.reference_points.shape
    thr = kde.threshold if kde.calibrated else 0.0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, M, D, int(kde.calibrated), thr))
        fh.write(np.ascontiguousarray(kde.reference_points, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(kde.bandwidths, dtype="<f8").tobytes())


def load(path) -> KdeModel:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated detector header")
    magic, version, M, D, calibrated, thr = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: not a detector file (bad magic)")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported detector version {version}")
    expected = _HEADER.size + 8 * (M * D + D)
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    ref = np.frombuffer(raw, dtype="<f8", count=M * D, offset=_HEADER.size)
    h = np.frombuffer(raw, dtype="<f8", count=D, offset=_HEADER.size + 8 * M * D)
    return KdeModel(ref.astype(float).reshape(M, D), h.astype(float),
                    float(thr) if calibrated else None)
