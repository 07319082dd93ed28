"""Pieces shared by M-Attack and the sequential baselines.

Both families must produce bit-identical numerical trajectories when the
categorical part is frozen, so they go through the same two functions here.
"""
from __future__ import annotations

import numpy as np

from .mahalanobis import GeneralizedCovariance, m_distance
from .model import MlpClassifier, loss_and_input_grad
from .numerics import l1_steepest_step, project_l1_ball


def penalized_objective(model: MlpClassifier, X, y: int, x0, lam: float,
                        cov: GeneralizedCovariance | None):
    """Per-row ``loss - lam * distance`` and its input gradient for a batch ``X``."""
    X = np.atleast_2d(X)
    loss, grad = loss_and_input_grad(model, X, np.full(len(X), y))
    if lam and cov is not None:
        dist, dgrad = m_distance(cov, X, x0)
        return loss - lam * dist, grad - lam * dgrad, loss, dist
    return loss, grad, loss, np.zeros(len(X))


def numeric_update(xn, xn0, grad_xn, step: float, epsilon1: float, coords: int = 1):
    """One l1 steepest-ascent step followed by projection back onto the budget ball."""
    moved = xn + l1_steepest_step(grad_xn, step, coords)
    return xn0 + project_l1_ball(moved - xn0, epsilon1)
