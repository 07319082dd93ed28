"""Sequential baselines: l1-PGD on the numerics, then either an exhaustive
search or a greedy pass over the most influential categorical features."""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .attack import AttackResult, _finish
from .data import Layout
from .errors import CapacityError, UsageError
from .mahalanobis import GeneralizedCovariance
from .model import MlpClassifier
from .objective import numeric_update, penalized_objective

_SEARCH_CHUNK = 4096
_NEAR_TIE = 1e-9


@dataclass(frozen=True)
class BaselineConfig:
    epsilon1: float = 0.6
    epsilon2: int = 3
    lam: float = 0.0
    step_num: float | None = None  # default epsilon1 / 10
    steps: int = 200
    seed: int = 0
    max_search_combinations: int = 100_000
    step_coords: int = 1

    def __post_init__(self):
        if not self.epsilon1 > 0:
            raise UsageError("epsilon1 must be positive")
        if self.epsilon2 < 0 or int(self.epsilon2) != self.epsilon2:
            raise UsageError("epsilon2 must be a non-negative integer")
        if self.lam < 0:
            raise UsageError("lambda must be non-negative")
        if self.steps < 0:
            raise UsageError("steps must be >= 0")
        if self.max_search_combinations < 1:
            raise UsageError("max_search_combinations must be >= 1")

    @property
    def step_value(self) -> float:
        return self.epsilon1 / 10.0 if self.step_num is None else float(self.step_num)


def l1_pgd(model: MlpClassifier, x0, y: int, layout: Layout, config: BaselineConfig,
           cov: GeneralizedCovariance | None = None, return_path: bool = False):
    """l1-PGD on the numeric coordinates with categoricals held at their originals.

    Returns the final standardized numerics, plus the per-step path (initial
    point included) when ``return_path`` is set.
    """
    x0 = np.asarray(x0, dtype=float)
    d_n = layout.d_n
    xn0 = x0[:d_n].copy()
    onehot0 = x0[d_n:].copy()
    xn = xn0.copy()
    path = [xn.copy()] if return_path else None
    for _ in range(config.steps):
        X = np.concatenate([xn, onehot0])
        _, g, _, _ = penalized_objective(model, X, y, x0, config.lam, cov)
        xn = numeric_update(xn, xn0, g[0, :d_n], config.step_value, config.epsilon1,
                            config.step_coords)
        if path is not None:
            path.append(xn.copy())
    if return_path:
        return xn, np.array(path)
    return xn


def _objectives(model, xn, cands, y, x0, lam, cov, layout) -> np.ndarray:
    X = np.hstack([np.broadcast_to(xn, (len(cands), layout.d_n)), layout.one_hot(cands)])
    return penalized_objective(model, X, y, x0, lam, cov)[0]


def rank_categorical_features(model: MlpClassifier, xn, x0, y: int, layout: Layout,
                              lam: float = 0.0, cov: GeneralizedCovariance | None = None):
    """Order categorical features by the best objective gain of changing only that feature.

    Returns a list of ``(feature_index, impact)`` sorted by impact descending,
    lower index first on ties. Numerics are fixed at ``xn``.
    """
    x_c = layout.argmax_blocks(np.asarray(x0)[layout.d_n:])
    if layout.d_c == 0:
        return []
    rows, owner = [], []
    for i, k in enumerate(layout.cat_sizes):
        for c in range(k):
            if c != x_c[i]:
                cand = x_c.copy()
                cand[i] = c
                rows.append(cand)
                owner.append(i)
    base = _objectives(model, xn, x_c[None, :], y, x0, lam, cov, layout)[0]
    vals = _objectives(model, xn, np.array(rows), y, x0, lam, cov, layout)
    owner = np.array(owner)
    impact = [float(np.max(vals[owner == i]) - base) for i in range(layout.d_c)]
    order = sorted(range(layout.d_c), key=lambda i: (-impact[i], i))
    return [(i, impact[i]) for i in order]


def _top_features(model, xn, x0, y, layout, config, cov):
    n_top = min(int(config.epsilon2), layout.d_c)
    ranking = rank_categorical_features(model, xn, x0, y, layout, config.lam, cov)
    return [i for i, _ in ranking[:n_top]]


def search_attack(model: MlpClassifier, x0, y: int, layout: Layout, config: BaselineConfig,
                  cov: GeneralizedCovariance | None = None) -> AttackResult:
    """l1-PGD, then every category combination over the top-``epsilon2`` features."""
    start = time.perf_counter()
    x0 = np.asarray(x0, dtype=float)
    x_c = layout.argmax_blocks(x0[layout.d_n:])
    xn = l1_pgd(model, x0, y, layout, config, cov)
    top = _top_features(model, xn, x0, y, layout, config, cov)
    sizes = [layout.cat_sizes[i] for i in top]
    total = math.prod(sizes)
    if total > config.max_search_combinations:
        raise CapacityError(
            f"search over features {top} needs {total} combinations, above the cap of "
            f"{config.max_search_combinations}; use the greedy baseline or raise the cap"
        )

    best_val = -np.inf
    short_c, short_v = [], []
    combos = itertools.product(*[range(k) for k in sizes])
    while True:
        chunk = list(itertools.islice(combos, _SEARCH_CHUNK))
        if not chunk:
            break
        cands = np.repeat(x_c[None, :], len(chunk), axis=0)
        if top:
            cands[:, top] = np.array(chunk, dtype=np.intp)
        vals = _objectives(model, xn, cands, y, x0, config.lam, cov, layout)
        keep = vals >= vals.max() - _NEAR_TIE
        short_c.append(cands[keep])
        short_v.append(vals[keep])
        best_val = max(best_val, float(vals.max()))
    # batched values can differ from single-row ones in the last bits, so the
    # near-best combinations are re-scored one at a time
    pool_v = np.concatenate(short_v)
    pool = np.concatenate(short_c)[pool_v >= best_val - _NEAR_TIE]
    scores = [float(_objectives(model, xn, c[None, :], y, x0, config.lam, cov, layout)[0])
              for c in pool]
    best = pool[int(np.argmax(scores))]
    return _finish("pgd-search", model, xn, best, x0, x_c, y, layout, config.lam, cov,
                   time.perf_counter() - start)


def greedy_attack(model: MlpClassifier, x0, y: int, layout: Layout, config: BaselineConfig,
                  cov: GeneralizedCovariance | None = None) -> AttackResult:
    """l1-PGD, then assign each top-ranked feature its best category in rank order."""
    start = time.perf_counter()
    x0 = np.asarray(x0, dtype=float)
    x_c = layout.argmax_blocks(x0[layout.d_n:])
    xn = l1_pgd(model, x0, y, layout, config, cov)
    cur = x_c.copy()
    for i in _top_features(model, xn, x0, y, layout, config, cov):
        cands = np.repeat(cur[None, :], layout.cat_sizes[i], axis=0)
        cands[:, i] = np.arange(layout.cat_sizes[i])
        vals = _objectives(model, xn, cands, y, x0, config.lam, cov, layout)
        cur = cands[int(np.argmax(vals))]
    return _finish("pgd-greedy", model, xn, cur, x0, x_c, y, layout, config.lam, cov,
                   time.perf_counter() - start)
