"""M-Attack: joint gradient search over numeric perturbations and per-feature
categorical distributions.

The numeric part ``x'_n`` moves by l1 steepest-ascent steps inside the l1
budget ball. Each categorical feature is relaxed into a distribution
``pi_i = softmax(logits_i)``; the expected loss over ``pi`` is estimated with
Gumbel-softmax draws and a straight-through gradient, and a hinged
cross-entropy term keeps ``pi`` close to the original categories. After the
loop, hard categories are sampled from ``pi``, candidates that change more
than ``epsilon2`` features are dropped (or repaired), and the candidate with
the highest objective wins.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Layout, MixedSample, MixedSchema, StandardizationStats, encode
from .errors import NumericError, UsageError
from .mahalanobis import GeneralizedCovariance, expected_m_distance, m_distance
from .model import MlpClassifier, predict
from .numerics import segment_softmax
from .objective import numeric_update, penalized_objective

LOGIT_CLAMP = 30.0
CE_PROB_FLOOR = 1e-6
INIT_CONFIDENCE = 1.0 - 1e-3


@dataclass(frozen=True)
class AttackConfig:
    epsilon1: float = 0.6
    epsilon2: int = 3
    lam: float = 0.0
    alpha_ce: float = 1.0
    zeta: float | None = None  # default epsilon2 * ln 2
    step_num: float | None = None  # default epsilon1 / 10
    gamma: float = 0.5
    steps: int = 200
    tau: float = 1.0
    mc_samples: int = 4
    final_samples: int = 32
    seed: int = 0
    straight_through: bool = True
    expected_distance: bool = True  # closed-form E[D] under pi instead of sampled distances
    pi_update: str = "mirror"  # "logit" ascent or "mirror" (gradient in pi, exponentiated)
    freeze_categoricals: bool = False
    step_coords: int = 1
    record_trace: bool = False
    record_path: bool = False

    def __post_init__(self):
        if not self.epsilon1 > 0:
            raise UsageError("epsilon1 must be positive")
        if self.epsilon2 < 0 or int(self.epsilon2) != self.epsilon2:
            raise UsageError("epsilon2 must be a non-negative integer")
        if self.lam < 0:
            raise UsageError("lambda must be non-negative")
        if self.steps < 0:
            raise UsageError("steps must be >= 0")
        if not self.tau > 0:
            raise UsageError("tau must be positive")
        if self.mc_samples < 1 or self.final_samples < 1:
            raise UsageError("mc_samples and final_samples must be >= 1")
        if self.step_num is not None and not self.step_num > 0:
            raise UsageError("step_num must be positive")
        if self.gamma < 0:
            raise UsageError("gamma must be non-negative")
        if self.pi_update not in ("logit", "mirror"):
            raise UsageError(f"pi_update must be 'logit' or 'mirror', got {self.pi_update!r}")

    @property
    def zeta_value(self) -> float:
        return self.epsilon2 * math.log(2.0) if self.zeta is None else float(self.zeta)

    @property
    def step_value(self) -> float:
        return self.epsilon1 / 10.0 if self.step_num is None else float(self.step_num)


@dataclass
class AttackResult:
    method: str
    adv_dense: np.ndarray
    adv_categories: tuple[int, ...]
    label: int
    loss: float
    objective: float
    m_distance: float
    l1_num_perturbation: float
    l0_cat_changes: int
    success: bool
    wall_time_secs: float
    flagged_ood: bool | None = None
    trace: list[dict] | None = None
    numeric_path: np.ndarray | None = field(default=None, repr=False)

    def record(self, layout: Layout, stats: StandardizationStats | None = None,
               schema: MixedSchema | None = None, **extra) -> dict:
        """JSON-ready dict. Numerics are reported in raw units when ``stats`` is given."""
        z = self.adv_dense[: layout.d_n]
        numerics = stats.inverse(z) if stats is not None else z
        cats = list(self.adv_categories)
        if schema is not None:
            cats = [schema.categorical_specs[i][1][c] for i, c in enumerate(cats)]
        out = {
            **extra,
            "method": self.method,
            "label": self.label,
            "success": bool(self.success),
            "flagged_ood": self.flagged_ood,
            "loss": float(self.loss),
            "objective": float(self.objective),
            "m_distance": float(self.m_distance),
            "l1_num_perturbation": float(self.l1_num_perturbation),
            "l0_cat_changes": int(self.l0_cat_changes),
            "wall_time_secs": float(self.wall_time_secs),
            "adv_numerics": [float(v) for v in numerics],
            "adv_categoricals": cats,
        }
        if self.trace is not None:
            out["trace"] = self.trace
        return out


class CategoricalDistribution:
    """Per-feature categorical distributions stored as one flat logit vector."""

    def __init__(self, logits, layout: Layout):
        self.logits = np.array(logits, dtype=float)
        self.layout = layout
        if self.logits.shape != (layout.cat_width,):
            raise ValueError("logit vector does not match the categorical layout")

    @classmethod
    def concentrated(cls, cats, layout: Layout, confidence: float = INIT_CONFIDENCE):
        """Distribution putting ``confidence`` mass on each original category."""
        logits = np.empty(layout.cat_width)
        for i, (s, k) in enumerate(zip(layout.block_starts, layout.cat_sizes)):
            logits[s:s + k] = math.log((1.0 - confidence) / (k - 1))
            logits[s + cats[i]] = math.log(confidence)
        return cls(logits, layout)

    def probs(self) -> np.ndarray:
        return segment_softmax(self.logits, self.layout.block_starts)

    def block(self, i: int) -> np.ndarray:
        s = self.layout.block_starts[i]
        return self.probs()[s:s + self.layout.cat_sizes[i]]

    def clamp(self) -> None:
        np.clip(self.logits, -LOGIT_CLAMP, LOGIT_CLAMP, out=self.logits)

    def copy(self) -> "CategoricalDistribution":
        return CategoricalDistribution(self.logits.copy(), self.layout)


def _ce_terms(pi: CategoricalDistribution, x_c):
    """Summed per-feature cross-entropy to the original categories and its logit gradient."""
    layout = pi.layout
    p = pi.probs()
    cols = layout.block_starts + np.asarray(x_c, dtype=np.intp)
    p_orig = p[cols]
    # the floor bounds the value only; the gradient still pulls back categories
    # whose original entry has collapsed below it
    total = float(-np.sum(np.log(np.maximum(p_orig, CE_PROB_FLOOR))))
    grad = p.copy()
    grad[cols] -= 1.0
    return total, grad


def ce_surrogate(pi: CategoricalDistribution, x_c, zeta: float) -> float:
    """Hinged cross-entropy ``[sum_i -log pi_i[x_c_i] - zeta]^+``."""
    total, _ = _ce_terms(pi, x_c)
    return max(total - zeta, 0.0)


def ce_surrogate_grad(pi: CategoricalDistribution, x_c, zeta: float):
    total, grad = _ce_terms(pi, x_c)
    if total - zeta > 0.0:
        return total - zeta, grad
    return 0.0, np.zeros_like(grad)


@dataclass
class GumbelDraw:
    relaxed: np.ndarray  # (S, W) relaxed one-hot blocks
    hard: np.ndarray  # (S, d_c) category indices
    hard_onehot: np.ndarray  # (S, W)


def gumbel_noise(rng, shape) -> np.ndarray:
    u = rng.random(shape)
    u = np.maximum(u, np.finfo(float).tiny)
    return -np.log(-np.log(u))


def gumbel_softmax_sample(pi: CategoricalDistribution, tau: float, rng,
                          n: int = 1, noise=None) -> GumbelDraw:
    """Draw ``n`` Gumbel-softmax samples from ``pi``.

    The hard index per feature is the argmax of the relaxed block, which is
    an exact sample from ``pi`` (Gumbel-max). ``noise`` may be supplied to
    freeze the draw.
    """
    layout = pi.layout
    g = gumbel_noise(rng, (n, layout.cat_width)) if noise is None else np.asarray(noise)
    relaxed = segment_softmax((pi.logits + g) / tau, layout.block_starts)
    hard = layout.argmax_blocks(relaxed)
    return GumbelDraw(relaxed, hard, layout.one_hot(hard))


def objective_q(model: MlpClassifier, x_n_prime, draw: GumbelDraw, y: int,
                pi: CategoricalDistribution, x0, x_c, config: AttackConfig,
                cov: GeneralizedCovariance | None = None):
    """Monte-Carlo estimate of ``Q = E[L - lam * D] - alpha * CE`` and its gradients.

    Returns ``(Q, grad_xn, grad_logits, parts)`` where ``parts`` holds the
    mean loss, CE surrogate and mean distance for tracing. With
    ``config.straight_through`` the model sees the hard one-hot samples and
    gradients flow back through the relaxed blocks; otherwise the relaxed
    blocks are fed forward directly. With ``config.expected_distance`` the
    distance term is the exact expectation under ``pi`` rather than an
    average over the draws.
    """
    layout = pi.layout
    d_n = layout.d_n
    S = len(draw.hard)
    cat_fwd = draw.hard_onehot if config.straight_through else draw.relaxed
    X = np.hstack([np.broadcast_to(x_n_prime, (S, d_n)), cat_fwd])
    exact_d = bool(config.expected_distance and config.lam and cov is not None)
    f, g, loss, dist = penalized_objective(model, X, y, x0, 0.0 if exact_d else config.lam, cov)
    grad_xn = g[:, :d_n].mean(axis=0)
    # gradient of the remaining terms with respect to pi itself
    grad_pi = np.zeros(layout.cat_width)
    f_mean = float(np.mean(f))
    if exact_d:
        p = pi.probs()
        e_dist, gd_xn, gd_pi = expected_m_distance(cov, x_n_prime, p, x0, layout)
        f_mean -= config.lam * e_dist
        grad_xn = grad_xn - config.lam * gd_xn
        grad_pi -= config.lam * gd_pi
        dist = np.array([e_dist])

    ce, ce_grad = ce_surrogate_grad(pi, x_c, config.zeta_value)
    Q = f_mean - config.alpha_ce * ce
    if not math.isfinite(Q):
        raise NumericError("objective Q became non-finite")

    u = g[:, d_n:]
    r = draw.relaxed
    ru = r * u
    sums = np.add.reduceat(ru, layout.block_starts, axis=1) if layout.d_c else ru
    inner = np.repeat(sums, layout.cat_sizes, axis=1)
    grad_logits = ((ru - r * inner) / config.tau).mean(axis=0) - config.alpha_ce * ce_grad
    if exact_d:
        grad_logits += _softmax_vjp(p, grad_pi, layout)
    parts = {"loss": float(np.mean(loss)), "ce": ce, "distance": float(np.mean(dist))}
    return Q, grad_xn, grad_logits, parts


def _softmax_vjp(p, v, layout):
    """Pull a gradient with respect to blockwise softmax outputs back to the logits."""
    pv = p * v
    return pv - p * np.repeat(np.add.reduceat(pv, layout.block_starts), layout.cat_sizes)


def _evaluate(model, xn, cand, y, x0, lam, cov, layout):
    X = np.hstack([np.broadcast_to(xn, (len(cand), layout.d_n)), layout.one_hot(cand)])
    f, _, loss, dist = penalized_objective(model, X, y, x0, lam, cov)
    return f


def _repair(model, xn, cands, x_c, budget, y, x0, lam, cov, layout):
    """Revert changed features, least useful first, until each candidate
    changes at most ``budget`` features."""
    cands = cands.copy()
    d_c = layout.d_c
    while True:
        over = np.nonzero((cands != x_c).sum(axis=1) > budget)[0]
        if not len(over):
            return cands
        # one trial per (candidate, feature): that feature put back to its original
        trials = np.repeat(cands[over], d_c, axis=0)
        feat = np.tile(np.arange(d_c), len(over))
        trials[np.arange(len(trials)), feat] = x_c[feat]
        f_rev = _evaluate(model, xn, trials, y, x0, lam, cov, layout).reshape(len(over), d_c)
        # reverting an unchanged feature is not a move
        f_rev[cands[over] == x_c] = -np.inf
        # drop the feature whose reversion keeps the objective highest
        pick = np.argmax(f_rev, axis=1)
        cands[over, pick] = x_c[pick]


def attack_encoded(model: MlpClassifier, x0, y: int, layout: Layout,
                   config: AttackConfig, cov: GeneralizedCovariance | None = None,
                   rng=None) -> AttackResult:
    """Run M-Attack on an encoded clean sample ``x0`` with true label ``y``."""
    start = time.perf_counter()
    x0 = np.asarray(x0, dtype=float)
    d_n = layout.d_n
    xn0 = x0[:d_n].copy()
    x_c = layout.argmax_blocks(x0[d_n:])
    onehot0 = x0[d_n:].copy()
    rng = np.random.default_rng(config.seed) if rng is None else rng
    if cov is None and config.lam:
        raise UsageError("lambda > 0 requires a fitted covariance")

    frozen = config.freeze_categoricals or layout.d_c == 0
    pi = CategoricalDistribution.concentrated(x_c, layout)
    xn = xn0.copy()
    step = config.step_value
    trace = [] if config.record_trace else None
    path = [xn.copy()] if config.record_path else None

    for _ in range(config.steps):
        if frozen:
            X = np.concatenate([xn, onehot0])
            f, g, loss, dist = penalized_objective(model, X, y, x0, config.lam, cov)
            grad_xn = g[0, :d_n]
            if trace is not None:
                trace.append({"Q": float(f[0]), "loss": float(loss[0]), "ce": 0.0,
                              "distance": float(dist[0])})
            xn = numeric_update(xn, xn0, grad_xn, step, config.epsilon1, config.step_coords)
        else:
            draw = gumbel_softmax_sample(pi, config.tau, rng, config.mc_samples)
            Q, grad_xn, grad_logits, parts = objective_q(
                model, xn, draw, y, pi, x0, x_c, config, cov)
            if trace is not None:
                trace.append({"Q": Q, **parts})
            xn = numeric_update(xn, xn0, grad_xn, step, config.epsilon1, config.step_coords)
            if config.pi_update == "mirror":
                grad_logits = grad_logits / pi.probs()
            pi.logits += config.gamma * grad_logits
            pi.clamp()
        if path is not None:
            path.append(xn.copy())

    if frozen or config.steps == 0:
        best = x_c.copy()
    else:
        draw = gumbel_softmax_sample(pi, config.tau, rng, config.final_samples)
        mode = layout.argmax_blocks(pi.logits)
        cand = np.unique(np.vstack([draw.hard, mode, x_c]), axis=0)
        over = (cand != x_c).sum(axis=1) > config.epsilon2
        if over.any():
            fixed = _repair(model, xn, cand[over], x_c, config.epsilon2, y, x0, config.lam,
                            cov, layout)
            cand = np.unique(np.vstack([cand[~over], fixed]), axis=0)
        f = _evaluate(model, xn, cand, y, x0, config.lam, cov, layout)
        best = cand[int(np.argmax(f))]

    result = _finish("mattack", model, xn, best, x0, x_c, y, layout, config.lam, cov,
                     time.perf_counter() - start)
    result.trace = trace
    if path is not None:
        result.numeric_path = np.array(path)
    return result


def _finish(method, model, xn, cats, x0, x_c, y, layout, lam, cov, elapsed) -> AttackResult:
    adv = np.concatenate([xn, layout.one_hot(cats)])
    f, _, loss, _ = penalized_objective(model, adv[None, :], y, x0, lam, cov)
    objective, loss = float(f[0]), float(loss[0])
    dist = m_distance(cov, adv, x0)[0] if cov is not None else 0.0
    return AttackResult(
        method=method,
        adv_dense=adv,
        adv_categories=tuple(int(c) for c in cats),
        label=int(y),
        loss=float(loss),
        objective=float(objective),
        m_distance=float(dist),
        l1_num_perturbation=float(np.sum(np.abs(xn - x0[: layout.d_n]))),
        l0_cat_changes=int(np.sum(np.asarray(cats) != x_c)),
        success=predict(model, adv) != y,
        wall_time_secs=elapsed,
    )


def attack(model: MlpClassifier, sample: MixedSample, config: AttackConfig,
           maha: GeneralizedCovariance | None = None,
           clean_stats: StandardizationStats | None = None,
           schema: MixedSchema | None = None) -> AttackResult:
    """Attack a raw :class:`MixedSample` (encoded with ``clean_stats``/``schema``)."""
    if clean_stats is None or schema is None:
        raise UsageError("attack() on a raw sample needs standardization stats and a schema")
    if sample.label is None:
        raise UsageError("sample has no label")
    x0 = encode(sample, clean_stats, schema)
    return attack_encoded(model, x0, sample.label, schema.layout, config, maha)
