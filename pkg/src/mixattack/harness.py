"""Desk-scale experiment campaigns.

E1 scores the evaluation rows before and after M-Attack (at a high and at
zero lambda) under the KDE and bins the three cohorts on shared edges. E2 runs every
method over a budget grid on correctly classified test rows and reports
success (flipped and not flagged), flag rate, loss, distance and wall time.
E3 sweeps lambda and reports mean loss against mean M-distance per method.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import ood
from .attack import AttackConfig, attack_encoded
from .baselines import BaselineConfig, greedy_attack, search_attack
from .data import (MixedSchema, StandardizationStats, encode_dataset, fit_standardization,
                   generate_synthetic, load_csv, load_schema, train_test_split)
from .errors import UsageError
from .mahalanobis import GeneralizedCovariance, fit_covariance
from .model import MlpClassifier, TrainConfig, TrainReport, predict, train

log = logging.getLogger(__name__)

METHODS = ("mattack", "pgd-search", "pgd-greedy")
L1_SLACK = 1e-9
_TIMING_KEYS = ("mean_wall_time_secs",)
# command-line spellings accepted in experiment config files
_FLAG_ALIASES = {"n_eval": "n_eval_samples", "out_dir": "output_dir"}


@dataclass(frozen=True)
class ExperimentConfig:
    data: str | None = None  # CSV path; synthetic data when unset
    schema: str | None = None
    synthetic: dict = field(default_factory=dict)  # SyntheticSpec overrides
    split: float = 0.8
    seed: int = 0
    methods: tuple[str, ...] = METHODS
    epsilon1_grid: tuple[float, ...] = (0.3, 0.6)
    epsilon2_grid: tuple[int, ...] = (2, 3, 4)
    lambda_grid: tuple[float, ...] = (0.0, 6.0)
    n_eval_samples: int = 100
    steps: int = 200
    epochs: int = 20
    kde_cap: int = ood.DEFAULT_CAP
    hist_epsilon1: float = 0.6
    hist_epsilon2: int = 3
    hist_lambda: float = 6.0
    hist_bins: int = 30
    tradeoff_epsilon1: float = 0.3
    tradeoff_epsilon2: int = 2
    tradeoff_lambdas: tuple[float, ...] = (0.0, 0.003, 0.01, 0.03, 0.1, 1.0)
    workers: int = 1
    output_dir: str | None = None

    def __post_init__(self):
        for name in ("methods", "epsilon1_grid", "epsilon2_grid", "lambda_grid", "tradeoff_lambdas"):
            value = getattr(self, name)
            if isinstance(value, (str, int, float)):
                value = (value,)
            cast = str if name == "methods" else int if name == "epsilon2_grid" else float
            object.__setattr__(self, name, tuple(cast(v) for v in value))
            if not getattr(self, name):
                raise UsageError(f"{name} must not be empty")
        object.__setattr__(self, "synthetic", dict(self.synthetic or {}))
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise UsageError(f"unknown method(s) {bad}; choose from {list(METHODS)}")
        if self.n_eval_samples < 1:
            raise UsageError("n_eval_samples must be >= 1")
        if (self.data is None) != (self.schema is None):
            raise UsageError("--data and --schema must be given together")
        if self.hist_bins < 1:
            raise UsageError("hist_bins must be >= 1")
        if self.workers < 1:
            raise UsageError("workers must be >= 1")

    @classmethod
    def from_mapping(cls, mapping: dict, **overrides) -> "ExperimentConfig":
        """Build from a parsed config file; keys may use dashes or underscores."""
        known = {f.name for f in fields(cls)}
        kw = {}
        for key, value in {**(mapping or {}), **overrides}.items():
            name = key.replace("-", "_")
            name = _FLAG_ALIASES.get(name, name)
            if name not in known:
                raise UsageError(f"unknown experiment setting {key!r}")
            kw[name] = value
        return cls(**kw)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out


@dataclass
class Pipeline:
    """Everything fitted once per seed and shared read-only by the attacks."""
    schema: MixedSchema
    stats: StandardizationStats
    model: MlpClassifier
    cov: GeneralizedCovariance
    kde: ood.KdeModel
    X_test: np.ndarray
    y_test: np.ndarray
    eval_idx: np.ndarray
    n_correct: int
    train_report: TrainReport


def sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def prepare(config: ExperimentConfig) -> Pipeline:
    """Load or generate data, split, train the model and fit the covariance and KDE."""
    if config.data is not None:
        schema = load_schema(config.schema)
        ds = load_csv(config.data, schema)
    else:
        ds, schema = generate_synthetic({"seed": config.seed, **config.synthetic})
    train_ds, test_ds = train_test_split(ds, config.split, config.seed)
    stats = fit_standardization(train_ds)
    X_train, X_test = encode_dataset(train_ds, stats), encode_dataset(test_ds, stats)
    model, report = train(X_train, train_ds.labels, TrainConfig(epochs=config.epochs, seed=config.seed),
                          X_test, test_ds.labels, n_classes=schema.n_classes)
    log.info("model trained: train acc %.3f, test acc %.3f",
             report.train_accuracy, report.test_accuracy)
    cov = fit_covariance(X_train)
    kde = ood.fit_kde(X_train, cap=config.kde_cap, seed=config.seed)
    kde = ood.calibrate_threshold(kde, X_test)

    correct = np.nonzero(predict(model, X_test) == test_ds.labels)[0]
    if not len(correct):
        raise UsageError("the model classifies no test sample correctly; nothing to attack")
    rng = np.random.default_rng(config.seed)
    eval_idx = np.sort(rng.permutation(correct)[: config.n_eval_samples])
    return Pipeline(schema, stats, model, cov, kde, X_test, np.asarray(test_ds.labels),
                    eval_idx, len(correct), report)


# -- running attacks ------------------------------------------------------------

def run_attack(pipe: Pipeline, method: str, index: int, epsilon1: float, epsilon2: int,
               lam: float, steps: int, seed: int):
    """Attack test row ``index`` and fill in the detector verdict."""
    x0 = pipe.X_test[index]
    y = int(pipe.y_test[index])
    layout = pipe.schema.layout
    s = sample_seed(seed, index)
    if method == "mattack":
        cfg = AttackConfig(epsilon1=epsilon1, epsilon2=epsilon2, lam=lam, steps=steps, seed=s)
        result = attack_encoded(pipe.model, x0, y, layout, cfg, pipe.cov)
    else:
        cfg = BaselineConfig(epsilon1=epsilon1, epsilon2=epsilon2, lam=lam, steps=steps, seed=s)
        fn = search_attack if method == "pgd-search" else greedy_attack
        result = fn(pipe.model, x0, y, layout, cfg, pipe.cov)
    result.flagged_ood = bool(ood.is_flagged(pipe.kde, result.adv_dense))
    return result


def _row(pipe, method, index, eps1, eps2, lam, steps, seed) -> dict:
    r = run_attack(pipe, method, index, eps1, eps2, lam, steps, seed)
    return {
        "index": int(index), "method": method, "epsilon1": eps1, "epsilon2": eps2, "lambda": lam,
        "flipped": bool(r.success), "flagged": r.flagged_ood,
        "success": bool(r.success) and not r.flagged_ood,
        "loss": r.loss, "m_distance": r.m_distance,
        "l1_num_perturbation": r.l1_num_perturbation, "l0_cat_changes": r.l0_cat_changes,
        "wall_time_secs": r.wall_time_secs,
        "log_likelihood": float(ood.log_likelihood(pipe.kde, r.adv_dense)),
        "adv_categories": list(r.adv_categories),
    }


_WORKER_PIPE: Pipeline | None = None


def _init_worker(pipe):
    global _WORKER_PIPE
    _WORKER_PIPE = pipe


def _worker_row(task):
    return _row(_WORKER_PIPE, *task)


def run_tasks(pipe: Pipeline, tasks, workers: int = 1) -> list[dict]:
    """Run ``(method, index, eps1, eps2, lam, steps, seed)`` tasks.

    Rows come back sorted by their task key, so the worker count cannot
    change any aggregate.
    """
    tasks = list(tasks)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(pipe,)) as pool:
            rows = list(pool.map(_worker_row, tasks, chunksize=max(1, len(tasks) // (8 * workers))))
    else:
        rows = [_row(pipe, *t) for t in tasks]
    key = lambda r: (r["method"], r["epsilon1"], r["epsilon2"], r["lambda"], r["index"])
    return sorted(rows, key=key)


def _summarize(rows: list[dict]) -> dict:
    n = len(rows)
    col = lambda k: np.array([r[k] for r in rows], dtype=float)
    eps1, eps2 = rows[0]["epsilon1"], rows[0]["epsilon2"]
    l1, l0 = col("l1_num_perturbation"), col("l0_cat_changes")
    return {
        "method": rows[0]["method"], "epsilon1": eps1, "epsilon2": eps2, "lambda": rows[0]["lambda"],
        "n": n,
        "success_rate": float(col("success").mean()),
        "flip_rate": float(col("flipped").mean()),
        "flag_rate": float(col("flagged").mean()),
        "mean_loss": float(col("loss").mean()),
        "mean_m_distance": float(col("m_distance").mean()),
        "mean_l0_cat_changes": float(l0.mean()),
        "mean_l1_num_perturbation": float(l1.mean()),
        "budget_violations": int(np.sum((l1 > eps1 + L1_SLACK) | (l0 > eps2))),
        "mean_wall_time_secs": float(col("wall_time_secs").mean()),
    }


def _cells(rows):
    key = lambda r: (r["method"], r["epsilon1"], r["epsilon2"], r["lambda"])
    return [list(g) for _, g in itertools.groupby(rows, key=key)]


# -- E1 ---------------------------------------------------------------------------

@dataclass
class HistogramTable:
    edges: np.ndarray
    counts: dict[str, np.ndarray]
    log_likelihoods: dict[str, np.ndarray]

    def medians(self) -> dict[str, float]:
        return {k: float(np.median(v)) for k, v in self.log_likelihoods.items()}

    def rows(self) -> list[dict]:
        out = []
        for cohort, counts in self.counts.items():
            for j, c in enumerate(counts):
                out.append({"cohort": cohort, "bin_left": float(self.edges[j]),
                            "bin_right": float(self.edges[j + 1]), "count": int(c)})
        return out


def histogram_table(cohorts: dict[str, np.ndarray], bins: int = 30) -> HistogramTable:
    """Bin every cohort on the same edges spanning the pooled range."""
    for name, v in cohorts.items():
        if len(v) == 0:
            raise UsageError(f"cohort {name!r} is empty")
    pooled = np.concatenate(list(cohorts.values()))
    lo, hi = float(pooled.min()), float(pooled.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    counts = {k: np.histogram(v, bins=edges)[0] for k, v in cohorts.items()}
    return HistogramTable(edges, counts, {k: np.asarray(v) for k, v in cohorts.items()})


def cohort_name(lam: float) -> str:
    return f"adv_lambda={lam:g}"


def run_e1_likelihood(config: ExperimentConfig, pipe: Pipeline | None = None) -> HistogramTable:
    pipe = pipe or prepare(config)
    tasks = [("mattack", int(i), config.hist_epsilon1, config.hist_epsilon2, lam, config.steps,
              config.seed) for i in pipe.eval_idx for lam in (config.hist_lambda, 0.0)]
    rows = run_tasks(pipe, tasks, config.workers)
    # the clean cohort is the attacked rows themselves, so cohorts differ only by the attack
    cohorts = {"clean": ood.log_likelihood(pipe.kde, pipe.X_test[pipe.eval_idx])}
    for lam in (config.hist_lambda, 0.0):
        cohorts[cohort_name(lam)] = np.array(
            [r["log_likelihood"] for r in rows if r["lambda"] == lam])
    return histogram_table(cohorts, config.hist_bins)


# -- E2 ---------------------------------------------------------------------------

@dataclass
class CampaignReport:
    config: dict
    test_accuracy: float
    n_correct: int
    cells: list[dict]
    rows: list[dict] = field(default_factory=list, repr=False)

    def cell(self, method, epsilon1, epsilon2, lam) -> dict:
        for c in self.cells:
            if (c["method"], c["epsilon1"], c["epsilon2"], c["lambda"]) == (method, epsilon1, epsilon2, lam):
                return c
        raise KeyError((method, epsilon1, epsilon2, lam))

    def to_dict(self, include_timing: bool = True) -> dict:
        cells = self.cells if include_timing else [
            {k: v for k, v in c.items() if k not in _TIMING_KEYS} for c in self.cells]
        return {"config": self.config, "test_accuracy": self.test_accuracy,
                "n_correct": self.n_correct, "cells": cells}

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)


def run_e2_success(config: ExperimentConfig, pipe: Pipeline | None = None) -> CampaignReport:
    pipe = pipe or prepare(config)
    # samples outermost: drifts in machine load then spread evenly over the cells
    cells = list(itertools.product(
        config.methods, config.epsilon1_grid, config.epsilon2_grid, config.lambda_grid))
    tasks = [(m, int(i), e1, e2, lam, config.steps, config.seed)
             for i in pipe.eval_idx for m, e1, e2, lam in cells]
    log.info("E2: %d attacks over %d samples", len(tasks), len(pipe.eval_idx))
    rows = run_tasks(pipe, tasks, config.workers)
    cells = [_summarize(g) for g in _cells(rows)]
    return CampaignReport(config.to_dict(), float(pipe.train_report.test_accuracy),
                          pipe.n_correct, cells, rows)


# -- E3 ---------------------------------------------------------------------------

TRADEOFF_FIELDS = ("method", "lambda", "mean_loss", "mean_m_distance", "success_rate",
                   "flip_rate", "flag_rate", "mean_l0_cat_changes", "n")


def run_e3_tradeoff(config: ExperimentConfig, pipe: Pipeline | None = None) -> list[dict]:
    pipe = pipe or prepare(config)
    tasks = [(m, int(i), config.tradeoff_epsilon1, config.tradeoff_epsilon2, lam, config.steps,
              config.seed)
             for i in pipe.eval_idx for m in config.methods for lam in config.tradeoff_lambdas]
    rows = run_tasks(pipe, tasks, config.workers)
    out = []
    for g in _cells(rows):
        s = _summarize(g)
        out.append({k: s[k] for k in TRADEOFF_FIELDS})
    order = {m: j for j, m in enumerate(config.methods)}
    return sorted(out, key=lambda r: (order[r["method"]], r["lambda"]))


def compare_tradeoff(rows: list[dict], method: str = "mattack",
                     reference: str = "pgd-greedy") -> list[dict]:
    """Compare ``method``'s loss with ``reference``'s at equal mean M-distance.

    The reference curve is linearly interpolated in distance and held flat
    beyond its end points.
    """
    ref = sorted((r for r in rows if r["method"] == reference), key=lambda r: r["mean_m_distance"])
    mine = [r for r in rows if r["method"] == method]
    if not ref or not mine:
        raise UsageError(f"trade-off rows need both {method!r} and {reference!r}")
    xd = np.array([r["mean_m_distance"] for r in ref])
    yl = np.array([r["mean_loss"] for r in ref])
    out = []
    for r in mine:
        at = float(np.interp(r["mean_m_distance"], xd, yl))
        out.append({"lambda": r["lambda"], "mean_m_distance": r["mean_m_distance"],
                    "mean_loss": r["mean_loss"], "reference_loss": at,
                    "holds": bool(r["mean_loss"] >= at)})
    return out


# -- output -----------------------------------------------------------------------

def _write_csv(path, rows, fieldnames):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()
                        if k in fieldnames})


def write_histogram(table: HistogramTable, out_dir) -> Path:
    path = Path(out_dir) / "histogram.csv"
    _write_csv(path, table.rows(), ["cohort", "bin_left", "bin_right", "count"])
    return path


def write_report(report: CampaignReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    (out / "report.json").write_text(report.to_json() + "\n")
    _write_csv(out / "success.csv", report.cells, list(report.cells[0]))
    with open(out / "results.jsonl", "w") as fh:
        for r in report.rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return [out / "report.json", out / "success.csv", out / "results.jsonl"]


def write_tradeoff(rows: list[dict], out_dir) -> Path:
    path = Path(out_dir) / "tradeoff.csv"
    _write_csv(path, rows, list(TRADEOFF_FIELDS))
    return path
