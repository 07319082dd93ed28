import csv
import dataclasses
import json

import numpy as np
import pytest

from mixattack import harness as h
from mixattack.errors import UsageError
from mixattack.harness import ExperimentConfig

SMALL = dict(synthetic={"d_n": 4, "cat_sizes": [3, 4, 3], "n_samples": 600}, n_eval_samples=6,
             steps=15, epochs=8, epsilon1_grid=(0.3,), epsilon2_grid=(1, 2), lambda_grid=(0.0, 6.0),
             tradeoff_lambdas=(0.0, 0.1, 1.0), kde_cap=300)


@pytest.fixture(scope="module")
def cfg():
    return ExperimentConfig(seed=3, **SMALL)


@pytest.fixture(scope="module")
def pipe(cfg):
    return h.prepare(cfg)


@pytest.fixture(scope="module")
def report(cfg, pipe):
    return h.run_e2_success(cfg, pipe)


def test_pipeline_evaluates_correct_rows_only(pipe):
    from mixattack.model import predict
    assert len(pipe.eval_idx) == 6
    assert np.all(predict(pipe.model, pipe.X_test[pipe.eval_idx]) == pipe.y_test[pipe.eval_idx])
    assert np.all(np.diff(pipe.eval_idx) > 0)


def test_report_accounting(report):
    assert len(report.cells) == 3 * 1 * 2 * 2
    assert len(report.rows) == 12 * 6
    for r in report.rows:
        assert r["success"] == (r["flipped"] and not r["flagged"])
    for c in report.cells:
        assert c["n"] == 6 and 0.0 <= c["success_rate"] <= 1.0
        assert c["budget_violations"] == 0
        assert c["success_rate"] <= min(c["flip_rate"], 1.0 - c["flag_rate"]) + 1e-12


def test_report_is_deterministic(cfg, report):
    again = h.run_e2_success(cfg)
    assert again.to_json(include_timing=False) == report.to_json(include_timing=False)
    assert "mean_wall_time_secs" in report.to_json()
    assert "mean_wall_time_secs" not in report.to_json(include_timing=False)


def test_worker_count_does_not_change_results(cfg, pipe, report):
    par = h.run_e2_success(dataclasses.replace(cfg, workers=2), pipe)
    assert par.to_dict(False)["cells"] == report.to_dict(False)["cells"]
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_time_secs"} for r in rows]
    assert strip(par.rows) == strip(report.rows)


def test_unlimited_budget_flips_nearly_everything(cfg, pipe):
    no_flag = dataclasses.replace(pipe, kde=dataclasses.replace(pipe.kde, threshold=-np.inf))
    d_c = pipe.schema.layout.d_c
    tasks = [("mattack", int(i), 1e6, d_c, 0.0, 60, cfg.seed) for i in pipe.eval_idx]
    rows = h.run_tasks(no_flag, tasks)
    assert np.mean([r["success"] for r in rows]) >= 0.9


def test_no_budget_means_no_success(cfg, pipe):
    tasks = [(m, int(i), 1e-9, 0, 0.0, 20, cfg.seed) for i in pipe.eval_idx for m in h.METHODS]
    rows = h.run_tasks(pipe, tasks)
    assert sum(r["flipped"] for r in rows) == 0


def test_histogram_conservation(cfg, pipe):
    table = h.run_e1_likelihood(cfg, pipe)
    assert set(table.counts) == {"clean", "adv_lambda=6", "adv_lambda=0"}
    for counts in table.counts.values():
        assert counts.sum() == 6
    assert len(table.edges) == cfg.hist_bins + 1
    med = table.medians()
    assert med["adv_lambda=0"] <= med["clean"]


def test_histogram_edge_cases():
    t = h.histogram_table({"a": np.array([1.0, 1.0])}, bins=4)
    assert t.counts["a"].sum() == 2 and t.edges[0] == 0.5
    with pytest.raises(UsageError):
        h.histogram_table({"a": np.array([1.0]), "b": np.array([])})


def test_tradeoff_rows_and_monotone_distance(cfg, pipe):
    rows = h.run_e3_tradeoff(cfg, pipe)
    assert len(rows) == 3 * 3
    assert set(rows[0]) == set(h.TRADEOFF_FIELDS)
    mine = [r for r in rows if r["method"] == "mattack"]
    dist = [r["mean_m_distance"] for r in mine]
    assert dist[0] >= dist[-1]
    assert mine[0]["mean_loss"] >= mine[-1]["mean_loss"]


def test_compare_tradeoff_interpolates():
    ref = [{"method": "pgd-greedy", "lambda": lam, "mean_m_distance": d, "mean_loss": l}
           for lam, d, l in [(0.0, 10.0, 4.0), (1.0, 0.0, 0.0)]]
    mine = [{"method": "mattack", "lambda": 0.1, "mean_m_distance": 5.0, "mean_loss": 2.5},
            {"method": "mattack", "lambda": 0.0, "mean_m_distance": 20.0, "mean_loss": 3.9}]
    out = h.compare_tradeoff(ref + mine)
    assert out[0]["reference_loss"] == pytest.approx(2.0) and out[0]["holds"]
    assert out[1]["reference_loss"] == pytest.approx(4.0) and not out[1]["holds"]
    with pytest.raises(UsageError):
        h.compare_tradeoff(mine)


def test_writers(tmp_path, cfg, pipe, report):
    paths = h.write_report(report, tmp_path)
    assert [p.name for p in paths] == ["report.json", "success.csv", "results.jsonl"]
    data = json.loads((tmp_path / "report.json").read_text())
    assert len(data["cells"]) == 12
    with open(tmp_path / "success.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 12
    assert len((tmp_path / "results.jsonl").read_text().splitlines()) == 72
    rows = [{"method": "mattack", "lambda": 0.0, "mean_loss": 1.0, "mean_m_distance": 2.0,
             "success_rate": 0.5, "flip_rate": 1.0, "flag_rate": 0.5,
             "mean_l0_cat_changes": 1.0, "n": 2}]
    with open(h.write_tradeoff(rows, tmp_path)) as fh:
        assert next(csv.DictReader(fh))["mean_loss"] == "1.0"


def test_config_validation_and_mapping():
    with pytest.raises(UsageError):
        ExperimentConfig(methods=("fgsm",))
    with pytest.raises(UsageError):
        ExperimentConfig(epsilon1_grid=())
    with pytest.raises(UsageError):
        ExperimentConfig(n_eval_samples=0)
    with pytest.raises(UsageError):
        ExperimentConfig(data="x.csv")
    c = ExperimentConfig.from_mapping({"n-eval": 7, "epsilon2-grid": [2, 3], "seed": 4})
    assert (c.n_eval_samples, c.epsilon2_grid, c.seed) == (7, (2, 3), 4)
    with pytest.raises(UsageError, match="bogus"):
        ExperimentConfig.from_mapping({"bogus": 1})
    assert ExperimentConfig().to_dict()["methods"] == list(h.METHODS)


def test_sample_seeds_are_distinct():
    seeds = {h.sample_seed(1, i) for i in range(1000)}
    assert len(seeds) == 1000 and h.sample_seed(1, 5) == h.sample_seed(1, 5)
