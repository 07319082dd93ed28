"""Command line entry point.

Every subcommand re-derives the train/test split and the standardization
from ``--data``/``--schema``/``--split``/``--seed`` (synthetic data when
``--data`` is omitted), so artifacts fitted by separate invocations line up.
Any flag can also come from a YAML file given with ``--config``; explicit
flags win.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import harness, mahalanobis, model as mlp, ood
from .attack import AttackConfig, attack_encoded
from .baselines import BaselineConfig, greedy_attack, search_attack
from .data import (SyntheticSpec, encode_dataset, fit_standardization, generate_synthetic,
                   load_csv, load_schema, save_schema, train_test_split)
from .errors import DataError, MixAttackError, UsageError

log = logging.getLogger("mixattack")


def _add_data_flags(p):
    p.add_argument("--data", help="CSV file (synthetic data when omitted)")
    p.add_argument("--schema", help="schema YAML describing the CSV columns")
    p.add_argument("--split", type=float, default=0.8, help="training fraction (default 0.8)")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with default values for any flag")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mixattack",
                                     description="Adversarial attacks on mixed-type tabular data")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write the seeded synthetic dataset")
    p.add_argument("--out", help="CSV path")
    p.add_argument("--schema-out", help="schema YAML path")
    p.add_argument("--n-samples", type=int, default=SyntheticSpec.n_samples)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", parents=[common], help="train the MLP classifier")
    _add_data_flags(p)
    p.add_argument("--epochs", type=int, default=mlp.TrainConfig.epochs)
    p.add_argument("--learning-rate", type=float, default=mlp.TrainConfig.learning_rate)
    p.add_argument("--out", help="model file")

    p = sub.add_parser("fit-cov", parents=[common], help="fit the generalized covariance")
    _add_data_flags(p)
    p.add_argument("--out", help="covariance file")

    p = sub.add_parser("fit-ood", parents=[common], help="fit and calibrate the KDE detector")
    _add_data_flags(p)
    p.add_argument("--cap", type=int, default=ood.DEFAULT_CAP, help="reference rows kept")
    p.add_argument("--out", help="detector file")

    p = sub.add_parser("attack", parents=[common], help="attack test rows with one method")
    _add_data_flags(p)
    p.add_argument("--model", help="model file")
    p.add_argument("--cov", help="covariance file (needed when lambda > 0)")
    p.add_argument("--ood", help="detector file; fills in flagged_ood when given")
    p.add_argument("--method", choices=harness.METHODS, default="mattack")
    p.add_argument("--eps1", type=float, default=0.6)
    p.add_argument("--eps2", type=int, default=3)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--n", type=int, default=10, help="number of test rows to attack")
    p.add_argument("--out", help="results.jsonl path")

    p = sub.add_parser("experiment", parents=[common], help="run an experiment campaign")
    p.add_argument("which", choices=("e1", "e2", "e3"))
    p.add_argument("--data")
    p.add_argument("--schema")
    p.add_argument("--split", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--methods", nargs="+", choices=harness.METHODS)
    p.add_argument("--n-eval", dest="n_eval_samples", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out-dir", dest="output_dir", default=None)
    p.add_argument("--no-plots", action="store_true", help="skip the PNG figures")
    parser.commands = sub.choices
    return parser


def _apply_config_file(parser, argv):
    """Re-parse with defaults taken from ``--config``; explicit flags still win."""
    args = parser.parse_args(argv)
    if not args.config:
        return args, {}
    try:
        raw = yaml.safe_load(Path(args.config).read_text()) or {}
    except OSError as exc:
        raise DataError(f"cannot read config {args.config}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"config {args.config} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"config {args.config} must be a mapping")
    if args.command == "experiment":
        return args, raw
    dests = set(vars(args))
    defaults = {}
    for key, value in raw.items():
        dest = {"lambda": "lam"}.get(key, key.replace("-", "_"))
        if dest not in dests:
            raise UsageError(f"unknown setting {key!r} in {args.config}")
        defaults[dest] = value
    parser.commands[args.command].set_defaults(**defaults)
    return parser.parse_args(argv), {}


_REQUIRED = {"generate": ("out", "schema_out"), "train": ("out",), "fit-cov": ("out",),
             "fit-ood": ("out",), "attack": ("model", "out")}


def _check_required(args):
    # enforced here rather than by argparse so a config file can supply them
    missing = [k for k in _REQUIRED.get(args.command, ()) if getattr(args, k) is None]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise UsageError(f"{args.command} needs {flags} (on the command line or in --config)")


def _split(args):
    if (args.data is None) != (args.schema is None):
        raise UsageError("--data and --schema must be given together")
    if args.data is None:
        ds, schema = generate_synthetic(seed=args.seed)
    else:
        schema = load_schema(args.schema)
        ds = load_csv(args.data, schema)
    train_ds, test_ds = train_test_split(ds, args.split, args.seed)
    stats = fit_standardization(train_ds)
    return schema, stats, train_ds, test_ds


def cmd_generate(args):
    ds, schema = generate_synthetic(seed=args.seed, n_samples=args.n_samples)
    ds.to_csv(args.out)
    save_schema(schema, args.schema_out)
    print(f"wrote {len(ds)} rows to {args.out} and the schema to {args.schema_out}")


def cmd_train(args):
    schema, stats, train_ds, test_ds = _split(args)
    cfg = mlp.TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate, seed=args.seed)
    model, report = mlp.train(encode_dataset(train_ds, stats), train_ds.labels, cfg,
                              encode_dataset(test_ds, stats), test_ds.labels,
                              n_classes=schema.n_classes)
    mlp.save(model, args.out)
    print(f"train accuracy {report.train_accuracy:.4f}, test accuracy {report.test_accuracy:.4f}; "
          f"model written to {args.out}")


def cmd_fit_cov(args):
    _, stats, train_ds, _ = _split(args)
    cov = mahalanobis.fit_covariance(encode_dataset(train_ds, stats))
    mahalanobis.save(cov, args.out)
    print(f"covariance of dimension {cov.dim} (rank {cov.rank}) written to {args.out}")


def cmd_fit_ood(args):
    _, stats, train_ds, test_ds = _split(args)
    kde = ood.fit_kde(encode_dataset(train_ds, stats), cap=args.cap, seed=args.seed)
    kde = ood.calibrate_threshold(kde, encode_dataset(test_ds, stats))
    ood.save(kde, args.out)
    print(f"detector threshold {kde.threshold:.4f} written to {args.out}")


def cmd_attack(args):
    schema, stats, _, test_ds = _split(args)
    model = mlp.load(args.model)
    cov = mahalanobis.load(args.cov) if args.cov else None
    kde = ood.load(args.ood) if args.ood else None
    if args.lam > 0 and cov is None:
        raise UsageError("--lambda > 0 needs --cov")
    X = encode_dataset(test_ds, stats)
    if model.input_dim != X.shape[1]:
        raise DataError(f"model expects {model.input_dim} inputs but the data encodes to {X.shape[1]}")
    correct = np.nonzero(mlp.predict(model, X) == test_ds.labels)[0]
    if not len(correct):
        raise UsageError("the model classifies no test row correctly")
    layout = schema.layout
    n_ok = 0
    with open(args.out, "w") as fh:
        for idx in correct[: args.n]:
            seed = harness.sample_seed(args.seed, idx)
            y = int(test_ds.labels[idx])
            if args.method == "mattack":
                cfg = AttackConfig(epsilon1=args.eps1, epsilon2=args.eps2, lam=args.lam,
                                   steps=args.steps, seed=seed)
                r = attack_encoded(model, X[idx], y, layout, cfg, cov)
            else:
                cfg = BaselineConfig(epsilon1=args.eps1, epsilon2=args.eps2, lam=args.lam,
                                     steps=args.steps, seed=seed)
                fn = search_attack if args.method == "pgd-search" else greedy_attack
                r = fn(model, X[idx], y, layout, cfg, cov)
            if kde is not None:
                r.flagged_ood = bool(ood.is_flagged(kde, r.adv_dense))
            n_ok += bool(r.success) and not r.flagged_ood
            fh.write(json.dumps(r.record(layout, stats, schema, index=int(idx))) + "\n")
    print(f"{n_ok}/{min(args.n, len(correct))} successful attacks; records in {args.out}")


def cmd_experiment(args, file_cfg):
    flags = {k: v for k, v in vars(args).items()
             if k in ("data", "schema", "split", "seed", "methods", "n_eval_samples",
                      "steps", "workers", "output_dir") and v is not None}
    cfg = harness.ExperimentConfig.from_mapping(file_cfg, **flags)
    out = Path(cfg.output_dir or f"results_{args.which}")
    out.mkdir(parents=True, exist_ok=True)
    pipe = harness.prepare(cfg)
    if args.which == "e1":
        table = harness.run_e1_likelihood(cfg, pipe)
        written = [harness.write_histogram(table, out)]
        if not args.no_plots:
            from . import plotting
            written.append(plotting.plot_histogram(table, out / "histogram.png"))
        for cohort, med in table.medians().items():
            print(f"{cohort:>16s}  median log-likelihood {med:9.3f}")
    elif args.which == "e2":
        report = harness.run_e2_success(cfg, pipe)
        written = harness.write_report(report, out)
        if not args.no_plots:
            from . import plotting
            written.append(plotting.plot_success(report, out / "success.png"))
        for c in report.cells:
            print(f"{c['method']:>10s} eps1={c['epsilon1']:<4g} eps2={c['epsilon2']} "
                  f"lambda={c['lambda']:<4g} success {c['success_rate']:.3f} "
                  f"time {c['mean_wall_time_secs'] * 1e3:.1f} ms")
    else:
        rows = harness.run_e3_tradeoff(cfg, pipe)
        written = [harness.write_tradeoff(rows, out)]
        if not args.no_plots:
            from . import plotting
            written.append(plotting.plot_tradeoff(rows, out / "tradeoff.png"))
        for r in rows:
            print(f"{r['method']:>10s} lambda={r['lambda']:<6g} loss {r['mean_loss']:.4f} "
                  f"distance {r['mean_m_distance']:.3f}")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    print("wrote " + ", ".join(str(p) for p in written))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, file_cfg = _apply_config_file(parser, argv)
        _check_required(args)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        handlers = {"generate": cmd_generate, "train": cmd_train, "fit-cov": cmd_fit_cov,
                    "fit-ood": cmd_fit_ood, "attack": cmd_attack}
        if args.command == "experiment":
            cmd_experiment(args, file_cfg)
        else:
            handlers[args.command](args)
    except MixAttackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
