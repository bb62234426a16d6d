"""Command-line entry point.

Subcommands: train, evade, poison, curve, transfer, metrics.
Exit codes: 0 success, 2 config error, 3 partial-cell failures.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import evasion, harness, metrics, poisoning
from .data import save_csv
from .models import fit, save_model, validation_loss


def _load(args):
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    return cfg, out


def _trained_zoo(cfg, rep=0):
    dataset = harness.build_dataset(cfg, rep)
    splits = harness.split_dataset(cfg, dataset, rep)
    tgt_train, sur_train = splits[0], splits[1]
    targets = [(name, fit(spec, tgt_train)) for name, spec in cfg.targets]
    surrogates = [(name, fit(spec, sur_train)) for name, spec in cfg.surrogates]
    return dataset, splits, targets, surrogates


def cmd_train(args):
    cfg, out = _load(args)
    _, splits, targets, surrogates = _trained_zoo(cfg)
    test = splits[3]
    summary = {}
    for role, pairs in (("target", targets), ("surrogate", surrogates)):
        for name, model in pairs:
            path = os.path.join(out, f"{role}_{name}.json")
            save_model(model, path)
            stats = validation_loss(model, test)
            summary[f"{role}_{name}"] = {
                "test_error": stats.zero_one_error,
                "path": path,
            }
    with open(os.path.join(out, "train_summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    print(json.dumps(summary, sort_keys=True, indent=1))
    return 0


def cmd_evade(args):
    cfg, out = _load(args)
    dataset, splits, targets, _ = _trained_zoo(cfg)
    tgt_train, test = splits[0], splits[3]
    points = harness._attack_points(cfg, test, 0)
    acfg = harness.attack_config(cfg, 0)
    eps = cfg.budgets[-1]
    constraint = harness.make_constraint(cfg, eps, dataset.d)
    rc = 0
    for name, model in targets:
        if not model.differentiable:
            continue
        path = os.path.join(out, f"evasion_{name}.jsonl")
        n_evaded = 0
        with open(path, "w") as fh:
            for i in range(points.n):
                try:
                    res = evasion.run_evasion_double_init(
                        model, points.X[i], points.y[i], constraint, acfg, tgt_train
                    )
                except Exception as exc:  # per-point failure, keep going
                    fh.write(json.dumps({"index": i, "error": str(exc)}) + "\n")
                    rc = 3
                    continue
                evaded = bool(model.predict(res.x_star[None, :])[0] != points.y[i])
                n_evaded += evaded
                fh.write(
                    json.dumps(
                        {
                            "index": i,
                            "y": int(points.y[i]),
                            "delta_norm": float(
                                np.linalg.norm(res.delta, ord=constraint.p)
                            ),
                            "objective_trace": [float(v) for v in res.objective_trace],
                            "evaded": evaded,
                        }
                    )
                    + "\n"
                )
        print(f"{name}: {n_evaded}/{points.n} evaded at eps={eps} -> {path}")
    return rc


def cmd_poison(args):
    cfg, out = _load(args)
    dataset = harness.build_dataset(cfg, 0)
    tgt_train, sur_train, val, test = harness.split_dataset(cfg, dataset, 0)
    pcfg = harness._poison_cfg(cfg, dataset.d, 0)
    rc = 0
    for name, spec in cfg.surrogates or cfg.targets:
        try:
            pois, trace = poisoning.run_poisoning(spec, sur_train, val, pcfg)
        except Exception as exc:
            print(f"{name}: poisoning failed: {exc}", file=sys.stderr)
            rc = 3
            continue
        csv_path = os.path.join(out, f"poison_{name}.csv")
        if pois is not None:
            save_csv(pois, csv_path)
        with open(os.path.join(out, f"poison_{name}_manifest.json"), "w") as fh:
            json.dump(
                {
                    "surrogate": dataclasses.asdict(spec),
                    "fraction_alpha": pcfg.fraction_alpha,
                    "seed": pcfg.seed,
                    "trace": trace,
                    "points_file": csv_path if pois is not None else None,
                },
                fh,
                sort_keys=True,
                indent=1,
            )
        err = poisoning.evaluate_poisoning(spec, tgt_train, pois, test)
        print(f"{name}: poisoned test error {err:.3f} ({0 if pois is None else pois.n} points)")
    return rc


def cmd_curve(args):
    cfg, out = _load(args)
    _, table, failures = harness.run_security_curve(cfg, jobs=args.jobs)
    harness.emit(table, cfg, out, failures)
    for row in table:
        print(
            f"{row['model']} eps={row['budget']}: "
            f"{row['mean_error']:.3f} +- {row['std_error']:.3f}"
        )
    return 3 if failures else 0


def cmd_transfer(args):
    cfg, out = _load(args)
    report, failures = harness.run_transfer_matrix(cfg, jobs=args.jobs)
    harness.emit(report, cfg, out, failures)
    print(json.dumps(report.to_json_dict(), sort_keys=True, indent=1))
    return 3 if failures else 0


def cmd_metrics(args):
    cfg, out = _load(args)
    dataset, splits, targets, surrogates = _trained_zoo(cfg)
    sur_train, test = splits[1], splits[3]
    points = harness._attack_points(cfg, test, 0)
    p = harness.make_constraint(cfg, 1.0, dataset.d).p
    doc = {"S": {}, "R": {}, "V": {}}
    for name, model in targets:
        if model.differentiable:
            _, doc["S"][name] = metrics.metric_S(model, points, p)
    for s_name, s_model in surrogates:
        for t_name, t_model in targets:
            if s_model.differentiable and t_model.differentiable:
                _, r_mean, _, _ = metrics.metric_R(s_model, t_model, points)
                doc["R"][f"{s_name}->{t_name}"] = r_mean
    for s_name, spec in cfg.surrogates:
        _, v_mean, mode = metrics.metric_V(
            spec, sur_train, points,
            n_resamples=int(cfg.metrics_opts.get("v_resamples", 10)),
            seed=cfg.seed,
        )
        doc["V"][s_name] = v_mean
        doc["V_mode"] = mode
    path = os.path.join(out, "metrics.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
    print(json.dumps(doc, sort_keys=True, indent=1))
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="transferlab")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("train", cmd_train),
        ("evade", cmd_evade),
        ("poison", cmd_poison),
        ("curve", cmd_curve),
        ("transfer", cmd_transfer),
        ("metrics", cmd_metrics),
    ):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=1)
        sp.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
