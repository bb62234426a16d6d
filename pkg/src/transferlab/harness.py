"""Config-driven experiment harness: security-evaluation curves and
surrogate x target transfer matrices, with seeded repetitions and
CSV/JSON emission. All randomness flows from config seeds, so repeated
runs produce byte-identical outputs."""

import csv
import dataclasses
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import __version__, data, evasion, metrics, poisoning
from .models import ModelSpec, fit, validation_loss


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: dict
    split: dict
    scenario: str  # white_box | black_box
    attack: str  # evasion | poisoning
    constraint: dict
    budgets: tuple
    surrogates: tuple  # (name, ModelSpec) pairs
    targets: tuple
    repetitions: int
    n_attack_points: int
    output_dir: str
    seed: int = 0
    poisoning_opts: dict = field(default_factory=dict)
    metrics_opts: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


_SPEC_KEYS = (
    "family",
    "C",
    "alpha",
    "weight_decay",
    "kernel_gamma",
    "hidden_layers",
    "n_trees",
    "max_depth",
    "train_seed",
)


def _parse_model(doc):
    try:
        name = doc["name"]
        flat = {**doc, **doc.get("spec", {})}
        spec_kwargs = {k: flat[k] for k in _SPEC_KEYS if k in flat}
        if "hidden_layers" in spec_kwargs:
            spec_kwargs["hidden_layers"] = tuple(spec_kwargs["hidden_layers"])
        return name, ModelSpec(**spec_kwargs)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad model entry {doc!r}: {exc}") from exc


def parse_config(doc):
    try:
        budgets = tuple(float(b) for b in doc["budgets"])
        if list(budgets) != sorted(budgets) or (budgets and budgets[0] != 0.0):
            raise ConfigError("budget grid must be ascending and start at 0")
        repetitions = int(doc.get("repetitions", 1))
        if repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        scenario = doc.get("scenario", "white_box")
        if scenario not in ("white_box", "black_box"):
            raise ConfigError(f"unknown scenario {scenario!r}")
        attack = doc.get("attack", "evasion")
        if attack not in ("evasion", "poisoning"):
            raise ConfigError(f"unknown attack {attack!r}")
        models = doc.get("models", {})
        targets = tuple(_parse_model(m) for m in models.get("targets", []))
        surrogates = tuple(_parse_model(m) for m in models.get("surrogates", []))
        if not targets:
            raise ConfigError("at least one target model is required")
        if scenario == "black_box" and not surrogates:
            raise ConfigError("black_box runs need surrogate models")
        return ExperimentConfig(
            dataset=dict(doc["dataset"]),
            split=dict(doc["split"]),
            scenario=scenario,
            attack=attack,
            constraint=dict(doc.get("constraint", {})),
            budgets=budgets,
            surrogates=surrogates,
            targets=targets,
            repetitions=repetitions,
            n_attack_points=int(doc.get("n_attack_points", 100)),
            output_dir=doc.get("output_dir", "out"),
            seed=int(doc.get("seed", 0)),
            poisoning_opts=dict(doc.get("poisoning", {})),
            metrics_opts=dict(doc.get("metrics", {})),
            raw=doc,
        )
    except KeyError as exc:
        raise ConfigError(f"missing config key {exc}") from exc


def load_config(path):
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    return parse_config(doc)


def config_hash(cfg):
    canon = json.dumps(cfg.raw, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def build_dataset(cfg, rep):
    ds_cfg = cfg.dataset
    source = ds_cfg.get("source", "synthetic")
    if source == "synthetic":
        return data.synthetic_gaussians(
            n=int(ds_cfg["n"]),
            d=int(ds_cfg["d"]),
            separation=float(ds_cfg.get("separation", 2.0)),
            sparse_binary=bool(ds_cfg.get("sparse_binary", False)),
            seed=cfg.seed * 1000 + rep,
        )
    if source == "csv":
        return data.load_csv(ds_cfg["path"])
    if source == "sparse":
        return data.load_sparse(ds_cfg["path"], n_features=ds_cfg.get("n_features"))
    if source == "idx":
        return data.load_idx(
            ds_cfg["images_path"],
            ds_cfg["labels_path"],
            int(ds_cfg.get("positive_class", 9)),
            int(ds_cfg.get("negative_class", 8)),
        )
    raise ConfigError(f"unknown dataset source {source!r}")


def split_dataset(cfg, dataset, rep):
    spec = data.SplitSpec(
        target_train_n=int(cfg.split["target_train_n"]),
        surrogate_train_n=int(cfg.split["surrogate_train_n"]),
        validation_n=int(cfg.split.get("validation_n", 0)),
        test_n=int(cfg.split["test_n"]),
        surrogate_fraction=float(cfg.split.get("surrogate_fraction", 1.0)),
        seed=cfg.seed * 1000 + rep,
    )
    return data.split(dataset, spec)


def make_constraint(cfg, epsilon, d):
    c = cfg.constraint
    p = c.get("p", 2)
    p = np.inf if p in ("inf", "Inf", float("inf")) else float(p)
    lb = float(c.get("lb", 0.0))
    ub = float(c.get("ub", 1.0))
    return evasion.PerturbationConstraint(
        p=p,
        epsilon=epsilon,
        x_lb=np.full(d, lb),
        x_ub=np.full(d, ub),
        injection_only=bool(c.get("injection_only", False)),
    )


def attack_config(cfg, rep):
    return evasion.AttackConfig(
        max_iters=int(cfg.constraint.get("max_iters", 1000)),
        line_search_max=int(cfg.constraint.get("line_search_max", 20)),
        convergence_t=float(cfg.constraint.get("convergence_t", 1e-6)),
        double_init=bool(cfg.constraint.get("double_init", True)),
        seed=cfg.seed * 1000 + rep,
    )


def _attack_points(cfg, test, rep):
    rng = np.random.default_rng(cfg.seed * 1000 + rep + 7)
    n = min(cfg.n_attack_points, test.n)
    return test.subset(rng.choice(test.n, size=n, replace=False))


def _evade_set(model, points, constraint, acfg, pool):
    return [
        evasion.run_evasion_double_init(
            model, points.X[i], points.y[i], constraint, acfg, opposite_class_pool=pool
        )
        for i in range(points.n)
    ]


def _curve_rep(cfg, rep):
    """One repetition of the security curve: rows (model, budget, error)."""
    dataset = build_dataset(cfg, rep)
    tgt_train, _, _, test = split_dataset(cfg, dataset, rep)
    points = _attack_points(cfg, test, rep)
    acfg = attack_config(cfg, rep)
    rows = []
    failures = []
    for name, spec in cfg.targets:
        try:
            model = fit(spec, tgt_train)
        except Exception as exc:
            failures.append({"rep": rep, "model": name, "error": str(exc)})
            continue
        for eps in cfg.budgets:
            try:
                if eps == 0.0:
                    err = model.zero_one_error(points)
                else:
                    constraint = make_constraint(cfg, eps, dataset.d)
                    attacks = _evade_set(model, points, constraint, acfg, tgt_train)
                    err = evasion.evaluate_evasion(model, attacks, points.y)
                rows.append({"model": name, "budget": eps, "rep": rep, "error": err})
            except Exception as exc:
                failures.append(
                    {"rep": rep, "model": name, "budget": eps, "error": str(exc)}
                )
    return rows, failures


def run_security_curve(cfg, jobs=1):
    """White-box security evaluation curve (error vs budget, mean over reps).

    Returns (rows, table, failures): per-rep rows, the aggregated table
    with mean/std per (model, budget), and per-cell failures.
    """
    if cfg.scenario != "white_box":
        raise ConfigError("security curves are white-box experiments")
    reps = range(cfg.repetitions)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_curve_rep, [cfg] * cfg.repetitions, reps))
    else:
        results = [_curve_rep(cfg, rep) for rep in reps]
    rows = [r for rs, _ in results for r in rs]
    failures = [f for _, fs in results for f in fs]
    table = []
    for name, _ in cfg.targets:
        for eps in cfg.budgets:
            errs = [r["error"] for r in rows if r["model"] == name and r["budget"] == eps]
            if errs:
                table.append(
                    {
                        "model": name,
                        "budget": eps,
                        "mean_error": float(np.mean(errs)),
                        "std_error": float(np.std(errs)),
                        "n_reps": len(errs),
                    }
                )
    return rows, table, failures


def _poison_cfg(cfg, d, rep):
    opts = cfg.poisoning_opts
    return poisoning.PoisoningConfig(
        fraction_alpha=float(cfg.budgets[-1]),
        box_lb=np.full(d, float(cfg.constraint.get("lb", 0.0))),
        box_ub=np.full(d, float(cfg.constraint.get("ub", 1.0))),
        max_outer_iters=int(opts.get("max_outer_iters", 5)),
        convergence_t=float(opts.get("convergence_t", 1e-6)),
        line_search_max=int(opts.get("line_search_max", 8)),
        seed=cfg.seed * 1000 + rep + 13,
    )


def _transfer_rep(cfg, rep):
    """One repetition of the transfer grid. Returns dict of partial results."""
    dataset = build_dataset(cfg, rep)
    tgt_train, sur_train, val, test = split_dataset(cfg, dataset, rep)
    out = {"cells": {}, "white_box": {}, "clean": {}, "failures": [],
           "deltas_bb": {}, "deltas_wb": {}, "R": {}, "S": {}, "V": {}}
    targets = {}
    for name, spec in cfg.targets:
        targets[name] = fit(spec, tgt_train)
    surrogates = {}
    for name, spec in cfg.surrogates:
        surrogates[name] = fit(spec, sur_train)
    points = _attack_points(cfg, test, rep)
    acfg = attack_config(cfg, rep)
    budget = cfg.budgets[-1]
    p = make_constraint(cfg, 1.0, dataset.d).p

    for name, model in targets.items():
        out["clean"][name] = model.zero_one_error(points)
        if model.differentiable:
            _, out["S"][name] = metrics.metric_S(model, points, p)

    if cfg.attack == "evasion":
        constraint = make_constraint(cfg, budget, dataset.d)
        wb_attacks = {}
        for name, model in targets.items():
            if not model.differentiable:
                continue
            try:
                attacks = _evade_set(model, points, constraint, acfg, tgt_train)
                wb_attacks[name] = attacks
                out["white_box"][name] = evasion.evaluate_evasion(model, attacks, points.y)
            except Exception as exc:
                out["failures"].append({"rep": rep, "white_box": name, "error": str(exc)})
        for t_name, model in targets.items():
            out["white_box"].setdefault(t_name, out["clean"][t_name])
        for s_name, s_model in surrogates.items():
            try:
                attacks = _evade_set(s_model, points, constraint, acfg, sur_train)
            except Exception as exc:
                out["failures"].append({"rep": rep, "surrogate": s_name, "error": str(exc)})
                continue
            out["deltas_bb"][s_name] = np.array([a.delta for a in attacks])
            for t_name, t_model in targets.items():
                out["cells"][(s_name, t_name)] = evasion.evaluate_evasion(
                    t_model, attacks, points.y
                )
                if t_name in wb_attacks:
                    out["deltas_wb"][t_name] = np.array([a.delta for a in wb_attacks[t_name]])
                if s_model.differentiable and t_model.differentiable:
                    try:
                        _, r_mean, _, _ = metrics.metric_R(s_model, t_model, points)
                        out["R"][(s_name, t_name)] = r_mean
                    except metrics.UndefinedStatisticError:
                        pass
        n_res = int(cfg.metrics_opts.get("v_resamples", 10))
        for s_name, spec in cfg.surrogates:
            try:
                _, v_mean, _ = metrics.metric_V(
                    spec, sur_train, points, n_resamples=n_res, seed=cfg.seed * 1000 + rep
                )
                out["V"][s_name] = v_mean
            except Exception as exc:
                out["failures"].append({"rep": rep, "V": s_name, "error": str(exc)})
    else:  # poisoning
        pcfg = _poison_cfg(cfg, dataset.d, rep)
        wb_poison = {}
        for name, spec in cfg.targets:
            if spec.family in ("linear_svm", "rbf_svm", "logistic", "ridge"):
                try:
                    pois, _ = poisoning.run_poisoning(spec, tgt_train, val, pcfg)
                    wb_poison[name] = pois
                    out["white_box"][name] = poisoning.evaluate_poisoning(
                        spec, tgt_train, pois, test
                    )
                except Exception as exc:
                    out["failures"].append({"rep": rep, "white_box": name, "error": str(exc)})
        for t_name, _ in cfg.targets:
            out["white_box"].setdefault(t_name, out["clean"][t_name])
        for s_name, s_spec in cfg.surrogates:
            try:
                pois, _ = poisoning.run_poisoning(s_spec, sur_train, val, pcfg)
            except Exception as exc:
                out["failures"].append({"rep": rep, "surrogate": s_name, "error": str(exc)})
                continue
            for t_name, t_spec in cfg.targets:
                try:
                    out["cells"][(s_name, t_name)] = poisoning.evaluate_poisoning(
                        t_spec, tgt_train, pois, test
                    )
                except Exception as exc:
                    out["failures"].append(
                        {"rep": rep, "cell": (s_name, t_name), "error": str(exc)}
                    )
    return out


def run_transfer_matrix(cfg, jobs=1):
    """Black-box transfer grid averaged over repetitions.

    Returns (TransferReport, failures). The grid uses the last (largest)
    budget in the grid; per-cell failures never abort the run.
    """
    if cfg.scenario != "black_box":
        raise ConfigError("transfer matrices are black-box experiments")
    reps = range(cfg.repetitions)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_transfer_rep, [cfg] * cfg.repetitions, reps))
    else:
        parts = [_transfer_rep(cfg, rep) for rep in reps]
    failures = [f for p in parts for f in p["failures"]]
    s_names = [n for n, _ in cfg.surrogates]
    t_names = [n for n, _ in cfg.targets]

    def avg(getter, keys):
        acc = {}
        for key in keys:
            vals = [getter(p, key) for p in parts if getter(p, key) is not None]
            if vals:
                acc[key] = float(np.mean(vals))
        return acc

    cells = avg(lambda p, k: p["cells"].get(k), [(s, t) for s in s_names for t in t_names])
    white = avg(lambda p, k: p["white_box"].get(k), t_names)
    clean = avg(lambda p, k: p["clean"].get(k), t_names)
    S = avg(lambda p, k: p["S"].get(k), t_names)
    V = avg(lambda p, k: p["V"].get(k), s_names)
    R_cells = avg(lambda p, k: p["R"].get(k), [(s, t) for s in s_names for t in t_names])
    R_matrix = None
    if R_cells:
        R_matrix = np.full((len(s_names), len(t_names)), np.nan)
        for i, s in enumerate(s_names):
            for j, t in enumerate(t_names):
                if (s, t) in R_cells:
                    R_matrix[i, j] = R_cells[(s, t)]
    pearson_matrix = None
    kendall_matrix = None
    if cfg.attack == "evasion":
        pearson_matrix = np.full((len(s_names), len(t_names)), np.nan)
        kendall_matrix = np.full((len(s_names), len(t_names)), np.nan)
        for i, s in enumerate(s_names):
            for j, t in enumerate(t_names):
                pr, kd = [], []
                for p_ in parts:
                    if s in p_["deltas_bb"] and t in p_["deltas_wb"]:
                        try:
                            a, b = metrics.perturbation_correlation(
                                p_["deltas_bb"][s], p_["deltas_wb"][t]
                            )
                            pr.append(a)
                            kd.append(b)
                        except metrics.UndefinedStatisticError:
                            pass
                if pr:
                    pearson_matrix[i, j] = float(np.mean(pr))
                    kendall_matrix[i, j] = float(np.mean(kd))
    pvalues = {}
    if R_matrix is not None and pearson_matrix is not None:
        mask = ~(np.isnan(R_matrix) | np.isnan(pearson_matrix))
        if mask.sum() >= 3:
            try:
                pvalues["R_vs_perturbation_corr"] = metrics.permutation_test_correlation(
                    R_matrix[mask], pearson_matrix[mask], n_perm=10000, seed=cfg.seed
                )
            except (ValueError, metrics.UndefinedStatisticError):
                pass
    report = metrics.build_transfer_report(
        s_names,
        t_names,
        cells,
        white,
        clean,
        S_per_target=S or None,
        R_matrix=R_matrix,
        V_per_surrogate=V or None,
        pearson_matrix=pearson_matrix,
        kendall_matrix=kendall_matrix,
        pvalues=pvalues,
        notes={"budget": cfg.budgets[-1], "attack": cfg.attack},
    )
    return report, failures


def _write_matrix_csv(path, row_names, col_names, matrix):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + list(col_names))
        for name, row in zip(row_names, np.atleast_2d(matrix)):
            writer.writerow([name] + [repr(float(v)) for v in row])


def emit(report, cfg, out_dir, failures=()):
    """Write report.json, labeled CSV matrices, and a manifest. Re-running
    with an identical config reproduces byte-identical files."""
    os.makedirs(out_dir, exist_ok=True)
    files = []

    def jdump(name, obj):
        path = os.path.join(out_dir, name)
        with open(path, "w") as fh:
            json.dump(obj, fh, sort_keys=True, indent=1)
        files.append(path)

    if isinstance(report, metrics.TransferReport):
        jdump("report.json", report.to_json_dict())
        s, t = report.surrogates, report.targets
        pairs = [
            ("transfer_matrix.csv", s, report.transfer_matrix),
            ("white_box_row.csv", ["white_box"], report.white_box_row[None, :]),
            ("clean_row.csv", ["clean"], report.clean_row[None, :]),
        ]
        if report.R_matrix is not None:
            pairs.append(("R_matrix.csv", s, report.R_matrix))
        if report.pearson_matrix is not None:
            pairs.append(("pearson_matrix.csv", s, report.pearson_matrix))
        for name, rows, mat in pairs:
            path = os.path.join(out_dir, name)
            _write_matrix_csv(path, rows, t, mat)
            files.append(path)
    else:  # curve table: list of dicts
        path = os.path.join(out_dir, "curve.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["model", "budget", "mean_error", "std_error", "n_reps"]
            )
            writer.writeheader()
            for row in report:
                writer.writerow(row)
        files.append(path)
        jdump("curve.json", report)
    jdump(
        "manifest.json",
        {
            "config_hash": config_hash(cfg),
            "config": cfg.raw,
            "seed": cfg.seed,
            "code_version": __version__,
            "failures": list(failures),
        },
    )
    return files
