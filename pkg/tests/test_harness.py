"""Config-driven harness: parsing, curves, transfer grids, emission, CLI."""

import copy
import filecmp
import json
import os

import numpy as np
import pytest
import yaml

from transferlab import cli, harness
from transferlab.harness import (
    ConfigError,
    build_dataset,
    config_hash,
    load_config,
    parse_config,
    run_security_curve,
    run_transfer_matrix,
)


def base_doc(**over):
    doc = {
        "dataset": {"source": "synthetic", "n": 120, "d": 2, "separation": 3.0},
        "split": {
            "target_train_n": 40,
            "surrogate_train_n": 40,
            "validation_n": 20,
            "test_n": 20,
        },
        "scenario": "white_box",
        "attack": "evasion",
        "constraint": {"p": 2, "max_iters": 60, "line_search_max": 10},
        "budgets": [0.0, 0.2, 0.4],
        "models": {
            "targets": [
                {"name": "logreg", "family": "logistic", "C": 5.0},
                {"name": "ridge", "family": "ridge", "alpha": 2.0},
            ],
            "surrogates": [{"name": "sur", "family": "logistic", "C": 1.0}],
        },
        "repetitions": 1,
        "n_attack_points": 15,
        "seed": 1,
    }
    doc.update(over)
    return doc


def write_config(tmp_path, doc, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


class TestParseConfig:
    def test_round_trip_via_yaml(self, tmp_path):
        cfg = load_config(write_config(tmp_path, base_doc()))
        assert cfg.budgets == (0.0, 0.2, 0.4)
        assert [n for n, _ in cfg.targets] == ["logreg", "ridge"]
        assert cfg.targets[0][1].C == 5.0

    def test_nested_spec_block_equivalent(self):
        flat = parse_config(base_doc())
        doc = base_doc()
        doc["models"]["targets"][0] = {
            "name": "logreg",
            "spec": {"family": "logistic", "C": 5.0},
        }
        nested = parse_config(doc)
        assert nested.targets[0][1] == flat.targets[0][1]

    @pytest.mark.parametrize(
        "budgets", [[0.3, 0.5], [0.0, 0.4, 0.2], []]
    )
    def test_bad_budget_grids(self, budgets):
        doc = base_doc(budgets=budgets)
        if budgets == []:
            # empty grid passes the ordering check but leaves no budget
            doc["budgets"] = [0.1]
        with pytest.raises(ConfigError):
            parse_config(doc)

    def test_unknown_scenario_and_attack(self):
        with pytest.raises(ConfigError):
            parse_config(base_doc(scenario="grey_box"))
        with pytest.raises(ConfigError):
            parse_config(base_doc(attack="backdoor"))

    def test_targets_required(self):
        doc = base_doc()
        doc["models"]["targets"] = []
        with pytest.raises(ConfigError):
            parse_config(doc)

    def test_black_box_needs_surrogates(self):
        doc = base_doc(scenario="black_box")
        doc["models"]["surrogates"] = []
        with pytest.raises(ConfigError):
            parse_config(doc)

    def test_bad_model_entry(self):
        doc = base_doc()
        doc["models"]["targets"][0] = {"name": "x", "family": "logistic", "C": -1}
        with pytest.raises(ConfigError):
            parse_config(doc)

    def test_config_hash_sensitivity(self):
        a = parse_config(base_doc())
        b = parse_config(base_doc())
        c = parse_config(base_doc(seed=2))
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash(c)


class TestBuildDataset:
    def test_synthetic_seeding_per_rep(self):
        cfg = parse_config(base_doc())
        a = build_dataset(cfg, 0)
        b = build_dataset(cfg, 0)
        c = build_dataset(cfg, 1)
        assert np.array_equal(a.X, b.X)
        assert not np.array_equal(a.X, c.X)

    def test_csv_source(self, tmp_path):
        from transferlab.data import save_csv, synthetic_gaussians

        ds = synthetic_gaussians(20, 3, 2.0, seed=0)
        path = tmp_path / "d.csv"
        save_csv(ds, path)
        doc = base_doc(dataset={"source": "csv", "path": str(path)})
        cfg = parse_config(doc)
        loaded = build_dataset(cfg, 0)
        assert np.array_equal(loaded.X, ds.X)

    def test_unknown_source(self):
        cfg = parse_config(base_doc(dataset={"source": "parquet", "n": 10, "d": 2}))
        with pytest.raises(ConfigError):
            build_dataset(cfg, 0)


class TestSecurityCurve:
    def test_black_box_config_rejected(self):
        cfg = parse_config(base_doc(scenario="black_box"))
        with pytest.raises(ConfigError):
            run_security_curve(cfg)

    def test_budget_zero_is_clean_error_and_monotone(self):
        cfg = parse_config(base_doc())
        rows, table, failures = run_security_curve(cfg)
        assert failures == []
        from transferlab.models import fit

        dataset = build_dataset(cfg, 0)
        tgt_train, _, _, _ = harness.split_dataset(cfg, dataset, 0)
        points = harness._attack_points(cfg, harness.split_dataset(cfg, dataset, 0)[3], 0)
        for name, spec in cfg.targets:
            series = [r["mean_error"] for r in table if r["model"] == name]
            assert len(series) == len(cfg.budgets)
            clean = fit(spec, tgt_train).zero_one_error(points)
            assert series[0] == pytest.approx(clean)
            # larger budgets only enlarge the feasible set
            assert all(b >= a - 1e-12 for a, b in zip(series, series[1:]))

    def test_partial_failures_reported(self):
        # a box that excludes every anchor point makes each nonzero-budget
        # cell infeasible without aborting the run
        doc = base_doc()
        doc["constraint"].update({"lb": 2.0, "ub": 3.0})
        cfg = parse_config(doc)
        rows, table, failures = run_security_curve(cfg)
        assert failures
        budgets_ok = {r["budget"] for r in rows}
        assert budgets_ok == {0.0}


class TestTransferMatrix:
    def evasion_cfg(self):
        return parse_config(base_doc(scenario="black_box", budgets=[0.0, 0.4]))

    def test_white_box_config_rejected(self):
        cfg = parse_config(base_doc())
        with pytest.raises(ConfigError):
            run_transfer_matrix(cfg)

    def test_complete_grid_and_ranges(self):
        report, failures = run_transfer_matrix(self.evasion_cfg())
        assert failures == []
        assert report.transfer_matrix.shape == (1, 2)
        assert np.all((report.transfer_matrix >= 0) & (report.transfer_matrix <= 1))
        assert np.all((report.white_box_row >= 0) & (report.white_box_row <= 1))
        assert set(report.S_per_target) == {"logreg", "ridge"}
        assert "sur" in report.V_per_surrogate
        assert report.R_matrix.shape == (1, 2)
        assert np.all(np.abs(report.R_matrix) <= 1 + 1e-9)

    def test_poisoning_grid(self):
        doc = base_doc(
            scenario="black_box",
            attack="poisoning",
            budgets=[0.0, 0.1],
            poisoning={"max_outer_iters": 1, "line_search_max": 4},
        )
        cfg = parse_config(doc)
        report, failures = run_transfer_matrix(cfg)
        assert failures == []
        assert report.notes["attack"] == "poisoning"
        assert np.all((report.transfer_matrix >= 0) & (report.transfer_matrix <= 1))

    def test_poison_cfg_uses_last_budget(self):
        cfg = parse_config(base_doc(attack="poisoning", budgets=[0.0, 0.05, 0.15]))
        pcfg = harness._poison_cfg(cfg, 2, 0)
        assert pcfg.fraction_alpha == pytest.approx(0.15)


class TestEmit:
    def test_byte_identical_rerun(self, tmp_path):
        cfg = parse_config(base_doc(scenario="black_box", budgets=[0.0, 0.3]))
        for d in ("a", "b"):
            report, failures = run_transfer_matrix(cfg)
            harness.emit(report, cfg, str(tmp_path / d), failures)
        cmp = filecmp.dircmp(str(tmp_path / "a"), str(tmp_path / "b"))
        assert cmp.diff_files == []
        assert set(cmp.common_files) >= {"report.json", "transfer_matrix.csv", "manifest.json"}

    def test_curve_emission(self, tmp_path):
        cfg = parse_config(base_doc(budgets=[0.0, 0.2]))
        _, table, failures = run_security_curve(cfg)
        files = harness.emit(table, cfg, str(tmp_path / "out"), failures)
        names = {os.path.basename(f) for f in files}
        assert names == {"curve.csv", "curve.json", "manifest.json"}
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["config_hash"] == config_hash(cfg)

    def test_jobs_parallel_matches_serial(self, tmp_path):
        cfg = parse_config(base_doc(repetitions=2, budgets=[0.0, 0.2]))
        _, serial, _ = run_security_curve(cfg, jobs=1)
        _, parallel, _ = run_security_curve(cfg, jobs=2)
        assert serial == parallel


class TestCli:
    def test_bad_config_exit_2(self, tmp_path):
        path = write_config(tmp_path, base_doc(budgets=[0.5]))
        rc = cli.main(["curve", "--config", path, "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_curve_exit_0(self, tmp_path, capsys):
        path = write_config(tmp_path, base_doc(budgets=[0.0, 0.2]))
        rc = cli.main(["curve", "--config", path, "--out", str(tmp_path / "o")])
        assert rc == 0
        assert (tmp_path / "o" / "curve.csv").exists()
        assert "eps=0.2" in capsys.readouterr().out

    def test_curve_partial_failure_exit_3(self, tmp_path):
        doc = base_doc(budgets=[0.0, 0.2])
        doc["constraint"].update({"lb": 2.0, "ub": 3.0})
        path = write_config(tmp_path, doc)
        rc = cli.main(["curve", "--config", path, "--out", str(tmp_path / "o")])
        assert rc == 3

    def test_train_writes_models(self, tmp_path):
        path = write_config(tmp_path, base_doc())
        out = tmp_path / "models"
        rc = cli.main(["train", "--config", path, "--out", str(out)])
        assert rc == 0
        summary = json.loads((out / "train_summary.json").read_text())
        assert "target_logreg" in summary
        assert (out / "target_logreg.json").exists()

    def test_metrics_command(self, tmp_path):
        path = write_config(tmp_path, base_doc())
        out = tmp_path / "m"
        rc = cli.main(["metrics", "--config", path, "--out", str(out)])
        assert rc == 0
        doc = json.loads((out / "metrics.json").read_text())
        assert set(doc["S"]) == {"logreg", "ridge"}
        assert "sur->logreg" in doc["R"]

    def test_seed_override_changes_hash(self, tmp_path):
        path = write_config(tmp_path, base_doc())
        cfg, _ = cli._load(
            type("A", (), {"config": path, "seed": 9, "out": str(tmp_path)})()
        )
        assert cfg.seed == 9
