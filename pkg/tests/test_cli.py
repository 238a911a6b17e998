import json
import os

import numpy as np
import pytest

from pguide.cli import (
    DEFAULT_CONFIG,
    canonical_json,
    main,
    resolve_config,
    run_dir_for,
)
from pguide.prior import load_prior


SMALL = {
    "dataset": {"n": 600},
    "prior": {"epochs": 400, "lr": 0.1},
    "flow": {"steps": 80, "batch": 64, "hidden": [16, 16], "embed_dim": 4,
             "fourier": 2},
    "sampling": {"n": 20, "steps": 10, "w": 1.5},
    "demo": {"n": 40, "steps": 10, "seeds": [1, 2, 3]},
}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "config.json"
    cfg = dict(SMALL)
    cfg["out"] = str(tmp_path / "runs")
    path.write_text(json.dumps(cfg))
    return path


def _run(args):
    return main([a for a in args if a is not None])


def _run_dir(config_path, *sets):
    cfg = resolve_config(str(config_path), sets=sets)
    return run_dir_for(cfg)


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = resolve_config(None)
        assert cfg == DEFAULT_CONFIG

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"nope": 1}')
        assert _run(["train-prior", "--config", str(path)]) == 2

    def test_set_override_changes_run_dir(self, small_config):
        base = _run_dir(small_config)
        other = _run_dir(small_config, "seed=123")
        assert base != other

    def test_set_parses_json_values(self):
        cfg = resolve_config(None, sets=["sampling.w=[1.0, 2.0]", "seed=5"])
        assert cfg["sampling"]["w"] == [1.0, 2.0]
        assert cfg["seed"] == 5

    def test_config_echo_matches_resolved(self, small_config):
        assert _run(["train-prior", "--config", str(small_config)]) == 0
        run_dir = _run_dir(small_config)
        echoed = (open(os.path.join(run_dir, "config.json")).read())
        assert echoed == canonical_json(resolve_config(str(small_config)))


class TestTrainPrior:
    def test_writes_checkpoint_near_centers(self, small_config):
        assert _run(["train-prior", "--config", str(small_config)]) == 0
        run_dir = _run_dir(small_config)
        prior = load_prior(os.path.join(run_dir, "prior.json"))
        assert np.all(np.abs(prior.mu.value[0] - [5.0, 0.0]) < 0.1)
        assert os.path.exists(os.path.join(run_dir, "prior_history.csv"))

    def test_rerun_byte_identical(self, small_config):
        _run(["train-prior", "--config", str(small_config)])
        run_dir = _run_dir(small_config)
        first = open(os.path.join(run_dir, "prior.json"), "rb").read()
        _run(["train-prior", "--config", str(small_config)])
        second = open(os.path.join(run_dir, "prior.json"), "rb").read()
        assert first == second

    def test_creates_missing_out_dir(self, tmp_path):
        path = tmp_path / "c.json"
        cfg = dict(SMALL)
        cfg["out"] = str(tmp_path / "deep" / "nested" / "runs")
        path.write_text(json.dumps(cfg))
        assert _run(["train-prior", "--config", str(path)]) == 0
        assert os.path.isdir(cfg["out"])


class TestTrainFlow:
    def test_stage2_without_prior_names_field(self, small_config, capsys):
        assert _run(["train-flow", "--config", str(small_config)]) == 2
        assert "flow.prior_checkpoint" in capsys.readouterr().err

    def test_baseline_needs_no_prior(self, small_config):
        assert _run(["train-flow", "--config", str(small_config),
                     "--set", "flow.regime=cfm_baseline"]) == 0

    def test_stage2_after_prior(self, small_config):
        assert _run(["train-prior", "--config", str(small_config)]) == 0
        assert _run(["train-flow", "--config", str(small_config)]) == 0
        run_dir = _run_dir(small_config)
        assert os.path.exists(os.path.join(run_dir, "flow.json"))

    def test_corrupt_prior_magic_exits_2(self, small_config, capsys):
        _run(["train-prior", "--config", str(small_config)])
        run_dir = _run_dir(small_config)
        path = os.path.join(run_dir, "prior.json")
        doc = json.load(open(path))
        doc["magic"] = "CORRUPT"
        json.dump(doc, open(path, "w"))
        assert _run(["train-flow", "--config", str(small_config)]) == 2
        assert "prior.json" in capsys.readouterr().err

    def test_warm_start_from_baseline(self, small_config):
        assert _run(["train-prior", "--config", str(small_config)]) == 0
        assert _run(["train-flow", "--config", str(small_config),
                     "--set", "flow.regime=cfm_baseline"]) == 0
        warm = os.path.join(_run_dir(small_config, "flow.regime=cfm_baseline"),
                            "flow.json")
        prior = os.path.join(_run_dir(small_config), "prior.json")
        sets = [f"flow.warm_start={warm}", f"flow.prior_checkpoint={prior}"]
        args = ["train-flow", "--config", str(small_config)]
        for s in sets:
            args += ["--set", s]
        assert _run(args) == 0
        run_dir = _run_dir(small_config, *sets)
        doc = json.load(open(os.path.join(run_dir, "flow.json")))
        assert doc["config"]["warm_start"] == warm

    def test_warm_start_shape_mismatch(self, small_config, tmp_path, capsys):
        from pguide.flow import VelocityNet, save_flow
        from pguide.numcore import Rng
        bad = tmp_path / "bad_flow.json"
        save_flow(VelocityNet(dim=3, n_classes=5, hidden=(4,), embed_dim=2,
                              fourier=1, rng=Rng(0)), bad)
        _run(["train-prior", "--config", str(small_config)])
        prior = os.path.join(_run_dir(small_config), "prior.json")
        assert _run(["train-flow", "--config", str(small_config),
                     "--set", f"flow.warm_start={bad}",
                     "--set", f"flow.prior_checkpoint={prior}"]) == 2
        assert "warm_start" in capsys.readouterr().err

    def test_identical_seeds_identical_checkpoints(self, small_config):
        _run(["train-prior", "--config", str(small_config)])
        _run(["train-flow", "--config", str(small_config)])
        run_dir = _run_dir(small_config)
        first = open(os.path.join(run_dir, "flow.json"), "rb").read()
        _run(["train-flow", "--config", str(small_config)])
        second = open(os.path.join(run_dir, "flow.json"), "rb").read()
        assert first == second


@pytest.fixture
def trained_run(small_config):
    _run(["train-prior", "--config", str(small_config)])
    _run(["train-flow", "--config", str(small_config)])
    return small_config


class TestSample:
    def test_metrics_keys_and_eval_count(self, trained_run):
        assert _run(["sample", "--config", str(trained_run)]) == 0
        run_dir = _run_dir(trained_run)
        doc = json.load(open(os.path.join(run_dir, "metrics.json")))
        block = doc["runs"][0]
        for key in ("mode", "w", "n", "steps", "eval_count_total",
                    "mode_accuracy", "per_class_accuracy", "seed"):
            assert key in block
        assert block["eval_count_total"] == 20 * 10   # single pass
        assert os.path.exists(os.path.join(run_dir, "samples.csv"))
        assert os.path.exists(os.path.join(run_dir, "trajectories.csv"))

    def _checkpoint_overrides(self, trained_run):
        """Point a derived config at the base run's trained checkpoints."""
        base = _run_dir(trained_run)
        return [
            "--set", f"flow.prior_checkpoint={os.path.join(base, 'prior.json')}",
            "--set", f"sampling.flow_checkpoint={os.path.join(base, 'flow.json')}",
        ]

    def test_dual_pass_doubles_evals(self, trained_run):
        overrides = self._checkpoint_overrides(trained_run)
        assert _run(["sample", "--config", str(trained_run),
                     "--set", "sampling.mode=dual_cfg", *overrides]) == 0
        run_dir = _run_dir(trained_run, "sampling.mode=dual_cfg",
                           *overrides[1::2])
        doc = json.load(open(os.path.join(run_dir, "metrics.json")))
        assert doc["runs"][0]["eval_count_total"] == 2 * 20 * 10

    def test_w_sweep_emits_blocks(self, trained_run):
        overrides = self._checkpoint_overrides(trained_run)
        assert _run(["sample", "--config", str(trained_run),
                     "--set", "sampling.w=[1.0, 1.5, 2.0]", *overrides]) == 0
        run_dir = _run_dir(trained_run, "sampling.w=[1.0, 1.5, 2.0]",
                           *overrides[1::2])
        doc = json.load(open(os.path.join(run_dir, "metrics.json")))
        assert len(doc["runs"]) == 3
        assert [b["w"] for b in doc["runs"]] == [1.0, 1.5, 2.0]

    def test_joint_mode_block(self, trained_run):
        overrides = self._checkpoint_overrides(trained_run)
        sets = ["sampling.mode=joint", "sampling.w_pg=1.2",
                "sampling.w_cfg=1.5"]
        args = ["sample", "--config", str(trained_run)]
        for s in sets:
            args += ["--set", s]
        assert _run(args + overrides) == 0
        run_dir = _run_dir(trained_run, *sets, *overrides[1::2])
        block = json.load(open(os.path.join(run_dir, "metrics.json")))["runs"][0]
        assert block["w"] == {"w_pg": 1.2, "w_cfg": 1.5}
        assert block["eval_count_total"] == 2 * 20 * 10   # dual pass

    def test_dist_cfg_block_labeled_diagnostic(self, trained_run):
        overrides = self._checkpoint_overrides(trained_run)
        assert _run(["sample", "--config", str(trained_run),
                     "--set", "sampling.mode=dist_cfg", *overrides]) == 0
        run_dir = _run_dir(trained_run, "sampling.mode=dist_cfg",
                           *overrides[1::2])
        block = json.load(open(os.path.join(run_dir, "metrics.json")))["runs"][0]
        assert block["note"] == "diagnostic"

    def test_metrics_rerun_byte_identical(self, trained_run):
        _run(["sample", "--config", str(trained_run)])
        run_dir = _run_dir(trained_run)
        first = open(os.path.join(run_dir, "metrics.json"), "rb").read()
        _run(["sample", "--config", str(trained_run)])
        second = open(os.path.join(run_dir, "metrics.json"), "rb").read()
        assert first == second


class TestVerifyCommand:
    def test_analytic_only_passes_on_fresh_repo(self, small_config):
        assert _run(["verify", "--config", str(small_config)]) == 0
        run_dir = _run_dir(small_config)
        doc = json.load(open(os.path.join(run_dir, "verify_report.json")))
        names = [c["name"] for c in doc["checks"]]
        assert "score_connection" in names
        assert "grad_attenuation" in names
        assert "dist_cfg_closed_form" in names
        assert "eval_count_law" in names
        assert all(c["pass"] for c in doc["checks"])

    def test_full_suite_with_models(self, trained_run):
        # the quickly trained test model may legitimately miss the exponent
        # gates, so allow exit 1; the blocks themselves must all be present
        assert _run(["verify", "--config", str(trained_run)]) in (0, 1)
        run_dir = _run_dir(trained_run)
        doc = json.load(open(os.path.join(run_dir, "verify_report.json")))
        names = [c["name"] for c in doc["checks"]]
        assert "prior_bayes_optimality" in names
        assert "seed_stats" in names
        assert any(n.startswith("linear_response_trained") for n in names)
        assert any(n.startswith("velocity_response_trained") for n in names)
        analytic = ("score_connection", "grad_attenuation",
                    "dist_cfg_closed_form", "eval_count_law")
        for check in doc["checks"]:
            if check["name"] in analytic:
                assert check["pass"]


class TestDemoDistcfg:
    def test_needs_models(self, small_config):
        assert _run(["demo-distcfg", "--config", str(small_config)]) == 2

    def test_emits_paired_accuracies(self, trained_run):
        assert _run(["demo-distcfg", "--config", str(trained_run)]) == 0
        run_dir = _run_dir(trained_run)
        doc = json.load(open(os.path.join(run_dir, "demo_distcfg.json")))
        assert len(doc["per_seed"]) == 3
        for row in doc["per_seed"]:
            assert "pguide" in row and "dist_cfg" in row
        assert "seed_moment_report" in doc
        assert isinstance(doc["expected_ordering_held"], bool)
