"""End-to-end CLI runs: artifacts, exit codes, and digest determinism."""

import json

import numpy as np

from mmlda.cli import main
from mmlda.harness import ExperimentConfig
from mmlda.means import load_mean_set, verify_opt_condition


def write_config(tmp_path, **overrides):
    base = dict(dataset_kind="arcs", num_classes=3, train_size=300, test_size=150,
                noise=0.02, hidden_dims=[16], train_steps=150, batch_size=32,
                seed=0, epsilons=[0.1], attack_kinds=["fgsm"], attack_steps=3,
                cw_search_steps=2, cw_max_iters=30, test_size_cap=None)
    base.pop("test_size_cap")
    base.update(overrides)
    path = tmp_path / "config.json"
    ExperimentConfig(**base).save(path)
    return path


def read_summary(out_dir):
    with open(out_dir / "summary.json") as fh:
        return json.load(fh)


class TestMeansCommand:
    def test_writes_valid_mean_set(self, tmp_path):
        out = tmp_path / "m"
        code = main(["means", "--sq-norm", "4", "--dim", "5", "--classes", "4",
                     "--out", str(out)])
        assert code == 0
        ms = load_mean_set(out / "means.txt")
        assert verify_opt_condition(ms, tol=1e-9).passed

    def test_rejects_impossible_geometry(self, tmp_path, capsys):
        code = main(["means", "--dim", "2", "--classes", "7", "--out", str(tmp_path)])
        assert code == 1
        assert "error" in capsys.readouterr().err


class TestTrainAttackPipeline:
    def test_full_pipeline_and_determinism(self, tmp_path):
        config = write_config(tmp_path)
        run_a = tmp_path / "a"
        run_b = tmp_path / "b"
        assert main(["train", "--config", str(config), "--out", str(run_a)]) == 0
        assert main(["train", "--config", str(config), "--out", str(run_b)]) == 0
        summary_a, summary_b = read_summary(run_a), read_summary(run_b)
        assert summary_a["digest"] == summary_b["digest"]
        assert summary_a["checkpoint_digest"] == summary_b["checkpoint_digest"]

        attack_a = tmp_path / "atk_a"
        attack_b = tmp_path / "atk_b"
        ckpt = str(run_a / "checkpoint.json")
        assert main(["attack", "--config", str(config), "--checkpoint", ckpt,
                     "--out", str(attack_a)]) == 0
        assert main(["attack", "--config", str(config), "--checkpoint", ckpt,
                     "--out", str(attack_b)]) == 0
        assert read_summary(attack_a)["digest"] == read_summary(attack_b)["digest"]
        report = json.loads((attack_a / "report.json").read_text())
        assert 0.0 <= report["clean_error"] <= 1.0
        grid = (attack_a / "attack_grid.csv").read_text().splitlines()
        assert grid[0] == "attack,epsilon,accuracy"
        # per-cell artifacts: example-level rows and the adversarial tensors
        cell_lines = (attack_a / "fgsm_eps0.1.csv").read_text().strip().splitlines()
        assert len(cell_lines) == 150 + 1
        from mmlda.net import load_tensor
        adv = load_tensor(attack_a / "fgsm_eps0.1_adv.json")
        assert adv.shape == (150, 2)
        assert np.abs(adv).max() <= 0.5

    def test_seed_override_changes_digest(self, tmp_path):
        config = write_config(tmp_path)
        run_a, run_b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", str(config), "--out", str(run_a)]) == 0
        assert main(["train", "--config", str(config), "--seed", "9",
                     "--out", str(run_b)]) == 0
        assert read_summary(run_a)["checkpoint_digest"] != read_summary(run_b)["checkpoint_digest"]

    def test_missing_config_file_fails(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "nope.json")]) == 1
        assert "error" in capsys.readouterr().err


class TestCwCommand:
    def test_reports_distortion(self, tmp_path):
        config = write_config(tmp_path, test_size=30)
        run = tmp_path / "run"
        assert main(["train", "--config", str(config), "--out", str(run)]) == 0
        out = tmp_path / "cw"
        assert main(["cw", "--config", str(config),
                     "--checkpoint", str(run / "checkpoint.json"),
                     "--out", str(out)]) == 0
        summary = read_summary(out)
        assert summary["attacked"] + summary["excluded"] == 30


class TestFinetuneCommand:
    def test_finetune_writes_new_checkpoint(self, tmp_path):
        config = write_config(tmp_path, finetune_mode="sat", finetune_steps=5)
        run = tmp_path / "run"
        assert main(["train", "--config", str(config), "--out", str(run)]) == 0
        out = tmp_path / "ft"
        assert main(["finetune", "--config", str(config),
                     "--checkpoint", str(run / "checkpoint.json"),
                     "--out", str(out)]) == 0
        assert (out / "finetuned.json").exists()

    def test_mode_none_is_an_error(self, tmp_path, capsys):
        config = write_config(tmp_path)
        run = tmp_path / "run"
        assert main(["train", "--config", str(config), "--out", str(run)]) == 0
        code = main(["finetune", "--config", str(config),
                     "--checkpoint", str(run / "checkpoint.json"),
                     "--out", str(tmp_path / "ft")])
        assert code == 1
        assert "finetune_mode" in capsys.readouterr().err


class TestSelectCCommand:
    def test_emits_table(self, tmp_path):
        config = write_config(tmp_path, train_size=200, train_steps=40)
        out = tmp_path / "sel"
        assert main(["select-c", "--config", str(config), "--candidates", "1,100",
                     "--folds", "3", "--out", str(out)]) == 0
        lines = (out / "select_c.csv").read_text().strip().splitlines()
        assert lines[0] == "sq_norm,mean_error,sd_error"
        assert len(lines) == 3


class TestBiasCommand:
    def test_runs_ten_counterparts(self, tmp_path):
        config = write_config(tmp_path, dataset_kind="gmm_input", num_classes=10,
                              train_size=300, test_size=200, noise=0.06,
                              hidden_dims=[16], train_steps=30)
        out = tmp_path / "bias"
        assert main(["bias", "--config", str(config), "--kind", "bp2",
                     "--out", str(out)]) == 0
        summary = read_summary(out)
        assert len(summary["rows"]) == 10


class TestVerifyCommand:
    def test_passes_and_writes_csv(self, tmp_path, capsys):
        out = tmp_path / "verify"
        code = main(["verify", "--mc-samples", "100000", "--out", str(out)])
        assert code == 0
        lines = (out / "verify.csv").read_text().strip().splitlines()
        assert lines[0] == "check,value,threshold,pass"
        assert all(line.rsplit(",", 1)[1] == "1" for line in lines[1:])
        mc = (out / "boundary_mc.csv").read_text().strip().splitlines()
        assert mc[0] == "delta,zeta,closed_form,mc_estimate,standard_error,pass"
        assert len(mc) == 9  # 4 distances x 2 prior ratios
        stdout = capsys.readouterr().out
        assert "PASS" in stdout and "FAIL" not in stdout
        assert "closed_form" in stdout  # the table itself is printed as CSV
        assert read_summary(out)["all_passed"] is True


class TestExportFeaturesCommand:
    def test_writes_feature_csv(self, tmp_path):
        config = write_config(tmp_path, test_size=25)
        run = tmp_path / "run"
        assert main(["train", "--config", str(config), "--out", str(run)]) == 0
        out = tmp_path / "feat"
        assert main(["export-features", "--config", str(config),
                     "--checkpoint", str(run / "checkpoint.json"),
                     "--out", str(out)]) == 0
        lines = (out / "features.csv").read_text().strip().splitlines()
        assert len(lines) == 26
