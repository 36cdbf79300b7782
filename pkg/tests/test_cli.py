from __future__ import annotations

import csv
import hashlib
import json

import pytest

from supportq.cli import ConfigError, RunConfig, load_run_config, main
from supportq.env import StagedEnv, StagedEnvConfig
from supportq.ingest import save_episodes


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


TINY = ["--demo-episodes", "30", "--epochs", "1", "--eval-episodes", "15", "--seed", "5"]


def train(out, extra=()):
    rc = main(["train", "--mode", "env", "--reward", "imit", "--backend", "mlp",
               "--out-dir", str(out), *TINY, *extra])
    assert rc == 0
    return out / "checkpoint.npz"


class TestConfig:
    def test_defaults_mirror_training_setup(self):
        cfg = RunConfig()
        assert cfg.gamma == 0.85
        assert cfg.batch_size == 64
        assert cfg.target_sync_every == 10
        assert cfg.epochs == 4
        assert cfg.window == 2048
        assert cfg.buffer_capacity == 12_000

    def test_unknown_file_key_rejected(self, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text("gamma = 0.9\nnonsense = 1\n")
        with pytest.raises(ConfigError):
            load_run_config(str(config))

    def test_precedence_file_env_flags(self, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text("# comment line\ngamma = 0.5\nseed = 1\n")
        cfg = load_run_config(
            str(config),
            environ={"SUPPORTQ_GAMMA": "0.7", "HOME": "/tmp"},
            overrides={"seed": 9},
        )
        assert cfg.gamma == 0.7  # env beats file
        assert cfg.seed == 9  # flag beats both

    def test_unknown_env_override_rejected(self):
        with pytest.raises(ConfigError):
            load_run_config(environ={"SUPPORTQ_TYPO": "1"})

    def test_validation_errors(self):
        with pytest.raises(ConfigError):
            load_run_config(overrides={"mode": "dataset"})  # no dataset_path
        with pytest.raises(ConfigError):
            load_run_config(overrides={"reward": "env", "mode": "dataset", "dataset_path": "x"})
        with pytest.raises(ConfigError):
            load_run_config(overrides={"gamma": 1.0})

    def test_bool_coercion(self, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text("deterministic = true\nsample_in_order = 0\n")
        cfg = load_run_config(str(config))
        assert cfg.deterministic is True
        assert cfg.sample_in_order is False


class TestTrainCommand:
    def test_env_imitation_produces_artifacts(self, tmp_path):
        out = tmp_path / "run"
        train(out)
        for name in ("checkpoint.npz", "loss.csv", "vocab.txt", "manifest.json"):
            assert (out / name).exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["config"]["gamma"] == 0.85

    def test_missing_dataset_path_is_config_error(self, tmp_path):
        rc = main(["train", "--mode", "dataset", "--out-dir", str(tmp_path / "x")])
        assert rc == 2

    def test_env_staged_alias_spelling(self, tmp_path):
        out = tmp_path / "alias"
        rc = main(["train", "--env", "staged", "--reward", "imit", "--gamma", "0.85",
                   "--out-dir", str(out), *TINY])
        assert rc == 0
        assert (out / "checkpoint.npz").exists()

    def test_dataset_mode_round_trip(self, tmp_path, catalog):
        env = StagedEnv(StagedEnvConfig(seed=9), catalog=catalog)
        corpus = tmp_path / "corpus.json"
        save_episodes(corpus, env.demo_episodes(40, seed=1), catalog)
        out = tmp_path / "run"
        rc = main(["train", "--mode", "dataset", "--dataset-path", str(corpus),
                   "--reward", "distill", "--epochs", "1", "--out-dir", str(out), "--seed", "3"])
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert str(corpus) in manifest["inputs"]

    def test_identical_seeds_identical_checkpoints(self, tmp_path):
        a = train(tmp_path / "a")
        b = train(tmp_path / "b")
        assert sha(a) == sha(b)

    def test_different_seed_changes_checkpoint(self, tmp_path):
        a = train(tmp_path / "a")
        rc = main(["train", "--mode", "env", "--reward", "imit", "--out-dir",
                   str(tmp_path / "c"), "--demo-episodes", "30", "--epochs", "1", "--seed", "6"])
        assert rc == 0
        assert sha(a) != sha(tmp_path / "c" / "checkpoint.npz")


class TestEvalCommand:
    def test_eval_writes_reports(self, tmp_path):
        out = tmp_path / "run"
        ckpt = train(out)
        rc = main(["eval", "--mode", "env", "--checkpoint", str(ckpt),
                   "--out-dir", str(out), *TINY])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        for key in ("accuracy", "proficiency", "preference_bias", "bleu2",
                    "rouge_l", "distinct2", "cider", "confusion", "transition"):
            assert key in report
        assert len(report["confusion"]) == 8

    def test_per_strategy_supports_sum_to_n(self, tmp_path):
        out = tmp_path / "run"
        ckpt = train(out)
        main(["eval", "--mode", "env", "--checkpoint", str(ckpt), "--out-dir", str(out), *TINY])
        report = json.loads((out / "report.json").read_text())
        with open(out / "per_strategy.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 8
        assert sum(int(r["support"]) for r in rows) == report["n_samples"]

    def test_never_predicted_strategy_reports_zero_acc(self, tmp_path):
        out = tmp_path / "run"
        ckpt = train(out)
        main(["eval", "--mode", "env", "--checkpoint", str(ckpt), "--out-dir", str(out), *TINY])
        report = json.loads((out / "report.json").read_text())
        confusion = report["confusion"]
        with open(out / "per_strategy.csv") as fh:
            rows = list(csv.DictReader(fh))
        for s, row in enumerate(rows):
            if sum(confusion[s]) == 0 and int(row["support"]) > 0:  # never predicted
                assert float(row["acc"]) == 0.0

    def test_checkpoint_mismatch_detected(self, tmp_path):
        out = tmp_path / "run"
        ckpt = train(out)
        (out / "vocab.txt").write_text("tampered\nvocab\n")
        rc = main(["eval", "--mode", "env", "--checkpoint", str(ckpt), "--out-dir", str(out), *TINY])
        assert rc == 4

    def test_eval_determinism_byte_identical_reports(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        ckpt_a, ckpt_b = train(out_a), train(out_b)
        for out, ckpt in ((out_a, ckpt_a), (out_b, ckpt_b)):
            rc = main(["eval", "--mode", "env", "--checkpoint", str(ckpt),
                       "--out-dir", str(out), *TINY, "--deterministic"])
            assert rc == 0
        assert sha(out_a / "report.json") == sha(out_b / "report.json")


class TestSweepCommand:
    def test_rows_match_gamma_list(self, tmp_path):
        out = tmp_path / "sweep"
        rc = main(["sweep", "--mode", "env", "--reward", "imit", "--gammas", "0.5,0.9",
                   "--out-dir", str(out), *TINY])
        assert rc == 0
        with open(out / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [float(r["gamma"]) for r in rows] == [0.5, 0.9]
        for r in rows:
            assert 0.0 <= float(r["acc"]) <= 1.0

    def test_single_gamma_degenerate_table(self, tmp_path):
        out = tmp_path / "sweep1"
        rc = main(["sweep", "--mode", "env", "--gammas", "0.85", "--out-dir", str(out), *TINY])
        assert rc == 0
        with open(out / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1


class TestSimulateCommand:
    def test_simulate_reports_both_policies(self, tmp_path):
        out = tmp_path / "run"
        ckpt = train(out)
        rc = main(["simulate", "--mode", "env", "--checkpoint", str(ckpt),
                   "--episodes", "25", "--out-dir", str(out), *TINY])
        assert rc == 0
        payload = json.loads((out / "simulate.json").read_text())
        policies = [row["policy"] for row in payload["rows"]]
        assert policies == ["greedy", "random"]
        greedy = payload["rows"][0]
        assert "mean_model_q" in greedy
        assert 0.0 <= greedy["stage_upper_mass"] <= 1.0

    def test_zero_episodes_is_data_error(self, tmp_path):
        out = tmp_path / "run"
        ckpt = train(out)
        rc = main(["simulate", "--mode", "env", "--checkpoint", str(ckpt),
                   "--episodes", "0", "--out-dir", str(out), *TINY])
        assert rc == 3


class TestIngestStatsCommand:
    def test_stats_to_stdout_and_file(self, tmp_path, capsys, catalog):
        env = StagedEnv(StagedEnvConfig(seed=9), catalog=catalog)
        corpus = tmp_path / "corpus.json"
        save_episodes(corpus, env.demo_episodes(5, seed=1), catalog)
        out = tmp_path / "stats"
        rc = main(["ingest-stats", "--data", str(corpus), "--out-dir", str(out)])
        assert rc == 0
        printed = json.loads(capsys.readouterr().out)
        assert printed["sessions"] == 5
        assert (out / "stats.json").exists()

    def test_missing_file_is_data_error(self, tmp_path):
        rc = main(["ingest-stats", "--data", str(tmp_path / "nope.json"),
                   "--out-dir", str(tmp_path / "o")])
        assert rc == 3
