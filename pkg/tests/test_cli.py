import csv
import hashlib
import json
from pathlib import Path

import pytest

from tabimg import cli
from tabimg.config import (RunConfig, load_config, parse_config_text,
                           serialize_config)

REPO_ROOT = Path(__file__).resolve().parents[1]

TINY = ["--set", "token_dim=8", "--set", "image_channels=4,8",
        "--set", "attn_heads=2", "--set", "tabular_heads=2",
        "--set", "tabular_layers=1", "--set", "proj_dim=16",
        "--set", "batch_size=8", "--set", "mu=2",
        "--set", "start_pl_epoch=0", "--set", "patience=100"]

TINY_SYNTH = ["--set", "synth_classes=3", "--set", "synth_n_train=96",
              "--set", "synth_n_val=32", "--set", "synth_n_test=32",
              "--set", "synth_label_fraction=0.25",
              "--set", "synth_image_size=16",
              "--set", "synth_tabular_columns=6",
              "--set", "synth_categorical_columns=2"]


def run(argv, capsys):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "ds"
    code = cli.main(["synth", "--out", str(out)] + TINY_SYNTH)
    assert code == 0
    return out


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, tiny_dataset):
    out = tmp_path_factory.mktemp("runs") / "base"
    code = cli.main(["train", "--data", str(tiny_dataset), "--out", str(out),
                     "--set", "max_epochs=2"] + TINY)
    assert code == 0
    return out


class TestSynth:
    def test_default_config_writes_2000_train(self, tmp_path, capsys):
        code, out, _ = run(["synth", "--out", str(tmp_path / "ds")], capsys)
        assert code == 0
        info = json.loads(out)
        assert info["n_train"] == 2000
        assert info["n_labeled"] == 100  # 5% of 2000
        assert (tmp_path / "ds" / "data.csv").exists()

    def test_seed_repeat_identical_checksums(self, tmp_path, capsys):
        digests = []
        for name in ("a", "b"):
            out = tmp_path / name
            code, _, _ = run(["synth", "--out", str(out)] + TINY_SYNTH, capsys)
            assert code == 0
            h = hashlib.sha256((out / "data.csv").read_bytes())
            for img in sorted((out / "images").iterdir())[:5]:
                h.update(img.read_bytes())
            digests.append(h.hexdigest())
        assert digests[0] == digests[1]

    def test_invalid_config_key_named_in_error(self, tmp_path, capsys):
        cfg = tmp_path / "bad.txt"
        cfg.write_text("no_such_knob = 3\n")
        code, _, err = run(["synth", "--out", str(tmp_path / "ds"),
                            "--config", str(cfg)], capsys)
        assert code == 2
        assert "no_such_knob" in err

    def test_nonempty_dir_requires_force(self, tmp_path, capsys):
        out = tmp_path / "ds"
        out.mkdir()
        (out / "junk.txt").write_text("x")
        code, _, err = run(["synth", "--out", str(out)] + TINY_SYNTH, capsys)
        assert code == 2 and "--force" in err
        code, _, _ = run(["synth", "--out", str(out), "--force"] + TINY_SYNTH,
                         capsys)
        assert code == 0
        assert not (out / "junk.txt").exists()

    def test_out_root_env_var(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("TABIMG_OUT_ROOT", str(tmp_path))
        code, _, _ = run(["synth", "--out", "rel_ds"] + TINY_SYNTH, capsys)
        assert code == 0
        assert (tmp_path / "rel_ds" / "data.csv").exists()


class TestTrain:
    def test_shipped_defaults_match_table(self):
        cfg = load_config(REPO_ROOT / "configs" / "defaults.txt")
        assert (cfg.alpha, cfg.beta, cfg.gamma) == (0.2, 3.0, 0.5)
        assert (cfg.lambda_p, cfg.lambda_u) == (1.0, 0.2)
        assert (cfg.tau, cfg.r, cfg.ema_momentum) == (0.9, 0.9, 0.996)
        assert (cfg.mu, cfg.batch_size, cfg.kappa) == (7, 64, 0.1)

    def test_outputs_written(self, trained_run, capsys):
        for name in ("config_effective.txt", "metrics.jsonl",
                     "best.pt", "last.pt"):
            assert (trained_run / name).exists()
        lines = (trained_run / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 2
        assert not (trained_run / ".lock").exists()

    def test_ablate_cgpl_recorded(self, tiny_dataset, tmp_path, capsys):
        out = tmp_path / "run"
        code, _, _ = run(["train", "--data", str(tiny_dataset),
                          "--out", str(out), "--ablate", "cgpl",
                          "--set", "max_epochs=1"] + TINY, capsys)
        assert code == 0
        effective = load_config(out / "config_effective.txt")
        assert effective.lambda_u == 0.0
        assert effective.enable_cgpl is False

    def test_missing_dataset_exit_3(self, tmp_path, capsys):
        code, _, err = run(["train", "--data", str(tmp_path / "nope"),
                            "--out", str(tmp_path / "run")] + TINY, capsys)
        assert code == 3

    def test_locked_dir_exit_2(self, tiny_dataset, tmp_path, capsys):
        out = tmp_path / "run"
        out.mkdir()
        (out / ".lock").write_text("12345")
        code, _, err = run(["train", "--data", str(tiny_dataset),
                            "--out", str(out)] + TINY, capsys)
        assert code == 2 and "lock" in err

    def test_resume_equivalence(self, tiny_dataset, tmp_path, capsys):
        full = tmp_path / "full"
        code, _, _ = run(["train", "--data", str(tiny_dataset),
                          "--out", str(full),
                          "--set", "max_epochs=2"] + TINY, capsys)
        assert code == 0
        short = tmp_path / "short"
        code, _, _ = run(["train", "--data", str(tiny_dataset),
                          "--out", str(short),
                          "--set", "max_epochs=1"] + TINY, capsys)
        assert code == 0
        resumed = tmp_path / "resumed"
        code, _, _ = run(["train", "--data", str(tiny_dataset),
                          "--out", str(resumed),
                          "--resume", str(short / "last.pt"),
                          "--set", "max_epochs=2"] + TINY, capsys)
        assert code == 0
        want = json.loads((full / "metrics.jsonl").read_text()
                          .splitlines()[1])
        got = json.loads((resumed / "metrics.jsonl").read_text()
                         .splitlines()[0])
        assert got["epoch"] == want["epoch"] == 1
        assert got["loss"] == pytest.approx(want["loss"], abs=1e-6)
        assert got["val_metric"] == pytest.approx(want["val_metric"], abs=1e-6)


class TestEval:
    def test_json_fields(self, tiny_dataset, trained_run, capsys):
        code, out, _ = run(["eval", "--data", str(tiny_dataset),
                            "--checkpoint", str(trained_run / "best.pt"),
                            "--split", "test"] + TINY, capsys)
        assert code == 0
        result = json.loads(out)
        assert set(result) == {"metric", "value", "n_samples",
                               "checkpoint_hash"}
        assert result["n_samples"] == 32
        assert 0.0 <= result["value"] <= 1.0
        assert len(result["checkpoint_hash"]) == 16

    def test_multiclass_auc_in_unit_interval(self, tiny_dataset, trained_run,
                                             tmp_path, capsys):
        out_json = tmp_path / "eval.json"
        code, out, _ = run(["eval", "--data", str(tiny_dataset),
                            "--checkpoint", str(trained_run / "best.pt"),
                            "--metric", "auc", "--out", str(out_json)] + TINY,
                           capsys)
        assert code == 0
        result = json.loads(out)
        assert result["metric"] == "auc"
        assert 0.0 <= result["value"] <= 1.0
        assert json.loads(out_json.read_text()) == result


class TestDiagnose:
    def test_empty_log_exit_zero(self, tmp_path, capsys):
        log = tmp_path / "metrics.jsonl"
        log.write_text("")
        code, out, _ = run(["diagnose", "--metrics", str(log),
                            "--out", str(tmp_path / "figs")], capsys)
        assert code == 0
        assert (tmp_path / "figs" / "pseudo_label_quality.png").exists()
        assert (tmp_path / "figs" / "case_ratios.png").exists()
        assert json.loads(out)["epochs"] == 0

    def test_series_csv_matches_log(self, trained_run, tmp_path, capsys):
        code, out, _ = run(["diagnose",
                            "--metrics", str(trained_run / "metrics.jsonl"),
                            "--out", str(tmp_path / "figs")], capsys)
        assert code == 0
        with open(tmp_path / "figs" / "series.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2  # one per logged epoch
        for row in rows:
            total = sum(float(row[k]) for k in
                        ("case1", "case2i", "case2t", "case3"))
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_malformed_lines_skipped_with_count(self, trained_run, tmp_path,
                                                capsys):
        log = tmp_path / "metrics.jsonl"
        good = (trained_run / "metrics.jsonl").read_text().splitlines()
        log.write_text("\n".join([good[0], "{not json", good[1], "x"]) + "\n")
        code, out, _ = run(["diagnose", "--metrics", str(log),
                            "--out", str(tmp_path / "figs")], capsys)
        assert code == 0
        info = json.loads(out)
        assert info["epochs"] == 2 and info["skipped_lines"] == 2


class TestConfigContract:
    def test_roundtrip_identity(self):
        cfg = RunConfig(alpha=0.7, beta=1.25, image_channels="8,16",
                        metric="auc", enable_pgls=False, seed=11)
        again = parse_config_text(serialize_config(cfg))
        assert again == cfg
        assert parse_config_text(serialize_config(again)) == again

    def test_diagnose_keys_produced_by_diagnostics(self, trained_run):
        record = json.loads((trained_run / "metrics.jsonl").read_text()
                            .splitlines()[0])
        for key in cli.DIAG_SERIES + ["case_ratios"]:
            assert key in record
