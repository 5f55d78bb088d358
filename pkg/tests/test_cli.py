"""End-to-end tests of the command-line interface (in-process)."""

import hashlib
import json

import numpy as np
import pytest

from echospike.cli import main, validate_report


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture
def toy_espk(tmp_path):
    path = tmp_path / "toy.espk"
    code = run([
        "synth", "--classes", 3, "--channels", 12, "--steps", 20,
        "--samples", 90, "--rate-hi", 0.3, "--rate-lo", 0.05,
        "--seed", 7, "--out", path,
    ])
    assert code == 0
    return path


class TestSynth:
    def test_deterministic_output(self, tmp_path):
        digests = []
        for name in ("a.espk", "b.espk"):
            out = tmp_path / name
            assert run([
                "synth", "--classes", 5, "--channels", 20, "--steps", 50,
                "--samples", 100, "--seed", 7, "--out", out,
            ]) == 0
            digests.append(sha(out))
        assert digests[0] == digests[1]

    def test_motif_capacity_usage_error(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            run(["synth", "--classes", 30, "--channels", 20, "--steps", 5,
                 "--samples", 10, "--out", tmp_path / "x.espk"])
        assert exc.value.code == 2
        assert "disjoint motifs" in capsys.readouterr().err

    def test_bad_rates_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run(["synth", "--classes", 2, "--channels", 10, "--steps", 5,
                 "--samples", 10, "--rate-hi", 0.1, "--rate-lo", 0.5,
                 "--out", tmp_path / "x.espk"])
        assert exc.value.code == 2


class TestTrain:
    def test_smoke_run_writes_artifacts(self, toy_espk, tmp_path, capsys):
        out = tmp_path / "run"
        code = run([
            "train", "--data", toy_espk, "--holdout", 30, "--layers", "16,16",
            "--epochs", 3, "--head", "lsq", "--wiring", "all",
            "--seed", 1, "--out", out,
        ])
        assert code == 0
        assert (out / "checkpoint.json").exists()
        assert (out / "checkpoint.bin").exists()
        assert (out / "head_lsq.json").exists()
        lines = [json.loads(l) for l in (out / "metrics.jsonl").read_text().splitlines()]
        phase1 = [l for l in lines if l["type"] == "phase1_epoch"]
        assert len(phase1) == 3 * 2  # epochs x layers
        evals = [l for l in lines if l["type"] == "evaluation"]
        assert len(evals) == 1
        manifest = json.loads((out / "checkpoint.json").read_text())
        assert manifest["run_config"]["seed"] == 1
        assert manifest["rng_state"] is not None

    def test_batch_paths_complete(self, toy_espk, tmp_path):
        for batch, name in ((1, "b1"), (4, "b4")):
            code = run([
                "train", "--data", toy_espk, "--layers", "8", "--epochs", 1,
                "--batch", batch, "--head", "none", "--seed", 2,
                "--out", tmp_path / name,
            ])
            assert code == 0
        m1 = json.loads((tmp_path / "b1/metrics.jsonl").read_text().splitlines()[0])
        m4 = json.loads((tmp_path / "b4/metrics.jsonl").read_text().splitlines()[0])
        assert np.isfinite(m1["firing_rate"]) and np.isfinite(m4["firing_rate"])

    def test_identical_seeds_bit_identical_checkpoints(self, toy_espk, tmp_path):
        digests = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert run([
                "train", "--data", toy_espk, "--layers", "16,16", "--epochs", 2,
                "--head", "none", "--seed", 11, "--out", out,
            ]) == 0
            digests.append((sha(out / "checkpoint.bin"),
                            json.loads((out / "checkpoint.json").read_text())))
        assert digests[0][0] == digests[1][0]
        assert digests[0][1]["metrics"] == digests[1][1]["metrics"]

    def test_from_manifest_reruns_identically(self, toy_espk, tmp_path):
        first = tmp_path / "first"
        assert run([
            "train", "--data", toy_espk, "--layers", "8", "--epochs", 2,
            "--head", "none", "--seed", 3, "--out", first,
        ]) == 0
        again = tmp_path / "again"
        assert run([
            "train", "--from-manifest", first / "checkpoint.json", "--out", again,
        ]) == 0
        assert sha(first / "checkpoint.bin") == sha(again / "checkpoint.bin")

    def test_resume_reaches_target_epochs(self, toy_espk, tmp_path):
        out = tmp_path / "res"
        assert run([
            "train", "--data", toy_espk, "--layers", "8", "--epochs", 2,
            "--head", "none", "--seed", 5, "--out", out,
        ]) == 0
        assert run([
            "train", "--data", toy_espk, "--layers", "8", "--epochs", 5,
            "--head", "none", "--seed", 5, "--out", out,
            "--resume", out / "checkpoint.json",
        ]) == 0
        manifest = json.loads((out / "checkpoint.json").read_text())
        assert manifest["epochs_trained"] == 5

    def test_augmented_and_heads_variants(self, toy_espk, tmp_path):
        for head in ("gd", "fewshot"):
            code = run([
                "train", "--data", toy_espk, "--holdout", 30, "--layers", "8",
                "--epochs", 1, "--head", head, "--shots", 5, "--head-epochs", 2,
                "--augment-shift", 1, "--seed", 4, "--out", tmp_path / head,
            ])
            assert code == 0
            assert (tmp_path / head / f"head_{head}.json").exists()

    def test_out_dir_env_default(self, toy_espk, tmp_path, monkeypatch):
        out = tmp_path / "from_env"
        monkeypatch.setenv("ECHOSPIKE_OUT_DIR", str(out))
        assert run([
            "train", "--data", toy_espk, "--layers", "8", "--epochs", 1,
            "--head", "none", "--seed", 6,
        ]) == 0
        assert (out / "checkpoint.json").exists()

    def test_missing_data_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            run(["train", "--layers", "8"])
        assert exc.value.code == 2

    def test_runtime_error_exit_code(self, tmp_path):
        assert run([
            "train", "--data", tmp_path / "missing.espk", "--layers", "8",
            "--out", tmp_path / "x",
        ]) == 1


class TestEval:
    def test_reproduces_training_accuracy_exactly(self, toy_espk, tmp_path, capsys):
        out = tmp_path / "run"
        assert run([
            "train", "--data", toy_espk, "--holdout", 30, "--layers", "16",
            "--epochs", 2, "--head", "lsq", "--seed", 9, "--out", out,
        ]) == 0
        lines = [json.loads(l) for l in (out / "metrics.jsonl").read_text().splitlines()]
        trained = [l for l in lines if l["type"] == "evaluation"][0]

        capsys.readouterr()
        report_path = tmp_path / "report.json"
        assert run([
            "eval", "--checkpoint", out / "checkpoint.json", "--data", toy_espk,
            "--report", report_path,
        ]) == 0
        printed = [json.loads(l) for l in capsys.readouterr().out.splitlines()
                   if l.startswith("{")]
        evals = [l for l in printed if l.get("type") == "evaluation"]
        # eval refits on the training split and scores the requested dataset;
        # training accuracy on the head split must match bit for bit
        assert evals[0]["train_acc"] == trained["train_acc"]

        report = json.loads(report_path.read_text())
        validate_report(report)

    def test_eval_with_saved_head(self, toy_espk, tmp_path, capsys):
        out = tmp_path / "run"
        assert run([
            "train", "--data", toy_espk, "--holdout", 30, "--layers", "16",
            "--epochs", 1, "--head", "lsq", "--seed", 9, "--out", out,
        ]) == 0
        capsys.readouterr()
        assert run([
            "eval", "--checkpoint", out / "checkpoint.json", "--data", toy_espk,
            "--head-checkpoint", out / "head_lsq.json",
        ]) == 0
        printed = capsys.readouterr().out
        assert '"head": "lsq"' in printed

    def test_channel_mismatch_clear_error(self, toy_espk, tmp_path, capsys):
        out = tmp_path / "run"
        assert run([
            "train", "--data", toy_espk, "--layers", "8", "--epochs", 1,
            "--head", "none", "--seed", 1, "--out", out,
        ]) == 0
        other = tmp_path / "other.espk"
        assert run([
            "synth", "--classes", 2, "--channels", 9, "--steps", 20,
            "--samples", 10, "--out", other,
        ]) == 0
        assert run([
            "eval", "--checkpoint", out / "checkpoint.json", "--data", other,
        ]) == 1
        assert "channels" in capsys.readouterr().err


class TestReportSchema:
    def test_valid_report_passes(self):
        validate_report({
            "format": "espp-eval-report", "version": 1,
            "checkpoint": "c.json", "dataset": "d.espk",
            "run_config": {"seed": 0},
            "results": [{"head": "lsq", "layer_scope": "all",
                         "train_acc": 0.5, "test_acc": 0.4,
                         "n_train": 10, "n_test": 10}],
        })

    @pytest.mark.parametrize("mutate", [
        lambda r: r.update(format="x"),
        lambda r: r.update(version="1"),
        lambda r: r.update(results=[]),
        lambda r: r["results"][0].update(test_acc="high"),
        lambda r: r["results"][0].update(head=7),
    ])
    def test_invalid_reports_rejected(self, mutate):
        report = {
            "format": "espp-eval-report", "version": 1,
            "checkpoint": "c.json", "dataset": "d.espk",
            "run_config": {},
            "results": [{"head": "lsq", "layer_scope": "all",
                         "train_acc": None, "test_acc": 0.4,
                         "n_train": None, "n_test": 10}],
        }
        mutate(report)
        with pytest.raises(ValueError):
            validate_report(report)


class TestInfo:
    def test_info_prints_summary(self, toy_espk, capsys):
        assert run(["info", toy_espk]) == 0
        out = capsys.readouterr().out
        assert "90 samples" in out and "3 classes" in out
