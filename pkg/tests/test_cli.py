"""Command-line surface: artifacts, exit codes, reproducibility, resume."""

import json
import os

import numpy as np
import pytest

from fanet.cli import EXIT_INTERNAL, EXIT_OK, EXIT_USER, main

FAST_TRAIN = ["--epochs", "3", "--batch-size", "2", "--d-k", "2", "--seed", "0"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("data"))
    code = main(["gen", "--out", out, "--n-train", "14", "--n-test", "6", "--seed", "0"])
    assert code == EXIT_OK
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, data_dir):
    out = str(tmp_path_factory.mktemp("run"))
    code = main(["train", "--data", data_dir, "--out", out] + FAST_TRAIN)
    assert code == EXIT_OK
    return out


class TestGen:
    def test_artifacts(self, data_dir):
        for name in ("train.jsonl", "test.jsonl", "manifest.json"):
            assert os.path.exists(os.path.join(data_dir, name))
        with open(os.path.join(data_dir, "manifest.json")) as fh:
            manifest = json.load(fh)
        assert manifest["n_train"] == 14
        assert manifest["seed"] == 0
        assert manifest["spec"]["kind"] == "vision"
        dist = manifest["label_distribution"]["train"]
        assert sum(dist.values()) == 14

    def test_byte_reproducible(self, tmp_path, data_dir):
        out = tmp_path / "again"
        code = main(
            ["gen", "--out", str(out), "--n-train", "14", "--n-test", "6", "--seed", "0"]
        )
        assert code == EXIT_OK
        for name in ("train.jsonl", "test.jsonl", "manifest.json"):
            a = (out / name).read_bytes()
            b = open(os.path.join(data_dir, name), "rb").read()
            assert a == b, name

    def test_seed_changes_data(self, tmp_path, data_dir):
        out = tmp_path / "other"
        main(["gen", "--out", str(out), "--n-train", "14", "--n-test", "6", "--seed", "1"])
        assert (out / "train.jsonl").read_bytes() != open(
            os.path.join(data_dir, "train.jsonl"), "rb"
        ).read()

    def test_document_kind(self, tmp_path):
        out = tmp_path / "docs"
        code = main(
            ["gen", "--kind", "document", "--out", str(out), "--n-train", "4",
             "--n-test", "2", "--seed", "0"]
        )
        assert code == EXIT_OK
        first = json.loads((out / "train.jsonl").read_text().splitlines()[0])
        assert "tokens" in first and "tags" in first

    def test_custom_spec_file(self, tmp_path):
        spec = {
            "kind": "vision",
            "prototypes": (4.0 * np.eye(5)).tolist(),
            "affine_pairs": [[0, 1]],
            "signature_pairs": [[0, 1]],
            "entities_min": 3,
            "entities_max": 4,
        }
        spec_path = tmp_path / "world.json"
        spec_path.write_text(json.dumps(spec))
        out = tmp_path / "custom"
        code = main(
            ["gen", "--spec", str(spec_path), "--out", str(out), "--n-train", "3",
             "--n-test", "2", "--seed", "0"]
        )
        assert code == EXIT_OK
        first = json.loads((out / "train.jsonl").read_text().splitlines()[0])
        assert len(first["entities"]["features"][0]) == 5

    def test_bad_counts(self, tmp_path):
        code = main(["gen", "--out", str(tmp_path / "x"), "--n-train", "0"])
        assert code == EXIT_USER

    def test_missing_spec_file(self, tmp_path):
        code = main(
            ["gen", "--spec", str(tmp_path / "nope.json"), "--out", str(tmp_path / "y")]
        )
        assert code == EXIT_USER


class TestTrain:
    def test_artifacts(self, run_dir):
        for name in ("report.json", "report.csv", "checkpoint.json"):
            assert os.path.exists(os.path.join(run_dir, name))

    def test_report_csv_layout(self, run_dir):
        lines = open(os.path.join(run_dir, "report.csv")).read().splitlines()
        assert lines[0].startswith("# config: {")
        echoed = json.loads(lines[0].split("# config: ", 1)[1])
        assert echoed["epochs"] == 3
        assert lines[1].split(",")[0] == "epoch"
        assert len(lines) == 2 + 3  # comment + header + one row per epoch

    def test_report_json_has_lambda_key(self, run_dir):
        with open(os.path.join(run_dir, "report.json")) as fh:
            report = json.load(fh)
        assert "lambda" in report["config"]
        assert len(report["epochs"]) == 3

    def test_rerun_is_byte_identical(self, tmp_path, data_dir, run_dir):
        out = tmp_path / "again"
        code = main(["train", "--data", data_dir, "--out", str(out)] + FAST_TRAIN)
        assert code == EXIT_OK
        for name in ("report.csv", "report.json", "checkpoint.json"):
            assert (out / name).read_bytes() == open(
                os.path.join(run_dir, name), "rb"
            ).read(), name

    def test_missing_dataset_names_path(self, tmp_path, capsys):
        missing = tmp_path / "no_such_dir"
        code = main(["train", "--data", str(missing), "--out", str(tmp_path / "o")])
        assert code == EXIT_USER
        assert str(missing) in capsys.readouterr().err

    def test_config_file_plus_flag_precedence(self, tmp_path, data_dir):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"epochs": 2, "lambda": 0.5, "d_k": 2,
                                        "batch_size": 2}))
        out = tmp_path / "cfgrun"
        code = main(
            ["train", "--data", data_dir, "--out", str(out),
             "--config", str(cfg_path), "--lambda", "0.25"]
        )
        assert code == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert report["config"]["lambda"] == 0.25  # flag beats file
        assert report["config"]["epochs"] == 2     # file beats default

    def test_divergence_exits_one(self, tmp_path, data_dir):
        with np.errstate(over="ignore"):
            code = main(
                ["train", "--data", data_dir, "--out", str(tmp_path / "d"),
                 "--lr", "1e200", "--epochs", "3", "--batch-size", "1", "--d-k", "2"]
            )
        assert code == EXIT_INTERNAL

    def test_unknown_config_field_in_file(self, tmp_path, data_dir):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"learning_rate": 0.1}))
        code = main(
            ["train", "--data", data_dir, "--out", str(tmp_path / "o"),
             "--config", str(cfg_path)]
        )
        assert code == EXIT_USER


class TestSeedPrecedence:
    def test_env_seed_fills_gap(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FAN_SEED", "7")
        out = tmp_path / "env"
        main(["gen", "--out", str(out), "--n-train", "3", "--n-test", "2"])
        assert json.loads((out / "manifest.json").read_text())["seed"] == 7

    def test_flag_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FAN_SEED", "7")
        out = tmp_path / "flag"
        main(["gen", "--out", str(out), "--n-train", "3", "--n-test", "2", "--seed", "1"])
        assert json.loads((out / "manifest.json").read_text())["seed"] == 1

    def test_config_file_beats_env(self, tmp_path, data_dir, monkeypatch):
        monkeypatch.setenv("FAN_SEED", "9")
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"seed": 2, "epochs": 1, "d_k": 2,
                                        "batch_size": 2}))
        out = tmp_path / "file"
        main(["train", "--data", data_dir, "--out", str(out), "--config", str(cfg_path)])
        report = json.loads((out / "report.json").read_text())
        assert report["config"]["seed"] == 2

    def test_env_applies_to_train_when_unset(self, tmp_path, data_dir, monkeypatch):
        monkeypatch.setenv("FAN_SEED", "5")
        out = tmp_path / "envtrain"
        main(["train", "--data", data_dir, "--out", str(out), "--epochs", "1",
              "--batch-size", "2", "--d-k", "2"])
        report = json.loads((out / "report.json").read_text())
        assert report["config"]["seed"] == 5

    def test_garbage_env_is_user_error(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FAN_SEED", "lots")
        code = main(["gen", "--out", str(tmp_path / "g"), "--n-train", "3",
                     "--n-test", "2"])
        assert code == EXIT_USER


class TestEval:
    def test_artifacts_and_metrics_contract(self, tmp_path, data_dir, run_dir):
        out = tmp_path / "eval"
        code = main(
            ["eval", "--checkpoint", os.path.join(run_dir, "checkpoint.json"),
             "--data", os.path.join(data_dir, "test.jsonl"), "--out", str(out)]
        )
        assert code == EXIT_OK
        metrics = (out / "metrics.csv").read_text().splitlines()
        # the per-instance file keeps the bare four-column contract; the
        # config echo lives in summary.json instead
        assert metrics[0] == "instance_id,k,recall,center_mass"
        assert not any(line.startswith("#") for line in metrics)
        assert len(metrics) == 1 + 6 * 3  # header + instances x default ks
        summary = json.loads((out / "summary.json").read_text())
        assert "lambda" in summary["config"]
        assert set(summary["recall"]) == {"recall@1", "recall@5", "recall@10"}
        wide = (out / "summary.csv").read_text().splitlines()
        assert wide[0].split(",")[0] == "n_instances"
        assert len(wide) == 2

    def test_custom_ks(self, tmp_path, data_dir, run_dir):
        out = tmp_path / "evalks"
        code = main(
            ["eval", "--checkpoint", os.path.join(run_dir, "checkpoint.json"),
             "--data", os.path.join(data_dir, "test.jsonl"), "--ks", "2,4",
             "--out", str(out)]
        )
        assert code == EXIT_OK
        summary = json.loads((out / "summary.json").read_text())
        assert summary["ks"] == [2, 4]

    def test_bad_ks(self, tmp_path, data_dir, run_dir):
        code = main(
            ["eval", "--checkpoint", os.path.join(run_dir, "checkpoint.json"),
             "--data", os.path.join(data_dir, "test.jsonl"), "--ks", "a,b",
             "--out", str(tmp_path / "x")]
        )
        assert code == EXIT_USER

    def test_shape_mismatch_names_both(self, tmp_path, run_dir, capsys):
        spec = {
            "kind": "vision",
            "prototypes": (4.0 * np.eye(5)).tolist(),
            "affine_pairs": [[0, 1]],
            "signature_pairs": [[0, 1]],
            "entities_min": 3,
            "entities_max": 4,
        }
        spec_path = tmp_path / "world5.json"
        spec_path.write_text(json.dumps(spec))
        data5 = tmp_path / "data5"
        main(["gen", "--spec", str(spec_path), "--out", str(data5), "--n-train", "3",
              "--n-test", "2", "--seed", "0"])
        code = main(
            ["eval", "--checkpoint", os.path.join(run_dir, "checkpoint.json"),
             "--data", str(data5 / "test.jsonl"), "--out", str(tmp_path / "x")]
        )
        assert code == EXIT_USER
        err = capsys.readouterr().err
        assert "8" in err and "5" in err  # both dims named

    def test_empty_dataset(self, tmp_path, run_dir):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        code = main(
            ["eval", "--checkpoint", os.path.join(run_dir, "checkpoint.json"),
             "--data", str(empty), "--out", str(tmp_path / "x")]
        )
        assert code == EXIT_USER

    def test_missing_checkpoint(self, tmp_path, data_dir):
        code = main(
            ["eval", "--checkpoint", str(tmp_path / "none.json"),
             "--data", os.path.join(data_dir, "test.jsonl"),
             "--out", str(tmp_path / "x")]
        )
        assert code == EXIT_USER


class TestExportAttention:
    def export(self, out_path, data_dir, run_dir, instance=0, extra=()):
        return main(
            ["export-attention",
             "--checkpoint", os.path.join(run_dir, "checkpoint.json"),
             "--data", os.path.join(data_dir, "test.jsonl"),
             "--instance", str(instance), "--out", str(out_path), *extra]
        )

    def test_dump_contents(self, tmp_path, data_dir, run_dir):
        out = tmp_path / "dump.json"
        assert self.export(out, data_dir, run_dir) == EXIT_OK
        dump = json.loads(out.read_text())
        n = dump["n_entities"]
        for key in ("logits", "agg_weights", "focus_weights", "target"):
            assert np.asarray(dump[key]).shape == (n, n)
        # focus weights and importance are normalized distributions
        assert np.asarray(dump["focus_weights"]).sum() == pytest.approx(1.0, abs=1e-10)
        assert np.asarray(dump["word_importance"]).sum() == pytest.approx(1.0, abs=1e-10)
        assert len(dump["top_pairs"]) == 10
        weights = [p["weight"] for p in dump["top_pairs"]]
        assert weights == sorted(weights, reverse=True)
        assert dump["categories"] is not None

    def test_round_trip_exact(self, tmp_path, data_dir, run_dir):
        """Dumped matrices reproduce the forward pass bit for bit."""
        from fanet.synthgen import read_jsonl
        from fanet.trainer import forward_task, load_checkpoint

        out = tmp_path / "dump.json"
        self.export(out, data_dir, run_dir, instance=1)
        dump = json.loads(out.read_text())
        params, config = load_checkpoint(os.path.join(run_dir, "checkpoint.json"))
        inst = read_jsonl(os.path.join(data_dir, "test.jsonl"))[1]
        fwd = forward_task(inst, params, config)
        assert np.array_equal(np.asarray(dump["logits"]), fwd.state.logits)
        assert np.array_equal(np.asarray(dump["focus_weights"]), fwd.state.focus_weights)
        assert np.array_equal(np.asarray(dump["target"]), inst.target)

    def test_rerun_is_byte_identical(self, tmp_path, data_dir, run_dir):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        self.export(a, data_dir, run_dir)
        self.export(b, data_dir, run_dir)
        assert a.read_bytes() == b.read_bytes()

    def test_instance_out_of_range(self, tmp_path, data_dir, run_dir, capsys):
        code = self.export(tmp_path / "x.json", data_dir, run_dir, instance=99)
        assert code == EXIT_USER
        assert "99" in capsys.readouterr().err

    def test_bad_top_k(self, tmp_path, data_dir, run_dir):
        code = self.export(
            tmp_path / "x.json", data_dir, run_dir, extra=("--top-k", "0")
        )
        assert code == EXIT_USER


class TestAblate:
    def grid_file(self, tmp_path, grid):
        p = tmp_path / "grid.json"
        p.write_text(json.dumps(grid))
        return str(p)

    def test_grid_runs_and_tables(self, tmp_path, data_dir):
        grid = self.grid_file(tmp_path, {"strategy": ["unsup", "mat_focal"]})
        out = tmp_path / "ab"
        code = main(
            ["ablate", "--grid", grid, "--data", data_dir, "--out", str(out)]
            + FAST_TRAIN
        )
        assert code == EXIT_OK
        lines = (out / "cells.csv").read_text().splitlines()
        assert lines[0].startswith("# config: {")
        assert lines[1].split(",")[0] == "cell_id"
        assert len(lines) == 2 + 2
        assert lines[2].startswith('strategy=""unsup""') or "unsup" in lines[2]
        curves = (out / "curves.csv").read_text().splitlines()
        assert curves[1] == "cell_id,k,recall"
        assert len(curves) == 2 + 2 * 3  # two cells x three ks
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["cells"]) == 2

    def test_empty_grid_gives_empty_table(self, tmp_path, data_dir):
        grid = self.grid_file(tmp_path, {})
        out = tmp_path / "empty"
        code = main(
            ["ablate", "--grid", grid, "--data", data_dir, "--out", str(out)]
            + FAST_TRAIN
        )
        assert code == EXIT_OK
        lines = (out / "cells.csv").read_text().splitlines()
        assert len(lines) == 2  # comment + header, no cells

    def test_resume_skips_done_cells(self, tmp_path, data_dir):
        out = tmp_path / "resume"
        first = self.grid_file(tmp_path, {"lambda": [0.0]})
        code = main(
            ["ablate", "--grid", first, "--data", data_dir, "--out", str(out)]
            + FAST_TRAIN
        )
        assert code == EXIT_OK
        before = (out / "cells.csv").read_text()

        second = self.grid_file(tmp_path, {"lambda": [0.0, 0.5]})
        code = main(
            ["ablate", "--grid", second, "--data", data_dir, "--out", str(out),
             "--resume"] + FAST_TRAIN
        )
        assert code == EXIT_OK
        after = (out / "cells.csv").read_text()
        assert after.startswith(before)  # old rows untouched, appended only
        rows = [l for l in after.splitlines() if l.startswith("lambda=")]
        assert len(rows) == 2

    def test_parallel_jobs_match_serial(self, tmp_path, data_dir):
        grid = self.grid_file(tmp_path, {"lambda": [0.0, 0.05]})
        serial, parallel = tmp_path / "s", tmp_path / "p"
        main(["ablate", "--grid", grid, "--data", data_dir, "--out", str(serial)]
             + FAST_TRAIN)
        main(["ablate", "--grid", grid, "--data", data_dir, "--out", str(parallel),
              "--jobs", "2"] + FAST_TRAIN)
        assert (serial / "cells.csv").read_bytes() == (parallel / "cells.csv").read_bytes()

    def test_grid_must_be_object(self, tmp_path, data_dir):
        p = tmp_path / "grid.json"
        p.write_text(json.dumps(["strategy"]))
        code = main(
            ["ablate", "--grid", str(p), "--data", data_dir,
             "--out", str(tmp_path / "x")] + FAST_TRAIN
        )
        assert code == EXIT_USER

    def test_unknown_grid_field(self, tmp_path, data_dir):
        grid = self.grid_file(tmp_path, {"warmup": [1]})
        code = main(
            ["ablate", "--grid", grid, "--data", data_dir,
             "--out", str(tmp_path / "x")] + FAST_TRAIN
        )
        assert code == EXIT_USER


class TestGradcheckCommand:
    def test_passes_quickly(self, capsys):
        code = main(["gradcheck", "--seeds", "2", "--seed", "0"])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "overall max relative error" in out
        assert "FAIL" not in out

    def test_single_head_mode(self):
        assert main(["gradcheck", "--seeds", "1", "--head-mode", "residual"]) == EXIT_OK

    def test_rejects_bad_dims(self):
        assert main(["gradcheck", "--n", "1"]) == EXIT_USER

    def test_rejects_bad_step(self):
        assert main(["gradcheck", "--seeds", "1", "--step", "1e-2"]) == EXIT_USER
