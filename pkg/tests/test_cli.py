"""CLI thin client: flags, exit codes, byte-identical outputs."""

import hashlib
import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from tinyvlm.cli import main

from test_service import TINY_CONFIG


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return str(path)


def dir_digest(path: Path) -> dict[str, str]:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(path.iterdir()) if p.is_file()}


def invoke(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    return result


class TestMakeDataset:
    def test_counts_and_exit_zero(self, runner, tmp_path, tiny_config_file):
        out = tmp_path / "ds"
        result = invoke(runner, ["make-dataset", "--n-train", "8", "--n-test", "4",
                                 "--seed", "7", "--out", str(out),
                                 "--config", tiny_config_file])
        assert result.exit_code == 0, result.output
        body = json.loads(result.output)
        assert body["n_records"] == 12
        assert body["splits"] == {"train": 8, "test": 4}

    def test_same_seed_byte_identical_directories(self, runner, tmp_path,
                                                  tiny_config_file):
        digests = []
        for name in ("a", "b"):
            out = tmp_path / name
            result = invoke(runner, ["make-dataset", "--n-train", "3", "--n-test", "1",
                                     "--seed", "9", "--out", str(out),
                                     "--config", tiny_config_file])
            assert result.exit_code == 0
            digests.append(dir_digest(out))
        assert digests[0] == digests[1]

    def test_existing_out_dir_exit_2_no_writes(self, runner, tmp_path):
        out = tmp_path / "ds"
        out.mkdir()
        (out / "keep.txt").write_text("something")
        result = invoke(runner, ["make-dataset", "--out", str(out)])
        assert result.exit_code == 2
        assert list(out.iterdir()) == [out / "keep.txt"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Dataset + short two-stage run shared across CLI read-only tests."""
    runner = CliRunner()
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "tiny.json"
    cfg_path.write_text(json.dumps(TINY_CONFIG))
    ds = root / "ds"
    r = runner.invoke(main, ["make-dataset", "--n-train", "3", "--n-test", "2",
                             "--seed", "5", "--out", str(ds),
                             "--config", str(cfg_path)], catch_exceptions=False)
    assert r.exit_code == 0
    run = root / "run"
    r = runner.invoke(main, ["train", "--data", str(ds), "--out", str(run),
                             "--seed", "1", "--config", str(cfg_path)],
                      catch_exceptions=False)
    assert r.exit_code == 0, r.output
    return {"root": root, "ds": ds, "run": run, "config": str(cfg_path),
            "train": json.loads(r.output)}


class TestTrain:
    def test_exit_zero_and_loadable_checkpoint(self, trained):
        from tinyvlm.checkpoint import load_checkpoint
        bundle, _ = load_checkpoint(trained["train"]["checkpoints"]["joint"])
        assert bundle.params

    def test_loss_log_jsonl(self, trained):
        lines = Path(trained["train"]["loss_log"]).read_text().splitlines()
        for line in lines:
            entry = json.loads(line)
            assert set(entry) == {"stage", "epoch", "step", "loss"}

    def test_missing_dataset_exit_2(self, runner, tmp_path):
        result = invoke(runner, ["train", "--data", str(tmp_path / "nope"),
                                 "--out", str(tmp_path / "o")])
        assert result.exit_code == 2

    def test_stage_warmup_only_changes_encoder(self, runner, trained, tmp_path):
        import numpy as np
        from tinyvlm.checkpoint import load_checkpoint
        out = tmp_path / "warm"
        r = invoke(runner, ["train", "--data", str(trained["ds"]), "--out", str(out),
                            "--stage", "warmup", "--seed", "1",
                            "--config", trained["config"]])
        assert r.exit_code == 0
        body = json.loads(r.output)
        init_bundle, _ = load_checkpoint(body["checkpoints"]["init"])
        warm_bundle, _ = load_checkpoint(body["checkpoints"]["warmup"])
        changed = {n for n in init_bundle.params
                   if not np.array_equal(init_bundle.params[n].data,
                                         warm_bundle.params[n].data)}
        assert changed and all(n.startswith("encoder.") for n in changed)


class TestTune:
    def test_deterministic_traces(self, runner, tmp_path):
        traces = []
        for name in ("t1", "t2"):
            out = tmp_path / name
            r = invoke(runner, ["tune", "--out", str(out), "--budget", "25",
                                "--seed", "1", "--objective", "quadratic"])
            assert r.exit_code == 0
            traces.append((out / "tune_trace.json").read_bytes())
        assert traces[0] == traces[1]

    def test_incumbent_bounds_observations(self, runner, tmp_path):
        out = tmp_path / "t"
        r = invoke(runner, ["tune", "--out", str(out), "--budget", "10",
                            "--seed", "2", "--objective", "quadratic"])
        body = json.loads(r.output)
        trace = json.loads((out / "tune_trace.json").read_text())
        assert body["best_objective"] <= min(trace["values"])

    def test_budget_below_five_exit_2(self, runner, tmp_path):
        r = invoke(runner, ["tune", "--out", str(tmp_path / "t"), "--budget", "4",
                            "--objective", "quadratic"])
        assert r.exit_code == 2


class TestGenerateAndEvaluate:
    def test_generate_deterministic(self, runner, trained):
        outputs = []
        for _ in range(2):
            r = invoke(runner, ["generate",
                                "--checkpoint", trained["train"]["checkpoints"]["joint"],
                                "--data", str(trained["ds"]), "--video-id", "train-000",
                                "--clips", "2", "--config", trained["config"]])
            assert r.exit_code == 0, r.output
            outputs.append(json.loads(r.output)["text"])
        assert outputs[0] == outputs[1]

    def test_evaluate_report_mean_consistent(self, runner, trained, tmp_path):
        out = tmp_path / "eval"
        r = invoke(runner, ["evaluate",
                            "--checkpoint", trained["train"]["checkpoints"]["joint"],
                            "--data", str(trained["ds"]), "--out", str(out),
                            "--seed", "3", "--config", trained["config"]])
        assert r.exit_code == 0, r.output
        report = json.loads((out / "report.json").read_text())
        recomputed = (report["CI"] + report["DO"] + report["CU"]
                      + report["TU"] + report["C"]) / 5
        assert report["Mean"] == pytest.approx(recomputed)

    def test_evaluate_byte_identical_reruns(self, runner, trained, tmp_path):
        digests = []
        for name in ("e1", "e2"):
            out = tmp_path / name
            r = invoke(runner, ["evaluate",
                                "--checkpoint", trained["train"]["checkpoints"]["joint"],
                                "--data", str(trained["ds"]), "--out", str(out),
                                "--seed", "3", "--config", trained["config"]])
            assert r.exit_code == 0
            digests.append(dir_digest(out))
        assert digests[0] == digests[1]

    def test_checkpoint_schema_mismatch_exit_2(self, runner, trained, tmp_path):
        r = invoke(runner, ["evaluate",
                            "--checkpoint", trained["train"]["checkpoints"]["joint"],
                            "--data", str(trained["ds"]),
                            "--out", str(tmp_path / "bad")])
        assert r.exit_code == 2


class TestHelp:
    def test_subcommands_listed(self, runner):
        r = invoke(runner, ["--help"])
        for cmd in ("make-dataset", "train", "tune", "generate", "evaluate", "serve"):
            assert cmd in r.output
