"""Service endpoints exercised through the ASGI app."""

import json

import pytest
from fastapi.testclient import TestClient

from tinyvlm.service.app import create_app

TINY_CONFIG = {
    "data": {"canvas": 12, "raw_length": 16, "object_size": 5, "speed": 0.2,
             "frame_count": 3, "frame_stride": 2, "crop_size": 8},
    "encoder": {"stem_channels": 4, "stage_widths": [4, 6],
                "blocks_per_stage": [1, 1], "input_size": 8, "in_channels": 3},
    "lm": {"d_model": 8, "n_layers": 1, "n_heads": 2, "ffn_dim": 16,
           "max_context": 64, "vocab_size": 0},
    "warmup": {"epochs": 1},
    "joint": {"epochs": 1},
    "eval_clips": 2,
    "max_new_tokens": 6,
}


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


@pytest.fixture(scope="module")
def workspace(client, tmp_path_factory):
    """One tiny dataset + training run shared by the read-only endpoint tests."""
    root = tmp_path_factory.mktemp("svc")
    ds = root / "ds"
    r = client.post("/datasets", json={"n_train": 3, "n_test": 2, "seed": 5,
                                       "out_dir": str(ds), "config": TINY_CONFIG})
    assert r.status_code == 200, r.text
    run = root / "run"
    r = client.post("/train", json={"data_dir": str(ds), "out_dir": str(run),
                                    "seed": 1, "config": TINY_CONFIG})
    assert r.status_code == 200, r.text
    return {"root": root, "ds": ds, "run": run, "train": r.json()}


class TestHealth:
    def test_health(self, client):
        r = client.get("/health")
        assert r.status_code == 200 and r.json()["status"] == "ok"


class TestDatasets:
    def test_make_dataset_summary(self, client, workspace):
        manifest = json.loads((workspace["ds"] / "manifest.json").read_text())
        assert len(manifest["records"]) == 5
        assert (workspace["ds"] / "resolved_config.json").exists()

    def test_existing_dir_without_force_is_400(self, client, workspace):
        r = client.post("/datasets", json={"n_train": 1, "n_test": 0, "seed": 0,
                                           "out_dir": str(workspace["ds"])})
        assert r.status_code == 400
        body = r.json()
        assert body["exit_code"] == 2 and "force" in body["message"]

    def test_force_overwrites(self, client, workspace, tmp_path):
        out = tmp_path / "ds2"
        for _ in range(2):
            r = client.post("/datasets", json={"n_train": 1, "n_test": 0, "seed": 0,
                                               "out_dir": str(out), "force": True,
                                               "config": TINY_CONFIG})
        assert r.status_code == 200


class TestTrain:
    def test_outputs(self, workspace):
        body = workspace["train"]
        assert set(body["checkpoints"]) == {"init", "warmup", "joint"}
        log_lines = (workspace["run"] / "loss_log.jsonl").read_text().splitlines()
        assert len(log_lines) == body["steps"]
        entry = json.loads(log_lines[0])
        assert set(entry) == {"stage", "epoch", "step", "loss"}

    def test_missing_dataset_is_400(self, client, tmp_path):
        r = client.post("/train", json={"data_dir": str(tmp_path / "nope"),
                                        "out_dir": str(tmp_path / "out"),
                                        "config": TINY_CONFIG})
        assert r.status_code == 400 and r.json()["exit_code"] == 2

    def test_stage_selection(self, client, workspace, tmp_path):
        out = tmp_path / "warmonly"
        r = client.post("/train", json={"data_dir": str(workspace["ds"]),
                                        "out_dir": str(out), "stage": "warmup",
                                        "config": TINY_CONFIG})
        assert r.status_code == 200
        assert set(r.json()["checkpoints"]) == {"init", "warmup"}


class TestTune:
    def test_quadratic_objective(self, client, tmp_path):
        out = tmp_path / "tune"
        r = client.post("/tune", json={"out_dir": str(out), "budget": 8, "seed": 3,
                                       "objective": "quadratic"})
        assert r.status_code == 200
        body = r.json()
        assert abs(body["best"]["x"] - 0.3) < 0.2
        trace = json.loads((out / "tune_trace.json").read_text())
        assert len(trace["values"]) == 8

    def test_budget_too_small_is_400(self, client, tmp_path):
        r = client.post("/tune", json={"out_dir": str(tmp_path / "t"), "budget": 2,
                                       "objective": "quadratic"})
        assert r.status_code == 400 and r.json()["exit_code"] == 2

    def test_proxy_requires_dataset(self, client, tmp_path):
        r = client.post("/tune", json={"out_dir": str(tmp_path / "t"),
                                       "objective": "proxy"})
        assert r.status_code == 400


class TestGenerate:
    def test_by_video_id(self, client, workspace):
        r = client.post("/generate", json={
            "checkpoint": workspace["train"]["checkpoints"]["joint"],
            "data_dir": str(workspace["ds"]), "video_id": "train-000",
            "clips": 2, "config": TINY_CONFIG})
        assert r.status_code == 200
        body = r.json()
        assert isinstance(body["text"], str)
        assert body["source"].endswith("train-000")

    def test_unknown_video_is_400(self, client, workspace):
        r = client.post("/generate", json={
            "checkpoint": workspace["train"]["checkpoints"]["joint"],
            "data_dir": str(workspace["ds"]), "video_id": "missing",
            "config": TINY_CONFIG})
        assert r.status_code == 400

    def test_missing_source_is_400(self, client, workspace):
        r = client.post("/generate", json={
            "checkpoint": workspace["train"]["checkpoints"]["joint"],
            "config": TINY_CONFIG})
        assert r.status_code == 400

    def test_from_frames_file(self, client, workspace):
        frames_file = str(workspace["ds"] / "test-000.rvf")
        r = client.post("/generate", json={
            "checkpoint": workspace["train"]["checkpoints"]["joint"],
            "frames_file": frames_file, "clips": 1, "config": TINY_CONFIG})
        assert r.status_code == 200


class TestEvaluate:
    def test_full_evaluation(self, client, workspace, tmp_path):
        out = tmp_path / "eval"
        r = client.post("/evaluate", json={
            "checkpoint": workspace["train"]["checkpoints"]["joint"],
            "data_dir": str(workspace["ds"]), "out_dir": str(out), "seed": 2,
            "config": TINY_CONFIG})
        assert r.status_code == 200, r.text
        body = r.json()
        assert body["Mean"] == pytest.approx(
            (body["CI"] + body["DO"] + body["CU"] + body["TU"] + body["C"]) / 5)
        assert (out / "report.json").exists()
        assert (out / "report.md").exists()
        assert (out / "predictions.json").exists()

    def test_gold_predictions_saturate(self, client, workspace, tmp_path):
        manifest = json.loads((workspace["ds"] / "manifest.json").read_text())
        rows = []
        for rec in manifest["records"]:
            if rec["split"] != "test":
                continue
            rows.append({"id": rec["id"], "question": "describe the video",
                         "answer": rec["caption"], "prediction": rec["caption"],
                         "prediction_alt": None})
            for qa in rec["qa"]:
                rows.append({"id": rec["id"], "question": qa["q"], "answer": qa["a"],
                             "prediction": qa["a"], "prediction_alt": qa["a"]})
        preds = tmp_path / "gold.json"
        preds.write_text(json.dumps(rows))
        out = tmp_path / "eval_gold"
        r = client.post("/evaluate", json={
            "data_dir": str(workspace["ds"]), "out_dir": str(out),
            "predictions_file": str(preds), "config": TINY_CONFIG})
        assert r.status_code == 200
        body = r.json()
        assert (body["CI"], body["DO"], body["CU"], body["TU"], body["C"]) == \
            (5.0, 5.0, 5.0, 5.0, 5.0)
        assert body["accuracy"]["synthetic"] == 1.0

    def test_empty_predictions_score_zero(self, client, workspace, tmp_path):
        manifest = json.loads((workspace["ds"] / "manifest.json").read_text())
        rows = []
        for rec in manifest["records"]:
            if rec["split"] != "test":
                continue
            rows.append({"id": rec["id"], "question": "describe the video",
                         "answer": rec["caption"], "prediction": "",
                         "prediction_alt": None})
            for qa in rec["qa"]:
                rows.append({"id": rec["id"], "question": qa["q"], "answer": qa["a"],
                             "prediction": "", "prediction_alt": ""})
        preds = tmp_path / "empty.json"
        preds.write_text(json.dumps(rows))
        out = tmp_path / "eval_empty"
        r = client.post("/evaluate", json={
            "data_dir": str(workspace["ds"]), "out_dir": str(out),
            "predictions_file": str(preds), "config": TINY_CONFIG})
        body = r.json()
        assert body["CI"] == 0.0 and body["accuracy"]["synthetic"] == 0.0

    def test_schema_mismatch_is_400(self, client, workspace, tmp_path):
        # checkpoint trained on 8px frames, config demands 32px crops
        r = client.post("/evaluate", json={
            "checkpoint": workspace["train"]["checkpoints"]["joint"],
            "data_dir": str(workspace["ds"]), "out_dir": str(tmp_path / "bad")})
        assert r.status_code == 400 and r.json()["exit_code"] == 2
