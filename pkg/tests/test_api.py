import base64
import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from despur.api import create_app


@pytest.fixture()
def client(workspace):
    workspace.start()
    app = create_app(workspace)
    with TestClient(app, raise_server_exceptions=False) as tc:
        yield tc


@pytest.fixture()
def scored_client(workspace):
    workspace.refresh_predictions()
    workspace.start()
    app = create_app(workspace)
    with TestClient(app, raise_server_exceptions=False) as tc:
        yield tc


def _first_id(client, split="train"):
    body = client.get("/api/images", params={"split": split, "page_size": 1}).json()
    return body["records"][0]["image_id"]


def _mask_b64(bits):
    img = Image.fromarray((bits * 255).astype(np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _decode_mask(b64):
    img = Image.open(io.BytesIO(base64.b64decode(b64))).convert("L")
    return (np.asarray(img) >= 128).astype(np.uint8)


class TestMeta:
    def test_meta_reflects_config(self, client, workspace):
        body = client.get("/api/meta").json()
        assert body["class_names"] == workspace.config.class_names
        assert body["input_shape"] == list(workspace.config.input_shape)
        assert body["active_checkpoint_id"] == "zero-init"
        assert body["backend"]["backend_name"] == "logreg"

    def test_meta_idempotent(self, client):
        assert client.get("/api/meta").json() == client.get("/api/meta").json()


class TestImages:
    def test_listing_shape_and_pagination(self, scored_client):
        body = scored_client.get("/api/images",
                                 params={"split": "train", "page_size": 3}).json()
        assert body["total"] == 8
        assert len(body["records"]) == 3
        rec = body["records"][0]
        assert {"image_id", "split", "class_label", "class_name", "width", "height",
                "channels", "prediction", "stale", "has_mask", "has_influence"} <= set(rec)
        assert rec["prediction"] is not None
        assert abs(sum(rec["prediction"]["probabilities"]) - 1.0) < 1e-6
        assert rec["stale"] is False

    def test_filter_without_predictions_is_409(self, client):
        resp = client.get("/api/images", params={"split": "train",
                                                 "filter": "misclassified"})
        assert resp.status_code == 409
        assert resp.json()["code"] == "PREDICTIONS_UNAVAILABLE"

    def test_bad_filter_rejected(self, client):
        resp = client.get("/api/images", params={"filter": "sideways"})
        assert resp.status_code == 400
        assert resp.json()["code"] == "INVALID_ARGUMENT"

    def test_image_bytes_round_trip(self, client, workspace):
        image_id = _first_id(client)
        resp = client.get(f"/api/image/{image_id}")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        assert resp.content == (workspace.dataset.root / image_id).read_bytes()

    def test_unknown_image_404_envelope(self, client):
        resp = client.get("/api/image/train/top/no-such.png")
        assert resp.status_code == 404
        body = resp.json()
        assert body["code"] == "UNKNOWN_IMAGE"
        assert "message" in body


class TestSaliency:
    def test_json_shape(self, scored_client, workspace):
        image_id = _first_id(scored_client)
        body = scored_client.get(f"/api/image/{image_id}/saliency").json()
        assert body["image_id"] == image_id
        values = np.array(body["values"])
        assert values.shape == (8, 8)
        assert values.max() in (0.0, 1.0)

    def test_overlay_png(self, scored_client):
        image_id = _first_id(scored_client)
        resp = scored_client.get(f"/api/image/{image_id}/saliency",
                                 params={"overlay": "true", "alpha": 0.4})
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        Image.open(io.BytesIO(resp.content)).verify()

    def test_invalid_class_rejected(self, scored_client):
        image_id = _first_id(scored_client)
        resp = scored_client.get(f"/api/image/{image_id}/saliency",
                                 params={"class_index": 99})
        assert resp.status_code == 400
        assert resp.json()["code"] == "INVALID_LABEL"


class TestMask:
    def test_put_get_round_trip(self, client, workspace):
        image_id = _first_id(client)
        rec = workspace.dataset.record(image_id)
        rng = np.random.default_rng(0)
        bits = (rng.random((rec.height, rec.width)) > 0.4).astype(np.uint8)
        put = client.put(f"/api/image/{image_id}/mask",
                         json={"mask_png_base64": _mask_b64(bits)})
        assert put.status_code == 200
        assert put.json()["revision"] == 1
        got = client.get(f"/api/image/{image_id}/mask").json()
        assert got["present"] is True
        assert np.array_equal(_decode_mask(got["mask_png_base64"]), bits)

    def test_get_absent_mask(self, client):
        image_id = _first_id(client)
        body = client.get(f"/api/image/{image_id}/mask").json()
        assert body["present"] is False
        assert body["mask_png_base64"] is None

    def test_put_to_test_split_is_409(self, client, workspace):
        image_id = _first_id(client, split="test")
        rec = workspace.dataset.record(image_id)
        bits = np.zeros((rec.height, rec.width), dtype=np.uint8)
        resp = client.put(f"/api/image/{image_id}/mask",
                          json={"mask_png_base64": _mask_b64(bits)})
        assert resp.status_code == 409
        assert resp.json()["code"] == "TEST_SPLIT_READONLY"

    def test_put_garbage_base64(self, client):
        image_id = _first_id(client)
        resp = client.put(f"/api/image/{image_id}/mask",
                          json={"mask_png_base64": "@@not-base64@@"})
        assert resp.status_code == 400

    def test_propose_range(self, client, workspace):
        image_id = _first_id(client)
        resp = client.post(f"/api/image/{image_id}/mask/propose",
                           json={"method": "range",
                                 "params": {"lo": 0.0, "hi": 1.0}})
        assert resp.status_code == 200
        bits = _decode_mask(resp.json()["mask_png_base64"])
        assert np.all(bits == 1)
        # proposals never persist
        assert client.get(f"/api/image/{image_id}/mask").json()["present"] is False

    def test_propose_invalid_range(self, client):
        image_id = _first_id(client)
        resp = client.post(f"/api/image/{image_id}/mask/propose",
                           json={"method": "range", "params": {"lo": 0.9, "hi": 0.1}})
        assert resp.status_code == 400
        assert resp.json()["code"] == "INVALID_RANGE"

    def test_propose_border_flood(self, client):
        image_id = _first_id(client)
        resp = client.post(f"/api/image/{image_id}/mask/propose",
                           json={"method": "border-flood",
                                 "params": {"tolerance": 0.2}})
        assert resp.status_code == 200

    def test_propose_unknown_backend(self, client):
        image_id = _first_id(client)
        resp = client.post(f"/api/image/{image_id}/mask/propose",
                           json={"method": "nonexistent"})
        assert resp.status_code == 400
        assert resp.json()["code"] == "UNKNOWN_BACKEND"


class TestInfluenceEndpoint:
    def test_absent_cache_is_404(self, client):
        image_id = _first_id(client, split="test")
        resp = client.get(f"/api/image/{image_id}/influence")
        assert resp.status_code == 404
        assert resp.json()["code"] == "INFLUENCE_NOT_COMPUTED"

    def test_train_image_is_400(self, client):
        image_id = _first_id(client, split="train")
        resp = client.get(f"/api/image/{image_id}/influence")
        assert resp.status_code == 400
        assert resp.json()["code"] == "NOT_TEST_IMAGE"

    def test_after_precompute_task(self, scored_client, workspace):
        submit = scored_client.post(
            "/api/tasks", json={"kind": "influence",
                                "payload": {"scope": "all_test", "k": 3}})
        assert submit.status_code == 202
        job_id = submit.json()["job_id"]
        record = workspace.tasks.wait(job_id, timeout=30)
        assert record.status == "done"
        image_id = _first_id(scored_client, split="test")
        body = scored_client.get(f"/api/image/{image_id}/influence").json()
        assert body["k"] == 3
        scores = [e["score"] for e in body["entries"]]
        assert scores == sorted(scores, reverse=True)


class TestTasksAndCheckpoints:
    def test_train_job_lifecycle(self, client, workspace):
        payload = {"base_checkpoint_id": "zero-init", "epochs": 2, "batch_size": 4,
                   "learning_rate": 0.5, "lambda": 1.0, "seed": 3}
        submit = client.post("/api/tasks", json={"kind": "train", "payload": payload})
        assert submit.status_code == 202
        job_id = submit.json()["job_id"]
        record = workspace.tasks.wait(job_id, timeout=60)
        assert record.status == "done"
        listed = client.get("/api/checkpoints").json()
        ids = [c["checkpoint_id"] for c in listed["checkpoints"]]
        assert record.result_ref in ids
        assert any(c["metadata"].get("parent_job_id") == job_id
                   for c in listed["checkpoints"])
        # metrics file exists with one line per epoch
        metrics = workspace.layout.jobs_dir / f"{job_id}.metrics.jsonl"
        assert len(metrics.read_text().splitlines()) == 2

    def test_invalid_train_payload_is_400(self, client):
        resp = client.post("/api/tasks", json={
            "kind": "train",
            "payload": {"base_checkpoint_id": "zero-init", "learning_rate": -1.0},
        })
        assert resp.status_code == 400
        assert resp.json()["code"] == "INVALID_PAYLOAD"

    def test_unknown_task_404(self, client):
        resp = client.get("/api/tasks/job-424242")
        assert resp.status_code == 404
        assert resp.json()["code"] == "UNKNOWN_JOB"

    def test_task_listing_shape(self, client):
        client.post("/api/tasks", json={"kind": "predict", "payload": {}})
        body = client.get("/api/tasks").json()
        assert len(body["tasks"]) >= 1
        assert {"job_id", "kind", "status", "progress", "message"} <= set(body["tasks"][0])

    def test_activate_unknown_checkpoint_404(self, client):
        resp = client.post("/api/checkpoints/no-such/activate")
        assert resp.status_code == 404
        assert resp.json()["code"] == "UNKNOWN_CHECKPOINT"

    def test_activation_updates_meta_and_stales_predictions(self, client, workspace):
        workspace.refresh_predictions()
        payload = {"base_checkpoint_id": "zero-init", "epochs": 1, "batch_size": 4,
                   "learning_rate": 0.5, "seed": 1}
        job_id = client.post("/api/tasks",
                             json={"kind": "train", "payload": payload}).json()["job_id"]
        record = workspace.tasks.wait(job_id, timeout=60)
        new_ckpt = record.result_ref
        resp = client.post(f"/api/checkpoints/{new_ckpt}/activate")
        assert resp.status_code == 200
        assert client.get("/api/meta").json()["active_checkpoint_id"] == new_ckpt
        listing = client.get("/api/images", params={"split": "train"}).json()
        assert all(r["stale"] for r in listing["records"])
        # predictions shown are the old checkpoint's
        assert all(r["prediction"] is None
                   or r["prediction"]["checkpoint_id"] != new_ckpt
                   for r in listing["records"])
        # a predict task freshens them
        pj = client.post("/api/tasks", json={"kind": "predict", "payload": {}}).json()["job_id"]
        assert workspace.tasks.wait(pj, timeout=30).status == "done"
        listing = client.get("/api/images", params={"split": "train"}).json()
        assert all(not r["stale"] for r in listing["records"])

    def test_cancel_queued_task(self, client, workspace):
        long_payload = {"base_checkpoint_id": "zero-init", "epochs": 200,
                        "batch_size": 1, "learning_rate": 0.01, "seed": 0}
        first = client.post("/api/tasks",
                            json={"kind": "train", "payload": long_payload}).json()["job_id"]
        second = client.post("/api/tasks",
                             json={"kind": "predict", "payload": {}}).json()["job_id"]
        resp = client.post(f"/api/tasks/{second}/cancel")
        assert resp.status_code == 200
        assert client.get(f"/api/tasks/{second}").json()["status"] == "cancelled"
        client.post(f"/api/tasks/{first}/cancel")
        record = workspace.tasks.wait(first, timeout=60)
        assert record.status in ("cancelled", "done")


class TestStaticRoot:
    def test_placeholder_served_without_ui(self, client):
        resp = client.get("/")
        assert resp.status_code == 200
        assert "despur" in resp.text

    def test_ui_mounted_when_present(self, workspace, tmp_path):
        ui = tmp_path / "dist"
        ui.mkdir()
        (ui / "index.html").write_text("<html><body>UI build</body></html>")
        app = create_app(workspace, ui_root=ui)
        with TestClient(app) as tc:
            assert "UI build" in tc.get("/").text
