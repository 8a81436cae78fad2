import pytest
from fastapi.testclient import TestClient

from api.app import app


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


def detection_request(label="ship"):
    return {
        "predictions": [
            {"detections": [{"box": [5, 5, 25, 25], "label": "ship", "score": 0.8}]},
            {"detections": []},
        ],
        "ground_truth": [
            {"boxes": [[5, 5, 25, 25]], "labels": [label]},
            {"boxes": [], "labels": []},
        ],
    }


def test_health(client):
    response = client.get("/api/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok"}


def test_sample_summary(client):
    response = client.get("/api/v1/samples/3", params={"image_size": 64, "seed": 2})
    assert response.status_code == 200
    body = response.json()
    assert body["index"] == 3 and body["image_size"] == 64
    assert body["radar_points"] >= body["clutter_points"]
    assert 0 < body["drivable_fraction"] < 1
    assert all(obj["score"] == 1.0 for obj in body["objects"])


def test_sample_summary_is_deterministic(client):
    params = {"image_size": 64, "seed": 5, "degradation": "fog"}
    first = client.get("/api/v1/samples/1", params=params).json()
    assert client.get("/api/v1/samples/1", params=params).json() == first


def test_negative_index(client):
    assert client.get("/api/v1/samples/-1").status_code == 400


def test_bad_degradation(client):
    assert client.get("/api/v1/samples/0", params={"degradation": "snow"}).status_code == 422


def test_detection_metrics(client):
    response = client.post("/api/v1/metrics/detection", json=detection_request())
    assert response.status_code == 200
    assert response.json()["mAP_50"] == pytest.approx(1.0)


def test_detection_metrics_unknown_label(client):
    response = client.post("/api/v1/metrics/detection", json=detection_request(label="whale"))
    assert response.status_code == 400


def test_detection_metrics_misaligned(client):
    request = detection_request()
    request["ground_truth"].pop()
    assert client.post("/api/v1/metrics/detection", json=request).status_code == 400


def test_infer_missing_checkpoint(client, tmp_path):
    response = client.post("/api/v1/infer", json={"checkpoint": str(tmp_path / "none.achl")})
    assert response.status_code == 404
