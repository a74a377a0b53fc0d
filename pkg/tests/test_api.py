import numpy as np
import pytest
from fastapi.testclient import TestClient

from app.config.settings import settings
from app.main import app
from app.models.detection_model import QuadrupleSet
from app.models.sim_model import OBS_DIM
from app.models.training_model import ValueTrainConfig
from app.services import nn_service, valuelearn_service, world_service
from app.routers import value_router
from app.services.artifact_service import write_report

PREFIX = f"{settings.api_v1_prefix}/value"


@pytest.fixture
def work_dir(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "work_dir", str(tmp_path))
    return tmp_path


@pytest.fixture
def client(work_dir):
    return TestClient(app)


def _td0_table(path):
    rewards = np.zeros((2, 5))
    rewards[1, 0] = 1.0
    quads = QuadrupleSet(obs=[[0.0], [1.0]], actions=[0, 0], next_obs=[[1.0], [2.0]], rewards=rewards)
    table = valuelearn_service.policy_evaluation_td0(quads, ValueTrainConfig(gamma=0.9, tabular=True))
    valuelearn_service.save_value_model(table, str(path), "td0", "0123456789ab")


def test_root_and_health(client, work_dir):
    assert client.get("/health").json()["status"] == "healthy"
    (work_dir / "q.txt").write_text("placeholder\n")
    body = client.get(f"{PREFIX}/health").json()
    assert body["artifacts"]["q"] is True
    assert body["artifacts"]["bc"] is False
    assert body["work_dir"] == str(work_dir)


def test_predict_from_value_table(client, work_dir):
    _td0_table(work_dir / "td0.txt")
    response = client.post(f"{PREFIX}/predict", json={"model": "td0.txt", "observation": [0.0]})
    assert response.status_code == 200
    body = response.json()
    assert body["values"]["bed"] == pytest.approx(0.9)
    assert body["values"]["chair"] == 0.0
    assert body["q_values"] is None
    assert body["metadata"]["kind"] == "td0"
    assert body["metadata"]["config_hash"] == "0123456789ab"
    assert "X-Process-Time" in response.headers


def test_predict_returns_q_matrix(client, work_dir):
    q = valuelearn_service.QFunction(net=nn_service.init_mlp((3, 4, 15), np.random.default_rng(0)))
    valuelearn_service.save_value_model(q, str(work_dir / "q.txt"), "q")
    body = client.post(f"{PREFIX}/predict", json={"observation": [1.0, 2.0, 3.0]}).json()
    assert np.array(body["q_values"]).shape == (3, 5)
    assert set(body["values"]) == {"bed", "chair", "couch", "dining_table", "toilet"}


def test_predict_errors(client, work_dir):
    assert client.post(f"{PREFIX}/predict", json={"model": "missing.txt", "observation": [0.0]}).status_code == 404
    assert client.post(f"{PREFIX}/predict", json={"model": "../etc/passwd", "observation": [0.0]}).status_code == 400
    _td0_table(work_dir / "td0.txt")
    response = client.post(f"{PREFIX}/predict", json={"model": "td0.txt", "observation": [0.0, 1.0]})
    assert response.status_code == 400
    assert "expects 1" in response.json()["detail"]["error"]
    (work_dir / "broken.txt").write_text("VLVTABLE 1 td0 - 1\n0.0 | 1 2\n")
    assert client.post(f"{PREFIX}/predict", json={"model": "broken.txt", "observation": [0.0]}).status_code == 400


def test_value_map_endpoint(client, work_dir, corridor_world):
    world_service.save_world(corridor_world, str(work_dir / "worlds" / "w.txt"), "0123456789ab")
    q = valuelearn_service.QFunction(net=nn_service.init_mlp((OBS_DIM, 4, 15), np.random.default_rng(0)))
    valuelearn_service.save_value_model(q, str(work_dir / "q.txt"), "q")
    response = client.get(f"{PREFIX}/map", params={"world": "worlds/w.txt", "category": "dining_table"})
    assert response.status_code == 200
    lines = response.text.splitlines()
    assert lines[0] == "P2"
    assert lines[2] == f"{corridor_world.width} {corridor_world.height}"
    bad = client.get(f"{PREFIX}/map", params={"world": "worlds/w.txt", "category": "piano"})
    assert bad.status_code == 400


def test_reports(client, work_dir):
    write_report(str(work_dir / "reports" / "eval.txt"), {"config_hash": "abc", "oracle_stop.VLV.spl": "0.5000"}, "a b\n1 2")
    body = client.get(f"{PREFIX}/reports/eval").json()
    assert body == {
        "name": "eval",
        "entries": {"config_hash": "abc", "oracle_stop.VLV.spl": "0.5000"},
        "count": 2,
    }
    assert client.get(f"{PREFIX}/reports/ablations").status_code == 404


def test_unexpected_errors_become_500(client, work_dir, monkeypatch, caplog):
    write_report(str(work_dir / "reports" / "eval.txt"), {"config_hash": "abc"})

    def broken(path):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(value_router, "read_report", broken)
    response = client.get(f"{PREFIX}/reports/eval")
    assert response.status_code == 500
    detail = response.json()["detail"]
    assert "disk on fire" in detail["error"]
    assert detail["processing_time_seconds"] >= 0.0
    assert "RuntimeError" in caplog.text
