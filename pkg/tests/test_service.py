import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from cmib.model import CMIBConfig, CMIBModel, save_checkpoint
from cmib.service import create_app
from cmib.synthetic import synthetic_skeleton

TOY = CMIBConfig(J=2, T_max=16, m=2, n_layers=2, d_ff=16, dropout=0.05, n_labels=3)
LABELS = ["walk", "run", "jump"]


@pytest.fixture(scope="module")
def ckpt_path(tmp_path_factory):
    skel = synthetic_skeleton(2)
    model = CMIBModel(TOY, seed=0)
    meta = {
        "labels": LABELS,
        "skeleton": {
            "joint_names": skel.joint_names,
            "parents": skel.parents.tolist(),
            "ref_lengths": skel.ref_lengths.tolist(),
        },
        "step": 0,
    }
    path = tmp_path_factory.mktemp("ckpt") / "toy.cmib"
    save_checkpoint(model, path, metadata=meta)
    return path


@pytest.fixture(scope="module")
def client(ckpt_path):
    with TestClient(create_app(checkpoint=ckpt_path)) as c:
        yield c


def wire_pose(y=0.0):
    # reference chain pose: root at (0, y, 1), child hanging 0.3 below
    return {
        "positions": [[0.0, y, 1.0], [0.0, y, 0.7]],
        "rotations": [[1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]],
    }


def request_body(T=8, label="walk", anchor=None):
    body = {"start": wire_pose(), "target": wire_pose(y=1.0), "T": T, "label": label}
    if anchor is not None:
        body["anchor"] = anchor
    return body


class TestHealthAndLoad:
    def test_healthz_reports_loaded(self, client):
        r = client.get("/healthz")
        assert r.status_code == 200
        assert r.json() == {"status": "ok", "model_loaded": True}

    def test_unloaded_service_healthy_but_503(self):
        with TestClient(create_app()) as c:
            assert c.get("/healthz").json() == {"status": "ok", "model_loaded": False}
            r = c.post("/v1/infill", json=request_body())
            assert r.status_code == 503
            assert r.json()["detail"]["code"] == "model_not_loaded"
            assert c.get("/v1/metadata").status_code == 503

    def test_env_var_checkpoint(self, ckpt_path, monkeypatch):
        monkeypatch.setenv("CMIB_CHECKPOINT", str(ckpt_path))
        with TestClient(create_app()) as c:
            assert c.get("/healthz").json()["model_loaded"] is True


class TestMetadata:
    def test_contents(self, client):
        meta = client.get("/v1/metadata").json()
        assert meta["labels"] == LABELS
        assert meta["T_max"] == 16
        skel = meta["skeleton"]
        assert skel["joint_names"] == ["root", "link1"]
        assert skel["parents"] == [-1, 0]
        assert np.allclose(skel["ref_lengths"], [0.0, 0.3])
        assert isinstance(meta["model_version"], str)


class TestInfill:
    def test_happy_path(self, client):
        r = client.post("/v1/infill", json=request_body(T=8))
        assert r.status_code == 200
        out = r.json()
        assert len(out["frames"]) == 8
        assert out["generation_ms"] >= 0.0
        assert out["request"]["label"] == "walk"
        assert out["request"]["label_id"] == 0
        for f in out["frames"]:
            pos = np.asarray(f["positions"])
            rot = np.asarray(f["rotations"])
            assert pos.shape == (2, 3) and rot.shape == (2, 4)
            assert np.allclose(np.linalg.norm(rot, axis=1), 1.0, atol=1e-6)
            # child stays one reference bone from the root
            assert abs(np.linalg.norm(pos[1] - pos[0]) - 0.3) < 1e-6

    def test_idempotent_byte_identical_frames(self, client):
        a = client.post("/v1/infill", json=request_body(T=8))
        b = client.post("/v1/infill", json=request_body(T=8))
        fa = json.dumps(a.json()["frames"]).encode()
        fb = json.dumps(b.json()["frames"]).encode()
        assert fa == fb

    def test_label_by_id(self, client):
        r = client.post("/v1/infill", json=request_body(label=2))
        assert r.status_code == 200
        assert r.json()["request"]["label"] == "jump"

    def test_anchor_accepted(self, client):
        anchor = {"frame": 4, "pose": wire_pose(y=0.5)}
        r = client.post("/v1/infill", json=request_body(T=8, anchor=anchor))
        assert r.status_code == 200
        assert r.json()["request"]["anchor_frame"] == 4

    def test_ingestion_renormalizes_slightly_off_quats(self, client):
        body = request_body()
        body["start"]["rotations"][0] = [1.0005, 0.0, 0.0, 0.0]
        assert client.post("/v1/infill", json=body).status_code == 200


class TestRejections:
    def test_horizon_above_limit_names_cap(self, client):
        r = client.post("/v1/infill", json=request_body(T=17))
        assert r.status_code == 400
        detail = r.json()["detail"]
        assert detail["code"] == "invalid_field"
        assert detail["field"] == "T"
        assert "16" in detail["message"]

    def test_horizon_below_two(self, client):
        r = client.post("/v1/infill", json=request_body(T=1))
        assert r.status_code == 400

    def test_bad_quaternion_norm(self, client):
        body = request_body()
        body["start"]["rotations"][1] = [0.5, 0.0, 0.0, 0.0]
        r = client.post("/v1/infill", json=body)
        assert r.status_code == 400
        assert r.json()["detail"]["field"] == "start.rotations"

    def test_non_finite_position(self, client):
        body = request_body()
        body["target"]["positions"][0][2] = float("inf")
        r = client.post(
            "/v1/infill",
            content=json.dumps(body).encode(),  # emits an Infinity token
            headers={"content-type": "application/json"},
        )
        assert r.status_code == 400
        assert r.json()["detail"]["field"] == "target.positions"

    def test_wrong_joint_count(self, client):
        body = request_body()
        body["start"]["positions"].append([0.0, 0.0, 0.0])
        body["start"]["rotations"].append([1.0, 0.0, 0.0, 0.0])
        r = client.post("/v1/infill", json=body)
        assert r.status_code == 400
        assert "2" in r.json()["detail"]["message"]

    def test_anchor_frame_bounds(self, client):
        for k in (1, 8, 9):
            anchor = {"frame": k, "pose": wire_pose()}
            r = client.post("/v1/infill", json=request_body(T=8, anchor=anchor))
            assert r.status_code == 400
            assert r.json()["detail"]["field"] == "anchor.frame"

    def test_unknown_label_name(self, client):
        r = client.post("/v1/infill", json=request_body(label="cartwheel"))
        assert r.status_code == 422
        assert r.json()["detail"]["code"] == "unknown_label"

    def test_unknown_label_id(self, client):
        r = client.post("/v1/infill", json=request_body(label=99))
        assert r.status_code == 422

    def test_malformed_json_survivable(self, client):
        r = client.post(
            "/v1/infill", content=b"{not json", headers={"content-type": "application/json"}
        )
        assert r.status_code == 422
        assert r.json()["code"] == "malformed_request"
        # process still serves afterwards
        assert client.get("/healthz").status_code == 200

    def test_missing_field(self, client):
        r = client.post("/v1/infill", json={"start": wire_pose(), "T": 8, "label": 0})
        assert r.status_code == 422
        assert r.json()["code"] == "malformed_request"


class TestCors:
    def test_preflight_allows_viewer_origin(self, ckpt_path):
        app = create_app(checkpoint=ckpt_path, cors_origins=["http://localhost:5173"])
        with TestClient(app) as c:
            r = c.options(
                "/v1/infill",
                headers={
                    "Origin": "http://localhost:5173",
                    "Access-Control-Request-Method": "POST",
                },
            )
            assert r.status_code == 200
            assert r.headers["access-control-allow-origin"] == "http://localhost:5173"
