import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from graphscene import voxio
from graphscene.dataset import VoxelScene, build_dataset, project_bev
from graphscene.evaluation import count_objects, jaccard_categories
from graphscene.graph import graph_from_json, graph_to_json
from graphscene.service import create_app, scene_sidecar
from graphscene.training import TrainConfig, train_joint, train_loc, train_scene3d

TINY = dict(T=8, batch_size=2, joint_steps=10, loc_steps=10, scene3d_steps=6,
            widths2d=(8, 16, 24), widths3d=(8, 16, 24), log_every=4)

ROAD_ONLY = '{"road": {"type": "Crossroad"}, "instances": [], "edges": []}'
TWO_VEHICLES = json.dumps({
    "road": {"type": "Crossroad"},
    "instances": [
        {"id": "v1", "class": "Vehicle", "patch": [2, 2]},
        {"id": "v2", "class": "Vehicle", "patch": [5, 5]},
    ],
    "edges": [{"kind": "road", "a": "v1", "b": "road"},
              {"kind": "road", "a": "v2", "b": "road"}],
})


@pytest.fixture(scope="module")
def tiny_ckpt():
    ds = build_dataset(4, seed=31)
    cfg = TrainConfig(seed=31, **TINY)
    ck = train_loc(train_joint(ds, cfg), ds, cfg)
    return train_scene3d(ds, cfg, base=ck)


@pytest.fixture()
def client(tiny_ckpt, tmp_path):
    app = create_app(tiny_ckpt, tmp_path / "store")
    with TestClient(app) as c:
        c.app = app
        yield c


def wait_done(client, job_id, timeout=120.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        rec = client.get(f"/jobs/{job_id}").json()
        if rec["state"] in ("done", "failed"):
            return rec
        time.sleep(0.05)
    raise TimeoutError(job_id)


class TestGraphEndpoints:
    def test_post_valid_graph(self, client):
        r = client.post("/graphs", content=ROAD_ONLY)
        assert r.status_code == 201
        assert r.json()["graph_id"].startswith("graph-")

    def test_get_round_trip(self, client):
        gid = client.post("/graphs", content=TWO_VEHICLES).json()["graph_id"]
        back = client.get(f"/graphs/{gid}")
        assert back.status_code == 200
        assert graph_from_json(back.text) == graph_from_json(TWO_VEHICLES)

    def test_invalid_graph_422_with_report(self, client):
        bad = json.loads(TWO_VEHICLES)
        bad["edges"].append({"kind": "proximity", "a": "v1", "b": "ghost"})
        r = client.post("/graphs", content=json.dumps(bad))
        assert r.status_code == 422
        codes = [v["code"] for v in r.json()["detail"]]
        assert "dangling_endpoint" in codes

    def test_malformed_json_400(self, client):
        assert client.post("/graphs", content="{nope").status_code == 400

    def test_repost_identical_gets_new_id(self, client):
        a = client.post("/graphs", content=ROAD_ONLY).json()["graph_id"]
        b = client.post("/graphs", content=ROAD_ONLY).json()["graph_id"]
        assert a != b

    def test_unknown_graph_404(self, client):
        assert client.get("/graphs/graph-999999").status_code == 404


class TestGenerate:
    def test_flow_and_determinism(self, client):
        gid = client.post("/graphs", content=TWO_VEHICLES).json()["graph_id"]
        jobs = [client.post("/generate", json={"graph_id": gid, "seed": 1}).json()["job_id"]
                for _ in range(2)]
        recs = [wait_done(client, j) for j in jobs]
        assert all(r["state"] == "done" for r in recs)
        assert recs[0]["scene_id"] and recs[1]["scene_id"]
        bytes_a = client.get(f"/scenes/{recs[0]['scene_id']}").content
        bytes_b = client.get(f"/scenes/{recs[1]['scene_id']}").content
        assert bytes_a == bytes_b  # same seed, identical scene bytes

    def test_job_has_sidecar_consistent_with_recompute(self, client):
        gid = client.post("/graphs", content=TWO_VEHICLES).json()["graph_id"]
        job = client.post("/generate", json={"graph_id": gid, "seed": 3}).json()["job_id"]
        rec = wait_done(client, job)
        data = client.get(f"/scenes/{rec['scene_id']}").content
        grid, _ = voxio.read_vxs(data)
        scene = VoxelScene(grid)
        graph = graph_from_json(client.get(f"/graphs/{gid}").text)
        fresh = scene_sidecar(scene, graph)
        assert rec["sidecar"]["counts"] == fresh["counts"] == count_objects(scene)
        assert rec["sidecar"]["jaccard"] == fresh["jaccard"] == \
            jaccard_categories(scene, graph)
        meta = client.get(f"/scenes/{rec['scene_id']}/meta").json()
        assert meta["counts"] == fresh["counts"]
        assert meta["requested_road_type"] == "Crossroad"

    def test_unknown_graph_404(self, client):
        r = client.post("/generate", json={"graph_id": "graph-424242", "seed": 0})
        assert r.status_code == 404

    def test_409_without_checkpoint(self, tmp_path):
        app = create_app(None, tmp_path / "store2")
        with TestClient(app) as c:
            gid = c.post("/graphs", content=ROAD_ONLY).json()["graph_id"]
            assert c.post("/generate", json={"graph_id": gid}).status_code == 409

    def test_unknown_job_and_scene_404(self, client):
        assert client.get("/jobs/job-doesnotexist").status_code == 404
        assert client.get("/scenes/scene-999999").status_code == 404

    def test_bev_png(self, client):
        gid = client.post("/graphs", content=ROAD_ONLY).json()["graph_id"]
        job = client.post("/generate", json={"graph_id": gid, "seed": 2}).json()["job_id"]
        rec = wait_done(client, job)
        r = client.get(f"/scenes/{rec['scene_id']}/bev")
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        assert r.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_state_machine_never_regresses(self, client):
        gid = client.post("/graphs", content=ROAD_ONLY).json()["graph_id"]
        job = client.post("/generate", json={"graph_id": gid, "seed": 5}).json()["job_id"]
        order = {"queued": 0, "running": 1, "done": 2, "failed": 2}
        seen = -1
        for _ in range(400):
            state = client.get(f"/jobs/{job}").json()["state"]
            assert order[state] >= seen
            seen = order[state]
            if state in ("done", "failed"):
                break
            time.sleep(0.02)
        assert seen == 2


class TestPersistence:
    def test_graphs_and_scenes_survive_restart(self, tiny_ckpt, tmp_path):
        store = tmp_path / "store3"
        app1 = create_app(tiny_ckpt, store)
        with TestClient(app1) as c1:
            gid = c1.post("/graphs", content=TWO_VEHICLES).json()["graph_id"]
            job = c1.post("/generate", json={"graph_id": gid, "seed": 7}).json()["job_id"]
            rec = wait_done(c1, job)
            scene_bytes = c1.get(f"/scenes/{rec['scene_id']}").content

        app2 = create_app(None, store)  # restart without checkpoint
        with TestClient(app2) as c2:
            assert graph_from_json(c2.get(f"/graphs/{gid}").text) == \
                graph_from_json(TWO_VEHICLES)
            assert c2.get(f"/scenes/{rec['scene_id']}").content == scene_bytes


class TestText2Graph:
    def test_crossroad_two_cars(self, client):
        r = client.post("/text2graph", json={"prompt": "a crossroad with two cars"})
        assert r.status_code == 200
        g = graph_from_json(r.text)
        assert g.road.road_type == "Crossroad"
        vehicles = [n for n in g.instances if n.class_label == "Vehicle"]
        assert len(vehicles) == 2
        assert all(n.patch is None for n in vehicles)

    def test_empty_prompt_422(self, client):
        assert client.post("/text2graph", json={"prompt": "  "}).status_code == 422

    def test_unconfigured_adapter_501(self, tiny_ckpt, tmp_path):
        app = create_app(None, tmp_path / "store4", text_adapter=None)
        with TestClient(app) as c:
            assert c.post("/text2graph", json={"prompt": "x"}).status_code == 501

    def test_mock_rule_table(self, client):
        cases = {
            "3 pedestrians near a bend": ("BendRoad", {"Pedestrian": 3}),
            "one lamp on a straight road": ("StraightRoad", {"Pole": 1}),
            "an intersection with a truck and two people":
                ("Crossroad", {"Vehicle": 1, "Pedestrian": 2}),
        }
        for prompt, (road, counts) in cases.items():
            g = graph_from_json(
                client.post("/text2graph", json={"prompt": prompt}).text)
            assert g.road.road_type == road
            got = {}
            for n in g.instances:
                got[n.class_label] = got.get(n.class_label, 0) + 1
            assert got == counts
