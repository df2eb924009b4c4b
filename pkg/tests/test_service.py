import time

import pytest
from fastapi.testclient import TestClient

from quasim import jobs
from quasim.formats import round_sig
from quasim.service import create_app

TWO_DOF = {"format_version": 1, "n_dof": 2, "mass": [1, 0, 0, 1], "stiffness": [2, -1, -1, 2]}


def wait(client, job_id, timeout=30.0):
    deadline = time.time() + timeout
    seen = []
    while time.time() < deadline:
        view = client.get(f"/jobs/{job_id}").json()
        seen.append(view["status"])
        if view["status"] in ("done", "failed"):
            return view, seen
        time.sleep(0.01)
    raise AssertionError(f"job {job_id} did not finish; saw {seen[-5:]}")


@pytest.fixture
def client():
    with TestClient(create_app(workers=1)) as c:
        yield c


def test_healthz(client):
    assert client.get("/healthz").status_code == 200


def test_submit_and_complete_qpe(client):
    r = client.post("/jobs", json={"kind": "qpe", "payload": {**TWO_DOF, "n_ancilla": 6}, "seed": 3})
    assert r.status_code == 202
    view, seen = wait(client, r.json()["id"])
    assert view["status"] == "done"
    order = {"queued": 0, "running": 1, "done": 2, "failed": 2}
    assert [order[s] for s in seen] == sorted(order[s] for s in seen)
    expected = round_sig(jobs.run_qpe({**TWO_DOF, "n_ancilla": 6}, 3))
    assert view["result"] == expected


def test_missing_stiffness_400(client):
    payload = {k: v for k, v in TWO_DOF.items() if k != "stiffness"}
    assert client.post("/jobs", json={"kind": "modal", "payload": payload}).status_code == 400


@pytest.mark.parametrize("body", [
    {"kind": "teleport", "payload": TWO_DOF},
    {"kind": "modal", "payload": TWO_DOF, "extra": 1},
    {"kind": "modal", "payload": TWO_DOF, "seed": "x"},
    {"kind": "qpe", "payload": {**TWO_DOF, "n_ancilla": "many"}},
    {"kind": "qgnn_predict", "payload": {"model": {}}},
    [1, 2],
])
def test_malformed_requests_400(client, body):
    assert client.post("/jobs", json=body).status_code == 400


def test_non_json_body_400(client):
    assert client.post("/jobs", content=b"{", headers={"content-type": "application/json"}).status_code == 400


def test_ancilla_cap_422(client):
    r = client.post("/jobs", json={"kind": "qpe", "payload": {**TWO_DOF, "n_ancilla": 13}})
    assert r.status_code == 422
    assert "ancilla cap" in r.json()["error"]


def test_unknown_id_404(client):
    assert client.get("/jobs/does-not-exist").status_code == 404


def test_queued_job_has_no_result():
    app = create_app(autostart=False)
    with TestClient(app) as c:
        job_id = c.post("/jobs", json={"kind": "modal", "payload": TWO_DOF}).json()["id"]
        view = c.get(f"/jobs/{job_id}").json()
        assert view["status"] == "queued" and "result" not in view
        app.state.store.drain()
        assert c.get(f"/jobs/{job_id}").json()["status"] == "done"


def test_fifo_order_and_isolation(client):
    bad = {"format_version": 1, "n_dof": 2, "mass": [1, 0, 0, -1], "stiffness": [1, 0, 0, 1]}
    ids = [client.post("/jobs", json={"kind": "modal", "payload": p}).json()["id"]
           for p in (TWO_DOF, bad, TWO_DOF)]
    views = [wait(client, i)[0] for i in ids]
    assert [v["status"] for v in views] == ["done", "failed", "done"]
    assert views[1]["error"] and "result" not in views[1]
    assert views[0]["result"] == views[2]["result"]
    assert client.app.state.store.completed[-3:] == ids


def test_restart_forgets_jobs():
    with TestClient(create_app()) as c:
        job_id = c.post("/jobs", json={"kind": "modal", "payload": TWO_DOF}).json()["id"]
        wait(c, job_id)
    with TestClient(create_app()) as c:
        assert c.get(f"/jobs/{job_id}").status_code == 404


def test_several_workers_run_everything():
    with TestClient(create_app(workers=3)) as c:
        ids = [c.post("/jobs", json={"kind": "qpe", "payload": {**TWO_DOF, "n_ancilla": 4}, "seed": s}).json()["id"]
               for s in range(6)]
        assert all(wait(c, i)[0]["status"] == "done" for i in ids)
