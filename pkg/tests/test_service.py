"""HTTP facade: scene/view/mask endpoints, session lifecycle, telemetry."""

import http.client
import json
import time

import numpy as np
import pytest

from servobench.controller import ControllerConfig
from servobench.harness import SessionConfig
from servobench.probmap import decode_pfm, encode_pfm
from servobench.providers import OracleProvider, current_view
from servobench.scenes import close_sphere_scene
from servobench.service import (
    TELEMETRY_QUEUE_SIZE,
    ServoService,
    _Subscriber,
)
from servobench.simworld import encode_ppm, render_oracle_mask, render_view

POLL_DEADLINE_S = 30.0


@pytest.fixture
def service():
    svc = ServoService(close_sphere_scene(), SessionConfig(max_steps=200))
    svc.start_background()
    yield svc
    svc.shutdown()


def request(svc, method, path, body=None):
    conn = http.client.HTTPConnection("127.0.0.1", svc.port, timeout=10)
    payload = None if body is None else json.dumps(body).encode()
    headers = {"Content-Type": "application/json"} if payload else {}
    conn.request(method, path, body=payload, headers=headers)
    resp = conn.getresponse()
    data = resp.read()
    headers_out = dict(resp.getheaders())
    conn.close()
    return resp.status, data, headers_out


def get_json(svc, path):
    status, data, _ = request(svc, "GET", path)
    return status, json.loads(data)


def start_session(svc, prompt="orange", kinds=("p2p",), **extra):
    body = {"prompt": prompt, "kinds": list(kinds)}
    body.update(extra)
    return request(svc, "POST", "/session", body)


def wait_terminal(svc, session_id):
    deadline = time.monotonic() + POLL_DEADLINE_S
    while time.monotonic() < deadline:
        status, doc = get_json(svc, f"/session/{session_id}")
        assert status == 200
        if not doc["running"]:
            return doc
        time.sleep(0.02)
    raise AssertionError("session never reached a terminal status")


# ---------------------------------------------------------------------------
# static state endpoints


def test_scene_endpoint_returns_the_scene_document(service):
    status, doc = get_json(service, "/scene")
    assert status == 200
    assert doc == json.loads(json.dumps(service.scene_dict))
    assert doc["camera"]["resolution"] == [352, 352]


def test_view_endpoint_returns_the_current_render(service):
    status, data, headers = request(service, "GET", "/view")
    assert status == 200
    assert headers["Content-Type"] == "image/x-portable-pixmap"
    want = encode_ppm(render_view(service.world, service.world.q))
    assert data == want


def test_mask_endpoint_matches_the_oracle_bit_for_bit(service):
    status, data, headers = request(service, "GET", "/mask?prompt=orange")
    assert status == 200
    assert headers["Content-Type"] == "image/x-portable-floatmap"
    want = render_oracle_mask(service.world, service.world.q, "orange")
    assert data == encode_pfm(want)
    back = decode_pfm(data)
    assert back.data.tobytes() == want.data.tobytes()


def test_mask_endpoint_validates_its_query(service):
    status, doc = get_json(service, "/mask")
    assert status == 400 and "prompt" in doc["error"]
    status, doc = get_json(service, "/mask?prompt=orange&provider=psychic")
    assert status == 400


def test_unknown_routes_are_404(service):
    assert request(service, "GET", "/nope")[0] == 404
    assert request(service, "POST", "/nope")[0] == 404
    assert get_json(service, "/session/s999")[0] == 404
    assert request(service, "POST", "/session/s999/abort")[0] == 404
    assert request(service, "GET", "/session/s999/telemetry")[0] == 404


def test_options_and_cors_headers(service):
    conn = http.client.HTTPConnection("127.0.0.1", service.port, timeout=10)
    conn.request("OPTIONS", "/session")
    resp = conn.getresponse()
    resp.read()
    assert resp.status == 204
    assert resp.getheader("Access-Control-Allow-Origin") == "*"
    conn.close()

    _, _, headers = request(service, "GET", "/scene")
    assert headers["Access-Control-Allow-Origin"] == "*"


# ---------------------------------------------------------------------------
# session lifecycle


def test_session_runs_to_convergence(service):
    status, data, _ = start_session(service)
    assert status == 200
    sid = json.loads(data)["session_id"]
    doc = wait_terminal(service, sid)
    assert doc["status"] == "Converged"
    assert doc["outcome"] == "Converged"
    assert doc["grasp_success"] is True
    assert doc["final_error_norm"] < 3.0
    assert doc["prompt"] == "orange" and doc["kinds"] == ["p2p"]
    assert doc["attempt"] == 1
    assert doc["steps"] > 0


def test_second_session_while_running_is_409():
    svc = ServoService(
        close_sphere_scene(),
        SessionConfig(max_steps=5000,
                      controller=ControllerConfig(convergence_tau=1e-9)),
    )
    svc.start_background()
    try:
        status, data, _ = start_session(svc)
        assert status == 200
        sid = json.loads(data)["session_id"]
        status, data, _ = start_session(svc)
        assert status == 409
        assert "running" in json.loads(data)["error"]

        status, data, _ = request(svc, "POST", f"/session/{sid}/abort")
        assert status == 200
        doc = wait_terminal(svc, sid)
        assert doc["status"] == "Aborted"

        # terminal session frees the slot
        status, data, _ = start_session(svc)
        assert status == 200
        sid2 = json.loads(data)["session_id"]
        assert sid2 != sid
        request(svc, "POST", f"/session/{sid2}/abort")
        wait_terminal(svc, sid2)
    finally:
        svc.shutdown()


def test_session_body_validation(service):
    assert start_session(service, prompt="")[0] == 400
    assert start_session(service, kinds=[])[0] == 400
    assert start_session(service, kinds=["p2x"])[0] == 400
    assert start_session(service, surprise=1)[0] == 400
    assert start_session(service, provider=7)[0] == 400
    assert start_session(service, provider="psychic")[0] == 400

    conn = http.client.HTTPConnection("127.0.0.1", service.port, timeout=10)
    conn.request("POST", "/session", body=b"{not json",
                 headers={"Content-Type": "application/json"})
    resp = conn.getresponse()
    body = resp.read()
    assert resp.status == 400
    assert "JSON" in json.loads(body)["error"]
    conn.close()


def test_reset_restores_the_home_pose(service):
    status, data, _ = start_session(service)
    sid = json.loads(data)["session_id"]
    wait_terminal(service, sid)
    moved = service.world.q.copy()
    assert not np.array_equal(moved, service._initial_q)

    status, data, _ = start_session(service, reset=True)
    sid = json.loads(data)["session_id"]
    wait_terminal(service, sid)
    # the session started from home, not from the previous converged pose


def test_provider_failure_surfaces_as_error_status(service):
    # resolves fine, then the first segment() call finds nothing listening
    status, data, _ = start_session(service, provider="remote:127.0.0.1:1")
    assert status == 200
    sid = json.loads(data)["session_id"]
    doc = wait_terminal(service, sid)
    assert doc["status"] == "Error"
    assert "ProviderUnavailable" in doc["error"]


def test_attempt_counter_cycles_and_resets_on_success(service):
    # perception timeouts never grasp, so the counter climbs to 3 then wraps
    attempts = []
    for _ in range(4):
        status, data, _ = start_session(service, prompt="unicorn")
        assert status == 200
        sid = json.loads(data)["session_id"]
        doc = wait_terminal(service, sid)
        assert doc["status"] == "PerceptionTimeout"
        attempts.append(doc["attempt"])
    assert attempts == [1, 2, 3, 1]

    # a grasp success clears the counter for the task key
    status, data, _ = start_session(service, reset=True)
    sid = json.loads(data)["session_id"]
    assert wait_terminal(service, sid)["grasp_success"] is True
    status, data, _ = start_session(service, prompt="orange", reset=True)
    sid = json.loads(data)["session_id"]
    assert wait_terminal(service, sid)["attempt"] == 1


# ---------------------------------------------------------------------------
# telemetry


def read_stream(svc, sid, timeout=POLL_DEADLINE_S):
    conn = http.client.HTTPConnection("127.0.0.1", svc.port, timeout=timeout)
    conn.request("GET", f"/session/{sid}/telemetry")
    resp = conn.getresponse()
    assert resp.status == 200
    assert resp.getheader("Content-Type") == "application/x-ndjson"
    lines = []
    while True:
        raw = resp.readline()
        if not raw:
            break
        lines.append(json.loads(raw))
    conn.close()
    return lines


def check_stream(lines, snapshot):
    steps = [l for l in lines if "step" in l]
    assert [l["step"] for l in steps] == list(range(1, len(steps) + 1))
    for line in steps:
        assert set(line) >= {"step", "q", "e", "e_norm", "status", "overlay", "dropped"}
        assert set(line["overlay"]) == {"points", "lines"}
    end = lines[-1]
    assert end["event"] == "end"
    assert end["outcome"] == snapshot["outcome"]
    assert end["steps"] == len(steps)
    assert end["grasp_success"] == snapshot["grasp_success"]
    return steps


def test_telemetry_replay_after_completion(service):
    status, data, _ = start_session(service)
    sid = json.loads(data)["session_id"]
    snapshot = wait_terminal(service, sid)

    lines = read_stream(service, sid)
    steps = check_stream(lines, snapshot)
    assert steps[-1]["status"] == "Converged"
    assert all(l["dropped"] == 0 for l in lines)


def test_telemetry_live_stream_matches_replay(service):
    status, data, _ = start_session(service, reset=True)
    sid = json.loads(data)["session_id"]
    live = read_stream(service, sid)  # subscribes while running
    snapshot = wait_terminal(service, sid)
    check_stream(live, snapshot)

    replay = read_stream(service, sid)
    strip = lambda ls: [{k: v for k, v in l.items() if k != "dropped"} for l in ls]
    assert strip(live) == strip(replay)


def test_subscriber_queue_drops_oldest_when_full():
    sub = _Subscriber()
    for i in range(TELEMETRY_QUEUE_SIZE + 3):
        sub.push({"i": i})
    assert sub.dropped == 3
    assert sub.queue.qsize() == TELEMETRY_QUEUE_SIZE
    assert sub.queue.get_nowait() == {"i": 3}  # oldest survivors shifted


# ---------------------------------------------------------------------------
# static files


def test_static_console_serving_and_traversal_guard(tmp_path):
    (tmp_path / "index.html").write_text("<h1>console</h1>")
    (tmp_path / "app.js").write_text("window.ok = 1;")
    (tmp_path.parent / "secret.txt").write_text("nope")

    svc = ServoService(close_sphere_scene(), SessionConfig(), static_dir=tmp_path)
    svc.start_background()
    try:
        status, data, headers = request(svc, "GET", "/")
        assert status == 200 and b"console" in data
        assert headers["Content-Type"].startswith("text/html")

        status, data, headers = request(svc, "GET", "/console/app.js")
        assert status == 200 and b"window.ok" in data
        assert headers["Content-Type"].startswith("text/javascript")

        assert request(svc, "GET", "/console/missing.js")[0] == 404
        assert request(svc, "GET", "/console/../secret.txt")[0] == 404
    finally:
        svc.shutdown()


def test_no_static_dir_means_no_root_route(service):
    assert request(service, "GET", "/")[0] == 404
    assert request(service, "GET", "/console/index.html")[0] == 404
