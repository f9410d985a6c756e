import io
import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from knobdenoise.cli import main
from knobdenoise.degrade import add_awgn
from knobdenoise.engine import EngineConfig, build_profile, denoise_frame, synthetic_clip
from knobdenoise.media import frame_to_rgb8, read_png, read_y4m, write_y4m
from knobdenoise.paramnet import Knobs
from knobdenoise.preview import LRUBytes, create_app


def _png(data: bytes) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(data)).convert("RGB"))


def _live(data: bytes):
    head, png = data.split(b"\n", 1)
    return json.loads(head), _png(png)


@pytest.fixture(scope="module")
def media(tmp_path_factory):
    d = tmp_path_factory.mktemp("preview")
    write_y4m(add_awgn(synthetic_clip(48, 40, 4, seed=5), 25, 5), d / "a.y4m")
    write_y4m(add_awgn(synthetic_clip(48, 40, 4, seed=6, motion=(0.0, 1.0)), 64, 6), d / "b.y4m")
    (d / "junk.y4m").write_bytes(b"garbage")
    return d


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app()) as c:
        yield c


@pytest.fixture(scope="module")
def session(client, media):
    r = client.post("/sessions", json={"path": str(media / "a.y4m")})
    assert r.status_code == 201
    return r.json()["id"]


def _expected_rgb(path, n, knobs=Knobs()):
    clip = read_y4m(path)
    prof = build_profile(clip, EngineConfig(threads=1))
    return frame_to_rgb8(denoise_frame(clip, n, prof, knobs).frame)


# ---------------------------------------------------------------- sessions


def test_create_and_meta(client, session):
    m = client.get(f"/sessions/{session}/meta").json()
    assert (m["width"], m["height"], m["frames"]) == (48, 40, 4)
    assert m["knobs"] == [1.0] * 6


def test_create_errors(client, media):
    r = client.post("/sessions", json={"path": str(media / "missing.y4m")})
    assert r.status_code == 404 and r.json()["error"]["code"] == "file_not_found"
    r = client.post("/sessions", json={"path": str(media / "junk.y4m")})
    assert r.status_code == 422 and r.json()["error"]["code"] == "unreadable_media"
    r = client.post("/sessions", json={"clip": 3})
    assert r.status_code == 400 and r.json()["error"]["code"] == "bad_request"
    r = client.get("/sessions/deadbeef/meta")
    assert r.status_code == 404 and r.json()["error"]["code"] == "session_not_found"


def test_same_file_gives_distinct_sessions(client, media):
    a = client.post("/sessions", json={"path": str(media / "a.y4m")}).json()["id"]
    b = client.post("/sessions", json={"path": str(media / "a.y4m")}).json()["id"]
    assert a != b


# ---------------------------------------------------------------- previews


def test_preview_equals_engine(client, session, media):
    r = client.get(f"/sessions/{session}/frames/2", params={"knobs": "1,1,1,1,1,1"})
    assert r.status_code == 200 and r.headers["content-type"] == "image/png"
    assert np.array_equal(_png(r.content), _expected_rgb(media / "a.y4m", 2))


def test_preview_equals_cli_output(client, session, media, tmp_path):
    assert main(["denoise", "--input", str(media / "a.y4m"), "--output", str(tmp_path / "png"), "--threads", "2"]) == 0
    r = client.get(f"/sessions/{session}/frames/1")
    assert np.array_equal(_png(r.content), read_png(tmp_path / "png" / "frame_00001.png"))


def test_zero_knobs_equals_original(client, session):
    zero = client.get(f"/sessions/{session}/frames/0", params={"knobs": "0,0,0,0,0,0"})
    orig = client.get(f"/sessions/{session}/frames/0", params={"mode": "original"})
    diff = np.abs(_png(zero.content).astype(int) - _png(orig.content).astype(int))
    assert diff.max() <= 1


def test_split_mode(client, session):
    split = _png(client.get(f"/sessions/{session}/frames/3", params={"mode": "split"}).content)
    orig = _png(client.get(f"/sessions/{session}/frames/3", params={"mode": "original"}).content)
    den = _png(client.get(f"/sessions/{session}/frames/3").content)
    assert np.array_equal(split[:, :24], orig[:, :24])
    assert np.array_equal(split[:, 24:], den[:, 24:])


def test_repeat_request_hits_cache(client, session):
    q = {"knobs": "0.5,1.5,1,1,1,1"}
    first = client.get(f"/sessions/{session}/frames/1", params=q)
    second = client.get(f"/sessions/{session}/frames/1", params=q)
    assert first.headers["x-cache"] == "miss" and second.headers["x-cache"] == "hit"
    assert float(second.headers["x-render-ms"]) < float(first.headers["x-render-ms"])
    assert first.content == second.content


def test_cache_key_includes_knobs(client, session):
    a = client.get(f"/sessions/{session}/frames/1", params={"knobs": "1,1,1,1,1,1"}).content
    b = client.get(f"/sessions/{session}/frames/1", params={"knobs": "1,1,1,1,3,3"}).content
    assert a != b


@pytest.mark.parametrize("params,status,code", [
    ({"knobs": "1,1,1"}, 422, "invalid_knobs"),
    ({"knobs": "9,1,1,1,1,1"}, 422, "invalid_knobs"),
    ({"knobs": "a,b,c,d,e,f"}, 422, "invalid_knobs"),
    ({"mode": "sideways"}, 422, "invalid_mode"),
])
def test_preview_validation(client, session, params, status, code):
    r = client.get(f"/sessions/{session}/frames/0", params=params)
    assert r.status_code == status and r.json()["error"]["code"] == code


def test_frame_out_of_range(client, session):
    r = client.get(f"/sessions/{session}/frames/4")
    assert r.status_code == 404 and r.json()["error"]["code"] == "frame_out_of_range"


def test_concurrent_sessions_do_not_cross_talk(client, media):
    ids = {k: client.post("/sessions", json={"path": str(media / f"{k}.y4m")}).json()["id"] for k in "ab"}
    expect = {k: _expected_rgb(media / f"{k}.y4m", 2) for k in "ab"}

    def fetch(k):
        return k, _png(client.get(f"/sessions/{ids[k]}/frames/2", params={"knobs": "1,1,1,1,1,1"}).content)

    with ThreadPoolExecutor(4) as pool:
        for k, img in pool.map(fetch, "abab"):
            assert np.array_equal(img, expect[k])


def test_cache_memory_is_bounded(media):
    with TestClient(create_app(cache_mb=0.01)) as c:
        sid = c.post("/sessions", json={"path": str(media / "a.y4m")}).json()["id"]
        for i, k in enumerate(("1,1,1,1,1,1", "0,0,1,1,1,1", "2,2,1,1,1,1", "1,1,2,2,2,2")):
            c.get(f"/sessions/{sid}/frames/{i % 4}", params={"knobs": k})
        cache = c.get(f"/sessions/{sid}/meta").json()["cache"]
        assert cache["bytes"] <= cache["max_bytes"] == int(0.01 * 1024 * 1024)
        assert 0 < cache["entries"] < 4


def test_lru_evicts_oldest_first():
    c = LRUBytes(10)
    c.put("a", b"1234")
    c.put("b", b"1234")
    c.get("a")
    c.put("c", b"1234")
    assert "a" in c and "c" in c and "b" not in c
    assert c.nbytes == 8
    c.put("huge", b"x" * 11)
    assert "huge" not in c and c.nbytes == 8


# ---------------------------------------------------------------- live channel


def test_live_burst_is_coalesced(client, media):
    sid = client.post("/sessions", json={"path": str(media / "a.y4m")}).json()["id"]
    vectors = [[1, 1, 1, 1, round(0.1 * i, 1), round(0.1 * i, 1)] for i in range(1, 21)]
    with client.websocket_connect(f"/sessions/{sid}/live") as ws:
        for v in vectors:
            ws.send_text(json.dumps({"type": "knobs", "values": v}))
        replies = []
        while True:
            head, img = _live(ws.receive_bytes())
            replies.append(head)
            if head["knobs"] == [float(x) for x in vectors[-1]]:
                break
    assert 1 <= len(replies) <= 20
    assert [h["seq"] for h in replies] == list(range(1, len(replies) + 1))
    meta = client.get(f"/sessions/{sid}/meta").json()
    assert 1 <= meta["renders"] <= 20
    assert meta["knobs"] == [float(x) for x in vectors[-1]]
    assert np.array_equal(img, _expected_rgb(media / "a.y4m", 0, Knobs.from_sequence(vectors[-1])))


def test_live_rejects_bad_messages_without_state_change(client, media):
    sid = client.post("/sessions", json={"path": str(media / "a.y4m")}).json()["id"]
    with client.websocket_connect(f"/sessions/{sid}/live") as ws:
        ws.send_text(json.dumps({"type": "knobs", "values": [0.5] * 6}))
        ws.receive_bytes()
        for bad in ({"type": "knobs", "values": [9.0, 1, 1, 1, 1, 1]}, {"type": "knobs", "values": "x"},
                    {"type": "frame", "index": 99}, {"type": "mode", "mode": "zoom"}, {"type": "dance"}):
            ws.send_text(json.dumps(bad))
            assert "error" in json.loads(ws.receive_text())
        ws.send_text("{not json")
        assert json.loads(ws.receive_text())["error"]["code"] == "bad_message"
        ws.send_text(json.dumps({"type": "frame", "index": 2}))
        head, _ = _live(ws.receive_bytes())
    assert head["frame"] == 2 and head["knobs"] == [0.5] * 6
    meta = client.get(f"/sessions/{sid}/meta").json()
    assert meta["knobs"] == [0.5] * 6 and meta["frame"] == 2


def test_live_unknown_session(client):
    with client.websocket_connect("/sessions/nope/live") as ws:
        assert json.loads(ws.receive_text())["error"]["code"] == "session_not_found"
