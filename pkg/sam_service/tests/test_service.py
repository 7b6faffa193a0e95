import base64
import io
import json
import math
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from sam_service.app import create_app
from sam_service.config import ServiceConfig
from sam_service.stub import segment_gray, shoelace

FIXTURES = sorted((Path(__file__).parent / "fixtures" / "wire").glob("*.json"))


def canonical(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def png_b64(arr) -> str:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app(ServiceConfig()))


def test_healthz_contract(client):
    reply = client.get("/healthz")
    assert reply.status_code == 200
    assert reply.json() == {"status": "ok", "backend": "stub"}


@pytest.mark.parametrize("path", FIXTURES, ids=[p.stem for p in FIXTURES])
def test_wire_fixture_replay(client, path):
    doc = json.loads(path.read_text())
    reply = client.post("/segment", json=doc["request"])
    assert reply.status_code == 200
    assert canonical(reply.json()) == canonical(doc["response"])


def test_identical_requests_identical_responses(client):
    doc = json.loads(FIXTURES[0].read_text())
    first = client.post("/segment", json=doc["request"])
    second = client.post("/segment", json=doc["request"])
    assert first.content == second.content


def test_disk_polygon_area_matches_analytic(client):
    radius = 20.25
    arr = np.full((56, 56), 15, dtype=np.uint8)
    rr, cc = np.mgrid[0:56, 0:56]
    arr[(cc - 28.0) ** 2 + (rr - 28.0) ** 2 <= radius ** 2] = 220
    reply = client.post(
        "/segment",
        json={
            "image_png_b64": png_b64(arr),
            "prompts": [{"x": 28, "y": 28, "positive": True}],
            "multimask": False,
        },
    )
    assert reply.status_code == 200
    masks = reply.json()["masks"]
    assert len(masks) == 1
    area = shoelace(masks[0]["polygon"])
    assert area == pytest.approx(math.pi * radius ** 2, rel=0.02)
    assert masks[0]["score"] == 1.0


def test_prompt_on_nodata_returns_no_masks(client):
    arr = np.zeros((16, 16), dtype=np.uint8)
    reply = client.post(
        "/segment",
        json={"image_png_b64": png_b64(arr), "prompts": [{"x": 4, "y": 4, "positive": True}]},
    )
    assert reply.status_code == 200
    assert reply.json() == {"masks": []}


# ------------------------------------------------------------ error paths


def valid_request():
    arr = np.full((8, 8), 100, dtype=np.uint8)
    return {"image_png_b64": png_b64(arr), "prompts": [{"x": 2, "y": 2, "positive": True}]}


def test_malformed_json_body_is_400(client):
    reply = client.post("/segment", content=b"{not json", headers={"content-type": "application/json"})
    assert reply.status_code == 400
    assert "error" in reply.json()


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.pop("image_png_b64"),
        lambda d: d.update(image_png_b64="@@not base64@@"),
        lambda d: d.update(image_png_b64=base64.b64encode(b"not a png").decode()),
        lambda d: d.update(prompts="everywhere"),
        lambda d: d.update(prompts=[{"x": "left", "y": 2, "positive": True}]),
        lambda d: d.update(prompts=[{"x": 2, "y": 2, "positive": "yes"}]),
        lambda d: d.update(prompts=[{"x": 99, "y": 2, "positive": True}]),
    ],
    ids=[
        "missing_image", "bad_base64", "not_png", "prompts_not_list",
        "non_numeric_prompt", "non_boolean_flag", "prompt_out_of_bounds",
    ],
)
def test_malformed_requests_are_400(client, mutate):
    doc = valid_request()
    mutate(doc)
    reply = client.post("/segment", json=doc)
    assert reply.status_code == 400
    assert "error" in reply.json()


def test_color_image_is_400_in_stub_mode(client):
    rgb = np.zeros((8, 8, 3), dtype=np.uint8)
    doc = valid_request()
    doc["image_png_b64"] = png_b64(rgb)
    reply = client.post("/segment", json=doc)
    assert reply.status_code == 400


def test_oversized_image_is_413():
    small_cap = TestClient(create_app(ServiceConfig(max_dim=64)))
    arr = np.zeros((65, 10), dtype=np.uint8)
    doc = valid_request()
    doc["image_png_b64"] = png_b64(arr)
    reply = small_cap.post("/segment", json=doc)
    assert reply.status_code == 413
    assert "error" in reply.json()


def test_sam_mode_without_model_is_503():
    app = create_app(ServiceConfig(mode="sam", checkpoint="/nonexistent/sam.pth"))
    with TestClient(app) as sam_client:
        assert sam_client.get("/healthz").json() == {"status": "ok", "backend": "sam"}
        reply = sam_client.post("/segment", json=valid_request())
        assert reply.status_code == 503
        assert reply.json() == {"error": "model not loaded"}


def test_sam_mode_requires_checkpoint():
    with pytest.raises(ValueError):
        ServiceConfig(mode="sam")
    with pytest.raises(ValueError):
        ServiceConfig(mode="banana")


def test_error_then_success_is_stateless(client):
    assert client.post("/segment", json={"image_png_b64": 5, "prompts": []}).status_code == 400
    doc = json.loads(FIXTURES[0].read_text())
    reply = client.post("/segment", json=doc["request"])
    assert reply.status_code == 200
    assert canonical(reply.json()) == canonical(doc["response"])


# ------------------------------------------------------- stub unit checks


def test_segment_gray_is_pure():
    arr = np.full((12, 12), 50, dtype=np.uint8)
    arr[3:9, 3:9] = 200
    before = arr.copy()
    first = segment_gray(arr, [(5.0, 5.0, True)])
    second = segment_gray(arr, [(5.0, 5.0, True)])
    assert first == second
    assert np.array_equal(arr, before)
    assert shoelace(first[0]["polygon"]) == 36.0
