import base64
import io
import json
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from gsgn.service import ServiceState, create_app


def png_bytes(arr: np.ndarray) -> bytes:
    img = (np.clip(arr, 0, 1).transpose(1, 2, 0) * 255).round().astype(
        np.uint8)
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="PNG")
    return buf.getvalue()


@pytest.fixture()
def service(toy_multitask_checkpoint):
    state = ServiceState(edge=64, max_edge=128)
    state.swap(toy_multitask_checkpoint)
    return state, TestClient(create_app(state))


@pytest.fixture()
def client(service):
    return service[1]


def enhance_json(client, image, style, **extra):
    payload = {"image": base64.b64encode(png_bytes(image)).decode(),
               "style": style}
    payload.update(extra)
    return client.post("/v1/enhance", json=payload)


IMG = np.random.default_rng(0).uniform(0, 1, (3, 48, 64)).astype(np.float32)


class TestHealthz:
    def test_loaded(self, client):
        r = client.get("/healthz")
        assert r.status_code == 200
        assert len(r.json()["model_id"]) == 16

    def test_not_loaded(self):
        client = TestClient(create_app(ServiceState()))
        assert client.get("/healthz").status_code == 503
        assert client.get("/v1/styles").status_code == 503
        r = client.post("/v1/enhance", json={"image": "aGk=", "style": None})
        assert r.status_code == 503


class TestStyles:
    def test_order_matches_checkpoint(self, client):
        r = client.get("/v1/styles")
        assert r.status_code == 200
        assert r.json() == [{"index": 0, "name": "warm"},
                            {"index": 1, "name": "cool"},
                            {"index": 2, "name": "bright"}]


class TestEnhance:
    def test_named_style_returns_content_dimensions(self, client):
        r = enhance_json(client, IMG, "warm")
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        with Image.open(io.BytesIO(r.content)) as im:
            assert im.size == (64, 48)          # (W, H) of content region
        meta = json.loads(r.headers["X-Enhance-Meta"])
        assert meta["style"] == "warm"
        assert meta["inference_ms"] >= 0

    def test_weight_vector(self, client):
        r = enhance_json(client, IMG, [0.5, 0.5, 0.0])
        assert r.status_code == 200

    def test_weights_clamped_to_unit_interval(self, client):
        r_big = enhance_json(client, IMG, [5.0, 0.0, 0.0])
        r_one = enhance_json(client, IMG, [1.0, 0.0, 0.0])
        assert r_big.status_code == r_one.status_code == 200
        assert r_big.content == r_one.content

    def test_wrong_length_vector_400(self, client):
        r = enhance_json(client, IMG, [1.0, 0.0])
        assert r.status_code == 400
        assert "entries" in r.json()["detail"]

    def test_unknown_style_400(self, client):
        assert enhance_json(client, IMG, "nosuch").status_code == 400

    def test_missing_style_400(self, client):
        assert enhance_json(client, IMG, None).status_code == 400

    def test_undecodable_image_400(self, client):
        r = client.post("/v1/enhance",
                        json={"image": base64.b64encode(b"junk").decode(),
                              "style": "warm"})
        assert r.status_code == 400

    def test_bad_base64_400(self, client):
        r = client.post("/v1/enhance",
                        json={"image": "!!!", "style": "warm"})
        assert r.status_code == 400

    def test_oversized_413(self, client):
        big = np.zeros((3, 200, 10), dtype=np.float32)
        assert enhance_json(client, big, "warm").status_code == 413

    def test_deterministic_bytes(self, client):
        r1 = enhance_json(client, IMG, "cool")
        r2 = enhance_json(client, IMG, "cool")
        assert r1.content == r2.content

    def test_multipart_equals_json(self, client):
        r_json = enhance_json(client, IMG, "bright")
        r_multi = client.post(
            "/v1/enhance",
            files={"image": ("in.png", png_bytes(IMG), "image/png")},
            data={"style": "bright"})
        assert r_multi.status_code == 200
        assert r_multi.content == r_json.content

    def test_return_metrics(self, client):
        r = enhance_json(client, IMG, "warm", return_metrics=True)
        meta = json.loads(r.headers["X-Enhance-Meta"])
        assert "output_mean" in meta and "output_std" in meta


class TestHotSwap:
    def test_swap_is_atomic_and_visible(self, service,
                                        toy_multitask_checkpoint,
                                        tmp_path):
        state, client = service
        first = client.get("/healthz").json()["model_id"]
        before = enhance_json(client, IMG, "warm").content

        # perturb a copy of the checkpoint to get a distinct model
        from gsgn.checkpoint import load_checkpoint, save_checkpoint
        ck = load_checkpoint(toy_multitask_checkpoint)
        key = next(k for k in ck.tensors if k.startswith("model.")
                   and k.endswith("conv_out.bias"))
        ck.tensors[key] = ck.tensors[key] + 0.05
        other = tmp_path / "other.gsgn"
        save_checkpoint(ck, other)

        state.swap(other)
        second = client.get("/healthz").json()["model_id"]
        after = enhance_json(client, IMG, "warm").content
        assert first != second
        assert before != after

        state.swap(toy_multitask_checkpoint)
        assert enhance_json(client, IMG, "warm").content == before

    def test_concurrent_requests_consistent(self, service):
        _, client = service
        reference = enhance_json(client, IMG, "warm").content
        results = []
        errors = []

        def worker():
            try:
                results.append(enhance_json(client, IMG, "warm").content)
            except Exception as e:                  # noqa: BLE001
                errors.append(e)

        threads = [threading.Thread(target=worker) for _ in range(6)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        assert not errors
        assert all(r == reference for r in results)
