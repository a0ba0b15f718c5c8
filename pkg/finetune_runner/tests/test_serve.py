"""Generation server: wire shape, error handling, concurrency."""

import json
import threading

import pytest
import requests

from finetune_runner.serve import GenerationServer, validate_request
from finetune_runner.train import TrainConfig, train_adapter

from dataset_builders import SEPARATOR, identity_pairs, write_pairs


@pytest.fixture(scope="module")
def server(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("serve")
    pairs = identity_pairs(40, words=8, seed=21)
    path = write_pairs(tmp / "pairs.jsonl", pairs)
    train_adapter(
        path,
        TrainConfig(epochs=25, learning_rate=3e-3, batch_size=16, max_seq_len=48, seed=1),
        tmp / "ckpt",
    )
    srv = GenerationServer(tmp / "ckpt", port=0).start()
    yield srv
    srv.stop()


def _post(server, payload):
    return requests.post(server.base_url, json=payload, timeout=30)


def _chat(content, **kwargs):
    return {"model": "ft", "messages": [{"role": "user", "content": content}], **kwargs}


def test_health(server):
    resp = requests.get(f"http://127.0.0.1:{server.port}/health", timeout=10)
    assert resp.status_code == 200


def test_completion_shape(server):
    resp = _post(server, _chat("tok01 tok02" + SEPARATOR))
    assert resp.status_code == 200
    body = resp.json()
    assert body["object"] == "chat.completion"
    message = body["choices"][0]["message"]
    assert message["role"] == "assistant"
    assert isinstance(message["content"], str)
    assert body["usage"]["total_tokens"] > 0


def test_malformed_json_is_400(server):
    resp = requests.post(
        server.base_url, data=b"{nope", headers={"Content-Type": "application/json"}, timeout=10
    )
    assert resp.status_code == 400
    assert "error" in resp.json()


@pytest.mark.parametrize(
    "payload",
    [
        {"messages": [{"role": "user", "content": "x"}]},  # no model
        {"model": "ft", "messages": []},
        {"model": "ft", "messages": [{"role": "alien", "content": "x"}]},
        {"model": "ft", "messages": [{"role": "user", "content": 5}]},
        {"model": "ft", "messages": [{"role": "user", "content": "  "}]},  # empty prompt
        {"model": "ft", "messages": [{"role": "user", "content": "x"}], "temperature": "hot"},
        {"model": "ft", "messages": [{"role": "user", "content": "x"}], "max_tokens": "many"},
    ],
)
def test_bad_requests_are_400(server, payload):
    resp = _post(server, payload)
    assert resp.status_code == 400
    assert "error" in resp.json()


def test_validate_request_mirrors_server():
    assert validate_request(_chat("hello")) is None
    assert validate_request({"model": "m"}) is not None


def test_unknown_path_is_404(server):
    resp = requests.post(f"http://127.0.0.1:{server.port}/other", json=_chat("x"), timeout=10)
    assert resp.status_code == 404


def test_concurrent_requests_independent_of_order(server):
    prompts = [f"tok0{i} tok1{i % 10}" + SEPARATOR for i in range(8)]
    sequential = [_post(server, _chat(p)).json()["choices"][0]["message"]["content"] for p in prompts]
    results = {}

    def worker(i, prompt):
        results[i] = _post(server, _chat(prompt)).json()["choices"][0]["message"]["content"]

    threads = [threading.Thread(target=worker, args=(i, p)) for i, p in enumerate(prompts)]
    for t in reversed(threads):
        t.start()
    for t in threads:
        t.join()
    assert [results[i] for i in range(8)] == sequential
