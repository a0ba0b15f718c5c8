"""Sentence-level mechanism: clipping, temperature sampling, both backends."""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dprecon.errors import ProviderError, SanitizeError
from dprecon.mocks import CannedTransport, EchoTransport
from dprecon.sentence_dp import (
    HttpLogitProvider,
    SentenceDpConfig,
    api_paraphrase,
    clip_logits,
    dp_decode,
    ldp_budget,
    temperature_distribution,
    template_hash,
)

from conftest import mock_gateway

# --- clip ----------------------------------------------------------------------


def test_clip_noop_below_bound():
    u = np.array([0.1, -0.2])
    assert np.array_equal(clip_logits(u, 10.0), u)


def test_clip_rescales_exactly():
    assert np.allclose(clip_logits(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])


def test_clip_zero_vector():
    assert np.array_equal(clip_logits(np.zeros(4), 2.0), np.zeros(4))


def test_clip_rejects_bad_bound():
    with pytest.raises(SanitizeError):
        clip_logits(np.ones(3), 0.0)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20),
    st.floats(1e-3, 1e3),
)
def test_clip_contract(values, bound):
    u = np.array(values)
    clipped = clip_logits(u, bound)
    assert np.linalg.norm(clipped) <= bound * (1 + 1e-12)
    if np.linalg.norm(u) <= bound:
        assert np.array_equal(clipped, u)
    else:
        assert not np.array_equal(clipped, u)


# --- temperature softmax ---------------------------------------------------------


def test_softmax_symmetric():
    assert np.allclose(temperature_distribution(np.zeros(2), 1.0), [0.5, 0.5])


def test_softmax_closed_form():
    e = np.e
    assert np.allclose(
        temperature_distribution(np.array([1.0, 0.0]), 1.0),
        [e / (e + 1), 1 / (e + 1)],
    )


def test_softmax_flattens_at_large_temperature():
    probs = temperature_distribution(np.array([1.0, 0.0]), 1e6)
    assert np.allclose(probs, [0.5, 0.5], atol=1e-6)


def test_softmax_entropy_non_decreasing_in_temperature():
    u = np.array([3.0, 1.0, 0.0, -2.0])
    entropies = []
    for t in (0.3, 1.0, 2.0, 5.0, 20.0):
        p = temperature_distribution(u, t)
        entropies.append(float(-(p * np.log(p)).sum()))
    assert entropies == sorted(entropies)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-500, 500), min_size=1, max_size=30),
    st.floats(0.01, 100.0),
)
def test_softmax_contract(values, temperature):
    u = np.array(values)
    p = temperature_distribution(u, temperature)
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.all(p >= 0)
    # the maximal logit attains maximal probability at every temperature
    assert p[int(np.argmax(u))] == p.max()


# --- ldp budget ------------------------------------------------------------------


def test_budget_examples():
    assert ldp_budget(1, 1.0, 2.0) == 1.0
    assert ldp_budget(0, 1.0, 2.0) == 0.0
    assert ldp_budget(64, 50.0, 1.5) == pytest.approx(4266.67, abs=0.01)


def test_budget_linearity():
    assert ldp_budget(17, 3.0, 1.5) == pytest.approx(17 * ldp_budget(1, 3.0, 1.5))


def test_budget_rejects_nonpositive():
    with pytest.raises(SanitizeError):
        ldp_budget(-1, 1.0, 1.0)
    with pytest.raises(SanitizeError):
        ldp_budget(1, 0.0, 1.0)
    with pytest.raises(SanitizeError):
        ldp_budget(1, 1.0, -2.0)


# --- exact decode ----------------------------------------------------------------


class ScriptedProvider:
    """Mock provider emitting from a per-step logit script."""

    returns_full_vocab = True

    def __init__(self, vocab, script, eos_id=None, fail_times=0):
        self.vocab = vocab
        self.vocab_size = len(vocab)
        self.script = script
        self.eos_id = eos_id
        self.fail_times = fail_times
        self.calls = 0

    def encode(self, text):
        return [0]

    def decode(self, token_id):
        return self.vocab[token_id]

    def next_logits(self, prefix):
        self.calls += 1
        if self.calls <= self.fail_times:
            raise ConnectionError("flaky provider")
        step = len(prefix) - 1
        return np.array(self.script[min(step, len(self.script) - 1)], dtype=float)


def _dominant(vocab_size, index, gap=1000.0):
    logits = np.zeros(vocab_size)
    logits[index] = gap
    return logits


def test_decode_greedy_when_gap_dominates():
    vocab = ["a ", "b ", "c ", "<eos>"]
    provider = ScriptedProvider(
        vocab,
        [_dominant(4, 0), _dominant(4, 1), _dominant(4, 2), _dominant(4, 3)],
        eos_id=3,
    )
    cfg = SentenceDpConfig(temperature=0.05, clip_bound=100.0, max_tokens=10)
    rec = dp_decode("hello", provider, cfg, np.random.default_rng(0), doc_id="d")
    assert rec.sanitized == "a b c"
    assert rec.tokens_emitted == 3
    assert rec.mechanism == "sentence_level_exact"
    assert rec.budget == 0.05


def test_decode_single_step_law_matches_softmax():
    logits = np.array([2.0, 1.5, 1.0, 0.5, 0.0, -0.5, -1.0, -1.5, -2.0, 3.0])
    cfg = SentenceDpConfig(temperature=1.5, clip_bound=4.0, max_tokens=1)
    provider = ScriptedProvider([f"t{i}" for i in range(10)], [logits])
    expected = temperature_distribution(clip_logits(logits, 4.0), 1.5)
    rng = np.random.default_rng(7)
    n = 20_000
    counts = np.zeros(10)
    for _ in range(n):
        rec = dp_decode("x", provider, cfg, rng)
        counts[int(rec.sanitized[1:])] += 1
    result = stats.chisquare(counts, expected * n)
    assert result.pvalue > 0.005


def test_decode_rejects_vocab_mismatch():
    provider = ScriptedProvider(["a", "b"], [np.zeros(3)])
    cfg = SentenceDpConfig(max_tokens=1)
    with pytest.raises(SanitizeError, match="vocab"):
        dp_decode("x", provider, cfg, np.random.default_rng(0))


def test_decode_rejects_top_k_provider():
    provider = ScriptedProvider(["a", "b"], [np.zeros(2)])
    provider.returns_full_vocab = False
    with pytest.raises(SanitizeError, match="top-k"):
        dp_decode("x", provider, SentenceDpConfig(max_tokens=1), np.random.default_rng(0))


def test_decode_retries_flaky_provider():
    provider = ScriptedProvider(["a ", "<eos>"], [_dominant(2, 0), _dominant(2, 1)],
                                eos_id=1, fail_times=2)
    cfg = SentenceDpConfig(temperature=0.05, clip_bound=100.0, max_tokens=5, provider_retries=2)
    rec = dp_decode("x", provider, cfg, np.random.default_rng(0))
    assert rec.sanitized == "a"


def test_decode_provider_failure_carries_attempts():
    provider = ScriptedProvider(["a"], [_dominant(1, 0)], fail_times=100)
    cfg = SentenceDpConfig(max_tokens=1, provider_retries=2)
    with pytest.raises(ProviderError) as err:
        dp_decode("x", provider, cfg, np.random.default_rng(0))
    assert err.value.attempts == 3


def test_decode_replay():
    logits = [np.linspace(-1, 1, 6) for _ in range(8)]
    cfg = SentenceDpConfig(temperature=1.0, clip_bound=10.0, max_tokens=8)
    outs = set()
    for _ in range(3):
        provider = ScriptedProvider([f"t{i} " for i in range(6)], logits)
        rec = dp_decode("x", provider, cfg, np.random.default_rng(99))
        outs.add(rec.sanitized)
    assert len(outs) == 1


# --- API backend -----------------------------------------------------------------


def test_api_paraphrase_echo(tmp_path):
    gateway = mock_gateway(tmp_path, {"m": EchoTransport()})
    rec = api_paraphrase("Keep this text.", gateway, 1.5, model="m", doc_id="d0")
    assert rec.sanitized == "Paraphrase the following text: Keep this text."
    assert rec.mechanism == "sentence_level_api"
    assert rec.budget == 1.5


def test_api_paraphrase_canned_stores_verbatim(tmp_path):
    gateway = mock_gateway(tmp_path, {"m": CannedTransport("A rewritten paragraph.")})
    template = "Rewrite: {text}"
    rec = api_paraphrase("original", gateway, 2.0, template=template, model="m")
    assert rec.sanitized == "A rewritten paragraph."
    assert rec.template_hash == template_hash(template)


@pytest.mark.parametrize("temperature", [1.0, 1.5, 2.0])
def test_api_paraphrase_temperature_sweep(tmp_path, temperature):
    gateway = mock_gateway(tmp_path, {"m": EchoTransport()})
    rec = api_paraphrase("text", gateway, temperature, model="m")
    assert rec.budget == temperature


def test_api_paraphrase_empty_completion_retries_then_fails(tmp_path):
    transport = CannedTransport(["", "", ""])
    gateway = mock_gateway(tmp_path, {"m": transport})
    with pytest.raises(SanitizeError, match="empty"):
        api_paraphrase("text", gateway, 1.0, model="m")
    assert transport.calls == 2


def test_api_paraphrase_empty_then_recovers(tmp_path):
    gateway = mock_gateway(tmp_path, {"m": CannedTransport(["", "recovered"])})
    rec = api_paraphrase("text", gateway, 1.0, model="m")
    assert rec.sanitized == "recovered"


def test_api_paraphrase_bad_template(tmp_path):
    gateway = mock_gateway(tmp_path, {"m": EchoTransport()})
    with pytest.raises(SanitizeError):
        api_paraphrase("text", gateway, 1.0, template="no slot", model="m")


# --- HTTP logit provider -----------------------------------------------------------


class _LogitHandler(BaseHTTPRequestHandler):
    vocab = ["x ", "y ", "<eos>"]
    logits = [[8.0, 0.0, -8.0], [0.0, 8.0, -8.0], [-8.0, -8.0, 8.0]]

    def log_message(self, *args):
        pass

    def _reply(self, obj):
        body = json.dumps(obj).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        self._reply({"vocab_size": 3, "eos_id": 2})

    def do_POST(self):
        payload = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if self.path.endswith("/encode"):
            self._reply({"ids": [0]})
        elif self.path.endswith("/decode"):
            self._reply({"text": self.vocab[payload["id"]]})
        else:
            step = min(len(payload["prefix"]) - 1, len(self.logits) - 1)
            self._reply({"logits": self.logits[step]})


@pytest.fixture
def logit_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _LogitHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


def test_http_logit_provider_round_trip(logit_server):
    provider = HttpLogitProvider(logit_server)
    assert provider.vocab_size == 3
    assert provider.eos_id == 2
    cfg = SentenceDpConfig(temperature=0.05, clip_bound=100.0, max_tokens=6)
    rec = dp_decode("anything", provider, cfg, np.random.default_rng(1))
    assert rec.sanitized == "x y"
