"""Judge score parsing and retry behavior."""

import pytest

from dprecon.errors import ConfigError
from dprecon.judge import DEFAULT_JUDGE_TEMPLATE, JudgeConfig, judge_score, parse_score
from dprecon.mocks import CannedTransport

from conftest import mock_gateway


@pytest.mark.parametrize(
    "reply,expected",
    [
        ("10", 10),
        ("Score: 7/10", 7),
        ("no idea", None),
        ("I'd say 7.5 overall", None),
        ("-3", None),
        ("11 maybe", None),
        ("0", 0),
        ("rates an 8 (eight)", 8),
        ("3.0 or so", None),
    ],
)
def test_parse_score(reply, expected):
    assert parse_score(reply) == expected


def test_template_must_mention_both_texts():
    with pytest.raises(ConfigError):
        JudgeConfig(model="j", system_template="score {text1} please")
    assert "{text1}" in DEFAULT_JUDGE_TEMPLATE and "{text2}" in DEFAULT_JUDGE_TEMPLATE


def test_judge_deterministic_mock(tmp_path):
    gateway = mock_gateway(tmp_path, {"j": CannedTransport("10")})
    assert judge_score("a", "b", gateway, JudgeConfig(model="j")) == 10


def test_judge_parses_fraction_style(tmp_path):
    gateway = mock_gateway(tmp_path, {"j": CannedTransport("Score: 7/10")})
    assert judge_score("a", "b", gateway, JudgeConfig(model="j")) == 7


def test_judge_exhausts_retries_to_undefined(tmp_path):
    transport = CannedTransport("no idea")
    gateway = mock_gateway(tmp_path, {"j": transport})
    config = JudgeConfig(model="j", max_retries=2)
    assert judge_score("a", "b", gateway, config) is None
    assert transport.calls == 3  # initial + 2 retries, each a distinct request


def test_judge_recovers_on_retry(tmp_path):
    transport = CannedTransport(["unsure", "8"])
    gateway = mock_gateway(tmp_path, {"j": transport})
    assert judge_score("a", "b", gateway, JudgeConfig(model="j")) == 8
    assert transport.calls == 2


def test_judge_identical_inputs_hit_cache(tmp_path):
    transport = CannedTransport("9")
    gateway = mock_gateway(tmp_path, {"j": transport})
    config = JudgeConfig(model="j")
    first = judge_score("text one", "text two", gateway, config)
    second = judge_score("text one", "text two", gateway, config)
    assert first == second == 9
    assert transport.calls == 1


def test_judge_sends_template_verbatim(tmp_path):
    seen = {}

    def transport(url, payload, headers):
        seen["messages"] = payload["messages"]
        return 200, {
            "choices": [{"message": {"role": "assistant", "content": "5"}, "finish_reason": "stop"}]
        }

    gateway = mock_gateway(tmp_path, {"j": transport})
    judge_score("ORIG", "RECON", gateway, JudgeConfig(model="j"))
    system, user = seen["messages"]
    assert system["content"] == DEFAULT_JUDGE_TEMPLATE
    assert "{text1}" in system["content"]  # slots travel unfilled
    assert user["content"] == "Text1: ORIG Text2: RECON"
