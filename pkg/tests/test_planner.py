import json

import pytest

from storybooth.errors import PlanParseError, PlanValidationError, TransportError
from storybooth.plan import StoryPrompt, mock_plan, plan_violations, serialize_plan
from storybooth.planner import (
    API_KEY_ENV,
    HttpChatClient,
    MockChatClient,
    PlannerConfig,
    RecordedChatClient,
    build_messages,
    extract_json,
    load_exemplars,
    plan_storyboard,
)

PROMPT = StoryPrompt("a cat and a robot explore the city", 3)


def _valid_reply():
    return "Here is the plan:\n```json\n" + serialize_plan(mock_plan(PROMPT, 2, 4)) + "```"


def test_exemplars_are_valid_plans():
    pairs = load_exemplars()
    assert len(pairs) == 5
    for prompt, plan in pairs:
        assert plan.prompt == prompt
        assert plan_violations(plan) == []


def test_messages_carry_exemplars_then_request():
    config = PlannerConfig()
    msgs = build_messages(PROMPT, config)
    assert msgs[0]["role"] == "system"
    assert len(msgs) == 2 + 2 * len(config.exemplars)
    assert json.loads(msgs[-1]["content"].split("\n", 1)[1]) == {"prompt": PROMPT.text, "frame_count": 3}


def test_extract_json_prefers_last_fence():
    text = "```json\n{\"a\": 1}\n```\nthen\n```json\n{\"b\": 2}\n```"
    assert json.loads(extract_json(text)) == {"b": 2}
    assert json.loads(extract_json("thinking... {\"c\": 3} done")) == {"c": 3}
    with pytest.raises(PlanParseError):
        extract_json("no object here")


def test_mock_client_plans_satisfy_invariants():
    plan = plan_storyboard(PROMPT, PlannerConfig(), MockChatClient(seed=2, subject_count=3))
    assert plan_violations(plan) == []
    assert len(plan.frames) == PROMPT.frame_count
    assert plan.attempt_count == 1


def test_malformed_twice_then_valid_takes_three_attempts():
    client = RecordedChatClient(["{\"frames\": [", "sorry, I cannot comply", _valid_reply()])
    plan = plan_storyboard(PROMPT, PlannerConfig(), client)
    assert plan.attempt_count == 3
    assert len(plan.transcript.replies) == 3
    assert len(client.calls) == 3
    # each retry re-sends the history plus a correction request
    assert len(client.calls[2]["messages"]) == len(client.calls[0]["messages"]) + 4
    assert "could not be used" in client.calls[1]["messages"][-1]["content"]


def test_three_malformed_replies_raise_parse_error():
    client = RecordedChatClient(["{", "{", "nope"])
    with pytest.raises(PlanParseError) as info:
        plan_storyboard(PROMPT, PlannerConfig(), client)
    assert info.value.attempts == 3


def test_invalid_plan_then_valid_is_retried():
    bad = json.loads(serialize_plan(mock_plan(PROMPT, 2, 4)))
    bad["frames"][0]["layouts"][0]["box"] = [0.6, 0.0, 0.2, 1.0]
    client = RecordedChatClient([json.dumps(bad), _valid_reply()])
    assert plan_storyboard(PROMPT, PlannerConfig(), client).attempt_count == 2


def test_wrong_frame_count_exhausts_as_validation_error():
    other = serialize_plan(mock_plan(StoryPrompt(PROMPT.text, 5), 2, 4))
    with pytest.raises(PlanValidationError):
        plan_storyboard(PROMPT, PlannerConfig(max_attempts=2), RecordedChatClient([other, other]))


def test_transport_failures_exhaust_as_transport_error():
    client = RecordedChatClient([TransportError("down")] * 3)
    with pytest.raises(TransportError):
        plan_storyboard(PROMPT, PlannerConfig(), client)


def test_http_client_against_recorded_transport(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "test-key")
    replies = ["```json\n{broken", _valid_reply()]
    sent = []

    def post(url, payload, headers, timeout):
        sent.append((url, payload, headers))
        return {"choices": [{"message": {"role": "assistant", "content": replies.pop(0)}}]}

    client = HttpChatClient("http://planner.invalid/v1/chat", post=post)
    plan = plan_storyboard(PROMPT, PlannerConfig(model_name="m1", temperature=0.2), client)
    assert plan.attempt_count == 2
    url, payload, headers = sent[0]
    assert url == "http://planner.invalid/v1/chat"
    assert headers["Authorization"] == "Bearer test-key"
    assert payload["model"] == "m1" and payload["temperature"] == 0.2


def test_http_client_bad_response_shape():
    client = HttpChatClient("http://x.invalid", api_key="", post=lambda *a: {"oops": 1})
    with pytest.raises(TransportError):
        client.complete([{"role": "user", "content": "hi"}], model="m", temperature=0.0)


@pytest.mark.parametrize("kwargs", [{"temperature": -1.0}, {"max_attempts": 0}, {"exemplars": ()}])
def test_planner_config_bounds(kwargs):
    if kwargs.get("exemplars") == ():
        assert PlannerConfig(**kwargs).exemplars == ()
    else:
        with pytest.raises(PlanValidationError):
            PlannerConfig(**kwargs)
