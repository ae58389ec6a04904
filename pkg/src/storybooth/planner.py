"""LLM-driven storyboard planning with a pluggable chat-completion client.

The planner sends a fixed task description, a handful of worked exemplars
and the request to a chat model, then parses and validates the reply. Any
client with a ``complete(messages, *, model, temperature) -> str`` method
works; three are provided:

* :class:`HttpChatClient` posts to a generic JSON chat-completion endpoint.
* :class:`MockChatClient` answers with :func:`~storybooth.plan.mock_plan`.
* :class:`RecordedChatClient` replays canned replies (tests, audits).
"""

from __future__ import annotations

import json
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Callable, Protocol, Sequence

from .errors import PlanParseError, PlanValidationError, TransportError
from .plan import (
    PlannerTranscript,
    StoryboardPlan,
    StoryPrompt,
    mock_plan,
    parse_plan,
    plan_from_document,
    serialize_plan,
)

API_KEY_ENV = "STORYBOOTH_API_KEY"
MAX_EXEMPLARS = 16
DEFAULT_ATTEMPTS = 3

TASK_DESCRIPTION = """\
You plan storyboards for consistent multi-character image generation.
Given a story prompt and a number of frames, reason step by step:
1. Identify every recurring character and give each a short stable id.
2. For each frame, write a detailed scene description (the global prompt).
3. For each character appearing in the frame, write a local prompt that
   describes only that character, and place it with a bounding box
   [x0, y0, x1, y1] in normalized image coordinates (0..1, origin top-left,
   x0 < x1, y0 < y1).
Keep each character's appearance identical across frames; vary pose,
position and scale with the story.
After reasoning, reply with exactly one JSON object with keys
"prompt", "frame_count", "subjects" (id -> canonical description) and
"frames" (list of {"index", "global_prompt", "layouts": [{"subject_id",
"local_prompt", "box"}]}). Frame indices start at 1.
"""

_REQUEST_HEADER = "Plan a storyboard for this request:"


class ChatClient(Protocol):
    def complete(self, messages: Sequence[dict], *, model: str, temperature: float) -> str:
        ...


def load_exemplars() -> tuple[tuple[StoryPrompt, StoryboardPlan], ...]:
    """The five bundled (prompt, plan) exemplars."""
    raw = resources.files("storybooth").joinpath("data/exemplars.json").read_text("utf-8")
    pairs = []
    for item in json.loads(raw):
        plan = plan_from_document(item)
        pairs.append((plan.prompt, plan))
    return tuple(pairs)


@dataclass(frozen=True)
class PlannerConfig:
    exemplars: tuple = field(default_factory=load_exemplars)
    task_description: str = TASK_DESCRIPTION
    endpoint: str = "http://localhost:8000/v1/chat/completions"
    model_name: str = "default"
    temperature: float = 0.0
    max_attempts: int = DEFAULT_ATTEMPTS

    def __post_init__(self):
        object.__setattr__(self, "exemplars", tuple(self.exemplars))
        problems = []
        if not 0 <= len(self.exemplars) <= MAX_EXEMPLARS:
            problems.append(f"exemplars: between 0 and {MAX_EXEMPLARS} allowed, got {len(self.exemplars)}")
        if not self.temperature >= 0:
            problems.append(f"temperature: must be non-negative, got {self.temperature}")
        if self.max_attempts < 1:
            problems.append("max_attempts: must be >= 1")
        if problems:
            raise PlanValidationError(problems)


def request_message(prompt: StoryPrompt) -> str:
    payload = json.dumps({"prompt": prompt.text, "frame_count": prompt.frame_count}, ensure_ascii=False)
    return f"{_REQUEST_HEADER}\n{payload}"


def build_messages(prompt: StoryPrompt, config: PlannerConfig) -> list[dict]:
    messages = [{"role": "system", "content": config.task_description}]
    for ex_prompt, ex_plan in config.exemplars:
        messages.append({"role": "user", "content": request_message(ex_prompt)})
        messages.append({"role": "assistant", "content": serialize_plan(ex_plan)})
    messages.append({"role": "user", "content": request_message(prompt)})
    return messages


def extract_json(text: str) -> str:
    """Pull the JSON object out of a reply that may carry reasoning or fences."""
    fenced = re.findall(r"```(?:json)?\s*(\{.*?\})\s*```", text, flags=re.S)
    if fenced:
        return fenced[-1]
    start, end = text.find("{"), text.rfind("}")
    if start == -1 or end < start:
        raise PlanParseError("no JSON object in model reply", raw_text=text)
    return text[start:end + 1]


def plan_storyboard(prompt: StoryPrompt, config: PlannerConfig, client: ChatClient) -> StoryboardPlan:
    """Ask ``client`` for a plan, re-prompting on unusable replies.

    Returns a validated plan with ``prompt.frame_count`` frames; the full
    exchange is attached as ``plan.transcript``.

    Raises:
        TransportError: every attempt failed at the transport level.
        PlanParseError: the last reply was not decodable JSON.
        PlanValidationError: the last reply decoded but violated invariants.
    """
    messages = build_messages(prompt, config)
    replies: list[str] = []
    last_error: Exception | None = None
    for attempt in range(1, config.max_attempts + 1):
        try:
            reply = client.complete(list(messages), model=config.model_name,
                                    temperature=config.temperature)
        except (TransportError, OSError) as exc:
            last_error = TransportError(f"transport failed: {exc}", attempts=attempt)
            continue
        replies.append(reply)
        try:
            plan = parse_plan(extract_json(reply))
            if plan.prompt.frame_count != prompt.frame_count:
                raise PlanValidationError(
                    [f"frame_count: requested {prompt.frame_count}, reply has {plan.prompt.frame_count}"]
                )
        except PlanParseError as exc:
            last_error = PlanParseError(str(exc), raw_text=reply, attempts=attempt)
        except PlanValidationError as exc:
            last_error = exc
        else:
            transcript = PlannerTranscript(tuple(messages), tuple(replies), attempt)
            return replace(plan, transcript=transcript)
        messages.append({"role": "assistant", "content": reply})
        messages.append({
            "role": "user",
            "content": f"Your previous reply could not be used ({last_error}). "
                       "Reply with only the corrected JSON object.",
        })

    if isinstance(last_error, TransportError):
        raise TransportError(str(last_error), attempts=config.max_attempts) from last_error
    if isinstance(last_error, PlanParseError):
        raise PlanParseError(str(last_error), raw_text=last_error.raw_text,
                             attempts=config.max_attempts) from last_error
    assert last_error is not None
    raise last_error


# --------------------------------------------------------------------------
# clients


PostFn = Callable[[str, dict, dict, float], dict]


def _urllib_post(url: str, payload: dict, headers: dict, timeout: float) -> dict:
    req = urllib.request.Request(url, data=json.dumps(payload).encode("utf-8"),
                                 headers=headers, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))
    except (urllib.error.URLError, TimeoutError, json.JSONDecodeError) as exc:
        raise TransportError(str(exc)) from exc


class HttpChatClient:
    """Generic JSON chat-completion client.

    Sends ``{model, messages, temperature}`` and returns the first choice's
    message content. The bearer token comes from ``STORYBOOTH_API_KEY``
    unless passed explicitly.
    """

    def __init__(self, endpoint: str, api_key: str | None = None, timeout: float = 60.0,
                 post: PostFn | None = None):
        self.endpoint = endpoint
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout = timeout
        self._post = post or _urllib_post

    def complete(self, messages, *, model, temperature):
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {"model": model, "messages": list(messages), "temperature": temperature}
        body = self._post(self.endpoint, payload, headers, self.timeout)
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unexpected response shape: {exc!r}") from exc


class MockChatClient:
    """Answers every request with a seeded :func:`mock_plan`."""

    def __init__(self, seed: int = 0, subject_count: int = 2):
        self.seed = seed
        self.subject_count = subject_count

    def complete(self, messages, *, model, temperature):
        content = messages[-1]["content"]
        request = json.loads(content.split("\n", 1)[1])
        prompt = StoryPrompt(request["prompt"], request["frame_count"])
        return serialize_plan(mock_plan(prompt, self.subject_count, self.seed))


class RecordedChatClient:
    """Replays a fixed sequence of replies; exceptions in the list are raised."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls: list[dict] = []

    def complete(self, messages, *, model, temperature):
        self.calls.append({"messages": list(messages), "model": model, "temperature": temperature})
        if not self.replies:
            raise TransportError("recording exhausted")
        reply = self.replies.pop(0)
        if isinstance(reply, BaseException):
            raise reply
        return reply
