"""Storyboard plans: per-frame global prompts plus per-subject box layouts.

A plan is the structured output of the layout planner. It is consumed by the
mask builders (boxes are rasterized to token masks) and by the harness
(local prompts seed each subject's conditioning). Plans are immutable and
validated on construction; the wire format is a small JSON document::

    {
      "prompt": "a dog and a duck on a beach",
      "frame_count": 2,
      "subjects": {"dog": "a dog", "duck": "a duck"},
      "frames": [
        {"index": 1, "global_prompt": "...",
         "layouts": [{"subject_id": "dog", "local_prompt": "a dog",
                      "box": [0.0, 0.0, 0.5, 1.0]}, ...]},
        ...
      ]
    }
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Any, Mapping

from .errors import CapacityError, PlanParseError, PlanValidationError

#: subject identities are packed into one 64-bit word per token by the kernels
MAX_SUBJECTS = 64

_MOCK_NAMES = (
    "dog", "duck", "cat", "rabbit", "bear", "lion", "hedgehog", "mouse",
    "fox", "owl", "panda", "tiger", "frog", "otter", "dragon", "robot",
)
_MOCK_SETTINGS = (
    "on a sunny beach", "in a snowy forest", "at a busy market",
    "under a starry sky", "beside a mountain lake", "in a cozy kitchen",
    "on a city rooftop", "in a flower field",
)


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


@dataclass(frozen=True)
class StoryPrompt:
    text: str
    frame_count: int

    def __post_init__(self):
        problems = []
        if not isinstance(self.text, str) or not self.text.strip():
            problems.append("prompt: text must be non-empty")
        if not _is_int(self.frame_count) or self.frame_count < 1:
            problems.append(f"frame_count: must be a positive integer, got {self.frame_count!r}")
        if problems:
            raise PlanValidationError(problems)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in normalized image coordinates (origin top-left)."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        problems = []
        for name in ("x0", "y0", "x1", "y1"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                problems.append(f"{name} must be a number, got {value!r}")
                continue
            object.__setattr__(self, name, float(value))
        if problems:
            raise PlanValidationError(problems)
        if not 0.0 <= self.x0 < self.x1 <= 1.0:
            problems.append(f"requires 0 <= x0 < x1 <= 1 (x0={self.x0}, x1={self.x1})")
        if not 0.0 <= self.y0 < self.y1 <= 1.0:
            problems.append(f"requires 0 <= y0 < y1 <= 1 (y0={self.y0}, y1={self.y1})")
        if problems:
            raise PlanValidationError(problems)

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]

    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def intersection_area(self, other: "BoundingBox") -> float:
        w = min(self.x1, other.x1) - max(self.x0, other.x0)
        h = min(self.y1, other.y1) - max(self.y0, other.y0)
        return max(w, 0.0) * max(h, 0.0)


@dataclass(frozen=True)
class SubjectLayout:
    subject_id: str
    local_prompt: str
    box: BoundingBox

    def __post_init__(self):
        problems = []
        if not isinstance(self.subject_id, str) or not self.subject_id:
            problems.append("subject_id must be a non-empty string")
        if not isinstance(self.local_prompt, str) or not self.local_prompt.strip():
            problems.append("local_prompt must be non-empty")
        if not isinstance(self.box, BoundingBox):
            problems.append("box must be a BoundingBox")
        if problems:
            raise PlanValidationError(problems)


@dataclass(frozen=True)
class FramePlan:
    index: int
    global_prompt: str
    layouts: tuple[SubjectLayout, ...]

    def __post_init__(self):
        object.__setattr__(self, "layouts", tuple(self.layouts))
        problems = []
        if not _is_int(self.index) or self.index < 1:
            problems.append(f"index must be a positive integer, got {self.index!r}")
        if not isinstance(self.global_prompt, str) or not self.global_prompt.strip():
            problems.append("global_prompt must be non-empty")
        if not self.layouts:
            problems.append("layouts must be non-empty")
        ids = [layout.subject_id for layout in self.layouts]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            problems.append(f"duplicate subject_id within frame: {dupes}")
        if problems:
            raise PlanValidationError(problems)

    def subject_ids(self) -> list[str]:
        return [layout.subject_id for layout in self.layouts]


@dataclass(frozen=True)
class PlannerTranscript:
    """Audit record of a planner call: every message sent and every reply."""

    messages: tuple[Mapping[str, str], ...]
    replies: tuple[str, ...]
    attempts: int


@dataclass(frozen=True)
class StoryboardPlan:
    prompt: StoryPrompt
    subjects: Mapping[str, str]
    frames: tuple[FramePlan, ...]
    transcript: PlannerTranscript | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "subjects", dict(self.subjects))
        problems = plan_violations(self)
        if problems:
            raise PlanValidationError(problems)

    __hash__ = None

    @property
    def subject_ids(self) -> list[str]:
        return sorted(self.subjects)

    @property
    def attempt_count(self) -> int:
        return self.transcript.attempts if self.transcript else 0


def plan_violations(plan: StoryboardPlan) -> list[str]:
    """Plan-level invariant checks (the per-type checks run in constructors)."""
    problems = []
    if len(plan.frames) != plan.prompt.frame_count:
        problems.append(
            f"frames: expected {plan.prompt.frame_count} frames (frame_count), got {len(plan.frames)}"
        )
    if len(plan.subjects) > MAX_SUBJECTS:
        problems.append(f"subjects: at most {MAX_SUBJECTS} subjects supported")
    for sid, desc in plan.subjects.items():
        if not isinstance(sid, str) or not sid:
            problems.append("subjects: ids must be non-empty strings")
        if not isinstance(desc, str) or not desc.strip():
            problems.append(f"subjects.{sid}: description must be non-empty")
    seen = set()
    for pos, frame in enumerate(plan.frames):
        if frame.index != pos + 1:
            problems.append(f"frames[{pos}].index: expected {pos + 1}, got {frame.index}")
        for j, layout in enumerate(frame.layouts):
            if layout.subject_id not in plan.subjects:
                problems.append(
                    f"frames[{pos}].layouts[{j}].subject_id: {layout.subject_id!r} not in subjects registry"
                )
            seen.add(layout.subject_id)
    unused = sorted(set(plan.subjects) - seen)
    if unused:
        problems.append(f"subjects: never placed in any frame: {unused}")
    return problems


# --------------------------------------------------------------------------
# wire format


def plan_to_document(plan: StoryboardPlan) -> dict[str, Any]:
    return {
        "prompt": plan.prompt.text,
        "frame_count": plan.prompt.frame_count,
        "subjects": {sid: plan.subjects[sid] for sid in sorted(plan.subjects)},
        "frames": [
            {
                "index": frame.index,
                "global_prompt": frame.global_prompt,
                "layouts": [
                    {
                        "subject_id": layout.subject_id,
                        "local_prompt": layout.local_prompt,
                        "box": layout.box.as_list(),
                    }
                    for layout in frame.layouts
                ],
            }
            for frame in plan.frames
        ],
    }


def serialize_plan(plan: StoryboardPlan) -> str:
    """Canonical JSON text; equal plans always serialize identically."""
    return json.dumps(plan_to_document(plan), indent=2, ensure_ascii=False) + "\n"


def _require(doc, key, kind, path, problems):
    if not isinstance(doc, dict) or key not in doc:
        problems.append(f"{path}{key}: missing")
        return None
    value = doc[key]
    if kind is int:
        ok = _is_int(value)
    elif kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        problems.append(f"{path}{key}: expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
        return None
    return value


def _build(path, problems, ctor, *args):
    try:
        return ctor(*args)
    except PlanValidationError as exc:
        problems.extend(f"{path}: {v}" for v in exc.violations)
        return None


def plan_from_document(doc: Any) -> StoryboardPlan:
    """Build a plan from decoded JSON, collecting every violation with its path."""
    problems: list[str] = []
    if not isinstance(doc, dict):
        raise PlanValidationError([f"document: expected an object, got {type(doc).__name__}"])
    text = _require(doc, "prompt", str, "", problems)
    count = _require(doc, "frame_count", int, "", problems)
    subjects = _require(doc, "subjects", dict, "", problems)
    frames_doc = _require(doc, "frames", list, "", problems)

    prompt = None
    if text is not None and count is not None:
        prompt = _build("prompt", problems, StoryPrompt, text, count)

    frames = []
    for i, fdoc in enumerate(frames_doc or []):
        fpath = f"frames[{i}]"
        if not isinstance(fdoc, dict):
            problems.append(f"{fpath}: expected an object")
            continue
        index = _require(fdoc, "index", int, f"{fpath}.", problems)
        gprompt = _require(fdoc, "global_prompt", str, f"{fpath}.", problems)
        layouts_doc = _require(fdoc, "layouts", list, f"{fpath}.", problems)
        layouts = []
        for j, ldoc in enumerate(layouts_doc or []):
            lpath = f"{fpath}.layouts[{j}]"
            sid = _require(ldoc, "subject_id", str, f"{lpath}.", problems)
            lprompt = _require(ldoc, "local_prompt", str, f"{lpath}.", problems)
            raw_box = _require(ldoc, "box", list, f"{lpath}.", problems)
            box = None
            if raw_box is not None:
                if len(raw_box) != 4:
                    problems.append(f"{lpath}.box: expected [x0, y0, x1, y1], got {len(raw_box)} values")
                else:
                    box = _build(f"{lpath}.box", problems, BoundingBox, *raw_box)
            if sid is not None and lprompt is not None and box is not None:
                layout = _build(lpath, problems, SubjectLayout, sid, lprompt, box)
                if layout is not None:
                    layouts.append(layout)
        if index is not None and gprompt is not None and layouts_doc is not None:
            if len(layouts) == len(layouts_doc):
                frame = _build(fpath, problems, FramePlan, index, gprompt, tuple(layouts))
                if frame is not None:
                    frames.append(frame)
    if problems:
        raise PlanValidationError(problems)
    return StoryboardPlan(prompt=prompt, subjects=subjects, frames=tuple(frames))


def parse_plan(text: str) -> StoryboardPlan:
    """Decode plan JSON text.

    Raises:
        PlanParseError: the text is not valid JSON.
        PlanValidationError: the document violates the schema or invariants.
    """
    try:
        doc = json.loads(text)
    except (TypeError, json.JSONDecodeError) as exc:
        raise PlanParseError(f"invalid JSON: {exc}", raw_text=text) from exc
    return plan_from_document(doc)


def load_plan(path) -> StoryboardPlan:
    with open(path, encoding="utf-8") as fh:
        return parse_plan(fh.read())


# --------------------------------------------------------------------------
# deterministic stand-in for the planner


def mock_plan(prompt: StoryPrompt, subject_count: int, seed: int) -> StoryboardPlan:
    """Deterministic plan: subjects tiled left to right, full height, every frame.

    Subject names and per-frame settings are drawn from ``seed``; the box
    geometry depends only on ``subject_count``.
    """
    if not _is_int(subject_count) or subject_count < 1:
        raise PlanValidationError([f"subject_count: must be >= 1, got {subject_count!r}"])
    if subject_count > MAX_SUBJECTS:
        raise CapacityError(f"cannot tile {subject_count} subjects (max {MAX_SUBJECTS})")
    rng = random.Random(seed)
    if subject_count <= len(_MOCK_NAMES):
        names = rng.sample(_MOCK_NAMES, subject_count)
    else:
        pool = list(_MOCK_NAMES)
        rng.shuffle(pool)
        names = [f"{pool[i % len(pool)]}{i // len(pool) + 1}" for i in range(subject_count)]
    subjects = {name: f"a {name}" for name in names}

    boxes = []
    for k in range(subject_count):
        try:
            boxes.append(BoundingBox(k / subject_count, 0.0, (k + 1) / subject_count, 1.0))
        except PlanValidationError as exc:
            raise CapacityError(f"box {k} of {subject_count} degenerates: {exc}") from exc

    cast = " and ".join(f"the {n}" for n in names)
    frames = []
    for i in range(prompt.frame_count):
        setting = rng.choice(_MOCK_SETTINGS)
        layouts = tuple(
            SubjectLayout(name, subjects[name], box) for name, box in zip(names, boxes)
        )
        frames.append(FramePlan(i + 1, f"{prompt.text.strip()}: {cast} {setting}", layouts))
    return StoryboardPlan(prompt=prompt, subjects=subjects, frames=tuple(frames))
