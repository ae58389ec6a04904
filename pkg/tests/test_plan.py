import json

import pytest

from storybooth.errors import CapacityError, PlanParseError, PlanValidationError
from storybooth.plan import (
    MAX_SUBJECTS,
    BoundingBox,
    FramePlan,
    StoryboardPlan,
    StoryPrompt,
    SubjectLayout,
    mock_plan,
    parse_plan,
    plan_to_document,
    plan_violations,
    serialize_plan,
)


def test_mock_plan_two_subjects_two_frames():
    plan = mock_plan(StoryPrompt("a fox and an owl", 2), 2, seed=7)
    assert len(plan.frames) == 2
    boxes = [layout.box.as_list() for layout in plan.frames[0].layouts]
    assert boxes == [[0.0, 0.0, 0.5, 1.0], [0.5, 0.0, 1.0, 1.0]]
    assert [f.index for f in plan.frames] == [1, 2]


@pytest.mark.parametrize("frames,subjects,seed", [(1, 1, 0), (4, 2, 1), (6, 3, 9), (3, 12, 2)])
def test_mock_plan_satisfies_invariants_and_round_trips(frames, subjects, seed):
    plan = mock_plan(StoryPrompt("story", frames), subjects, seed)
    assert plan_violations(plan) == []
    again = parse_plan(serialize_plan(plan))
    assert again == plan
    assert serialize_plan(again) == serialize_plan(plan)


def test_mock_plan_is_deterministic():
    p = StoryPrompt("story", 3)
    assert serialize_plan(mock_plan(p, 2, 5)) == serialize_plan(mock_plan(p, 2, 5))


def test_mock_plan_too_many_subjects():
    with pytest.raises(CapacityError):
        mock_plan(StoryPrompt("crowd", 1), MAX_SUBJECTS + 1, 0)


@pytest.mark.parametrize("box", [(0.5, 0, 0.5, 1), (0, 0, 1.2, 1), (-0.1, 0, 0.5, 1), (0, 0.8, 1, 0.2)])
def test_bad_boxes_rejected(box):
    with pytest.raises(PlanValidationError):
        BoundingBox(*box)


def test_duplicate_subject_in_frame_rejected():
    box = BoundingBox(0, 0, 1, 1)
    with pytest.raises(PlanValidationError):
        FramePlan(1, "g", (SubjectLayout("a", "x", box), SubjectLayout("a", "y", box)))


def _doc():
    return plan_to_document(mock_plan(StoryPrompt("story", 3), 2, 1))


def test_unknown_subject_and_bad_indices_rejected():
    doc = _doc()
    doc["frames"][1]["layouts"][0]["subject_id"] = "ghost"
    with pytest.raises(PlanValidationError):
        parse_plan(json.dumps(doc))
    doc = _doc()
    doc["frames"][2]["index"] = 7
    with pytest.raises(PlanValidationError):
        parse_plan(json.dumps(doc))


def test_frame_count_mismatch_rejected():
    doc = _doc()
    doc["frames"].pop()
    with pytest.raises(PlanValidationError):
        parse_plan(json.dumps(doc))


def test_malformed_json_is_parse_error():
    with pytest.raises(PlanParseError):
        parse_plan("{not json")


def test_storyboard_plan_validates_on_construction():
    plan = mock_plan(StoryPrompt("story", 2), 1, 0)
    with pytest.raises(PlanValidationError):
        StoryboardPlan(plan.prompt, plan.subjects, plan.frames[:1])
