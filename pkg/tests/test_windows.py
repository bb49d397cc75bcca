import math

import pytest

from tcr3.errors import InvalidInputError
from tcr3.inference.windows import plan_windows


def test_plan_invariants_hold_exhaustively():
    for length in range(2, 513):
        for capacity in range(1, 33):
            plan = plan_windows(length, capacity)
            assert plan.stride == math.ceil((length - 1) / capacity)
            assert plan.num_passes == plan.stride
            flat = [i for group in plan.groups for i in group]
            assert sorted(flat) == list(range(1, length)), (length, capacity)
            assert all(0 < len(group) <= capacity for group in plan.groups), (length, capacity)
            assert all(group == sorted(group) for group in plan.groups)


def test_one_pass_when_video_fits():
    plan = plan_windows(13, 12)
    assert plan.groups == [list(range(1, 13))]
    assert plan.pass_frames(0) == list(range(13))
    assert plan.rope_indices(0) == list(range(13))


def test_two_interleaved_passes():
    plan = plan_windows(25, 12)
    assert plan.groups == [list(range(1, 24, 2)), list(range(2, 25, 2))]
    assert plan.pass_frames(1)[:3] == [0, 2, 4]


def test_short_video_needs_no_padding():
    plan = plan_windows(12, 12)
    assert plan.groups == [list(range(1, 12))]
    assert plan.padding == [0]
    assert plan.rope_indices(0) == list(range(12))


def test_short_last_pass_and_padding():
    plan = plan_windows(8, 3)
    assert plan.groups == [[1, 4, 7], [2, 5], [3, 6]]
    assert plan.pass_frames(1) == [0, 2, 5]

    padded = plan_windows(8, 3, pad=True)
    assert padded.padding == [0, 1, 1]
    assert padded.pass_frames(1) == [0, 2, 5, 5]
    assert padded.rope_indices(2) == [0, 1, 2, 3]


def test_plan_serializes():
    data = plan_windows(5, 2).to_dict()
    assert data["stride"] == 2 and data["groups"] == [[1, 3], [2, 4]]


@pytest.mark.parametrize("length, capacity", [(1, 4), (0, 4), (5, 0)])
def test_invalid_plans_are_rejected(length, capacity):
    with pytest.raises(InvalidInputError):
        plan_windows(length, capacity)
