import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import oracle_ap
from iclip.errors import UsageError
from iclip.evaluation import DetectionRecord, evaluate, frame_ap, load_detections, write_detections
from iclip.features import GroundTruthRecord


def _det(box, score, frame=0, label="a"):
    return DetectionRecord("v", frame, tuple(box), label, score)


def _gt(box, frame=0):
    return (("v", frame), tuple(box))


@st.composite
def instances(draw):
    coord = st.integers(0, 6)

    def box():
        x, y = draw(coord), draw(coord)
        return (x, y, x + draw(st.integers(1, 4)), y + draw(st.integers(1, 4)))

    gts = [_gt(box(), draw(st.integers(0, 1))) for _ in range(draw(st.integers(0, 3)))]
    dets = [_det(box(), draw(st.sampled_from([0.1, 0.5, 0.5, 0.9])), draw(st.integers(0, 1)))
            for _ in range(draw(st.integers(0, 4)))]
    return dets, gts


@settings(max_examples=200, deadline=None, derandomize=True)
@given(instances())
def test_frame_ap_matches_oracle(inst):
    dets, gts = inst
    expected = oracle_ap(dets, gts)
    got = frame_ap(dets, gts)
    if expected is None:
        assert math.isnan(got)
    else:
        assert abs(got - float(expected)) < 1e-12


# -- hand cases ----------------------------------------------------------------------------------

def test_single_match():
    assert frame_ap([_det((0, 0, 2, 2), 0.9)], [_gt((0, 0, 2, 2))]) == 1.0


def test_false_positive_ranked_first():
    dets = [_det((10, 10, 12, 12), 0.9), _det((0, 0, 2, 2), 0.5)]
    assert frame_ap(dets, [_gt((0, 0, 2, 2))]) == 0.5


def test_one_detection_consumes_one_gt():
    gts = [_gt((0, 0, 10, 10)), _gt((0, 0, 10, 11))]
    assert frame_ap([_det((0, 0, 10, 10), 0.9)], gts) == 0.5


def test_no_detections_and_no_gt():
    assert frame_ap([], [_gt((0, 0, 1, 1))]) == 0.0
    assert math.isnan(frame_ap([_det((0, 0, 1, 1), 0.5)], []))


def test_other_frame_never_matches():
    assert frame_ap([_det((0, 0, 2, 2), 0.9, frame=1)], [_gt((0, 0, 2, 2), frame=0)]) == 0.0


def test_threshold_validated():
    with pytest.raises(UsageError):
        frame_ap([], [_gt((0, 0, 1, 1))], 1.0)


@settings(max_examples=100, deadline=None)
@given(instances(), st.sampled_from([np.sqrt, np.exp, lambda s: 3 * s + 1]))
def test_monotone_score_transform_invariance(inst, fn):
    dets, gts = inst
    moved = [DetectionRecord(d.video_id, d.frame_idx, d.box, d.label_name, float(fn(d.score))) for d in dets]
    a, b = frame_ap(dets, gts), frame_ap(moved, gts)
    assert (math.isnan(a) and math.isnan(b)) or a == b


# -- evaluate ------------------------------------------------------------------------------------

def _records():
    return [GroundTruthRecord("v", 0, (((0, 0, 2, 2), "a"), ((5, 5, 8, 8), "b"))),
            GroundTruthRecord("v", 1, (((0, 0, 2, 2), "a"),))]


def test_perfect_detections_score_one():
    dets = [DetectionRecord(r.video_id, r.frame_idx, box, name, 1.0) for r in _records() for box, name in r.boxes]
    report = evaluate(dets, _records(), ["a", "b"])
    assert report.mean_ap == 1.0
    assert report.num_gt == {"a": 2, "b": 1}


def test_no_detections_score_zero():
    report = evaluate([], _records(), ["a", "b"])
    assert report.per_class == {"a": 0.0, "b": 0.0} and report.mean_ap == 0.0


def test_class_without_gt_is_excluded_and_flagged():
    dets = [_det((0, 0, 2, 2), 1.0, 0, "a"), _det((0, 0, 2, 2), 1.0, 1, "a")]
    report = evaluate(dets, _records(), ["a", "c"])
    assert report.excluded == ["c"]
    assert report.mean_ap == 1.0
    assert any("excluded" in n for n in report.notes)
    assert "n/a" in report.table()


def test_unknown_label_is_usage_error():
    with pytest.raises(UsageError):
        evaluate([_det((0, 0, 1, 1), 0.5, 0, "zzz")], _records(), ["a"])


def test_detection_file_round_trip(tmp_path):
    dets = [_det((0.5, 1.25, 2, 3), 0.123456789, 3, "a"), _det((1, 1, 2, 2), 1 / 3, 4, "b")]
    write_detections(tmp_path / "d.jsonl", dets, "dig")
    assert load_detections(tmp_path / "d.jsonl") == dets
