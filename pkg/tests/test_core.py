import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tasaux.core import (
    InvalidSequence,
    LabelSequence,
    ProbabilityMap,
    Segment,
    boundary_targets,
    extract_segments,
    region_partition,
    render_labels,
    segment_iou,
)

A, B, C = 0, 1, 2


def seq(*labels, n=3):
    return LabelSequence(np.array(labels), n)


label_lists = st.lists(st.integers(0, 4), min_size=1, max_size=1000)


def test_extract_segments_examples():
    assert extract_segments(seq(A, A, B, B, B)) == [Segment(A, 0, 2), Segment(B, 2, 5)]
    assert extract_segments(seq(A)) == [Segment(A, 0, 1)]
    assert extract_segments(seq(A, B, A)) == [Segment(A, 0, 1), Segment(B, 1, 2), Segment(A, 2, 3)]


def test_boundary_targets_examples():
    assert boundary_targets(seq(A, A, B, B)).mask.tolist() == [0, 0, 1, 0]
    assert boundary_targets(seq(A, A, A)).mask.tolist() == [0, 0, 0]
    assert boundary_targets(seq(A, B, C)).mask.tolist() == [0, 1, 1]


def test_region_partition_examples():
    assert region_partition(seq(A, A, B, B), 1).boundary_frames().tolist() == [1, 2, 3]
    for w in (0, 1, 5, 100):
        assert not region_partition(seq(A, A, A, A), w).is_boundary_region.any()
    r = region_partition(seq(*([A] * 3 + [B] * 9)), 5)
    # oracle: enumerate |t - 3| <= 5
    assert r.boundary_frames().tolist() == [t for t in range(12) if abs(t - 3) <= 5]
    assert np.flatnonzero(r.non_boundary).tolist() == [9, 10, 11]


def test_region_partition_rejects_negative_window():
    with pytest.raises(ValueError):
        region_partition(seq(A, B), -1)


def test_segment_iou_examples():
    assert segment_iou((0, 10), (0, 10)) == 1.0
    assert segment_iou((0, 10), (10, 20)) == 0.0
    # 6 shared frames over a 10-frame union
    assert segment_iou((0, 10), (0, 6)) == pytest.approx(0.6, abs=1e-15)
    assert segment_iou(Segment(A, 0, 10), Segment(B, 0, 6)) == pytest.approx(0.6)


@pytest.mark.parametrize("bad", [[], [-1], [3], [0, 5]])
def test_label_sequence_validation(bad):
    with pytest.raises(InvalidSequence):
        LabelSequence(np.array(bad, dtype=int), 3)


def test_segment_validation():
    with pytest.raises(ValueError):
        Segment(0, 3, 3)
    with pytest.raises(ValueError):
        Segment(0, -1, 2)


def test_probability_map_shape_check():
    with pytest.raises(ValueError):
        ProbabilityMap(np.full((2, 4), 0.5), np.full(3, 0.5))


@settings(max_examples=200, deadline=None)
@given(label_lists)
def test_round_trip(labels):
    s = LabelSequence(np.array(labels), 5)
    segs = extract_segments(s)
    assert render_labels(segs, 5) == s
    assert segs[0].start == 0 and segs[-1].end == len(labels)
    for left, right in zip(segs, segs[1:]):
        assert left.end == right.start
        assert left.class_id != right.class_id


@settings(max_examples=200, deadline=None)
@given(label_lists)
def test_boundaries_sit_on_segment_starts(labels):
    s = LabelSequence(np.array(labels), 5)
    segs = extract_segments(s)
    b = boundary_targets(s)
    assert b.mask[0] == 0
    assert int(b.mask.sum()) == len(segs) - 1
    assert b.transitions.tolist() == [g.start for g in segs[1:]]


@settings(max_examples=200, deadline=None)
@given(label_lists, st.integers(0, 20), st.integers(0, 20))
def test_region_monotone_in_window(labels, w1, w2):
    s = LabelSequence(np.array(labels), 5)
    lo, hi = sorted((w1, w2))
    small = region_partition(s, lo).is_boundary_region
    big = region_partition(s, hi).is_boundary_region
    assert not np.any(small & ~big)
    zero = region_partition(s, 0).is_boundary_region
    assert np.array_equal(zero, boundary_targets(s).mask.astype(bool))


@given(st.integers(0, 50), st.integers(1, 50), st.integers(0, 50), st.integers(1, 50))
def test_iou_symmetric_and_bounded(a0, la, b0, lb):
    a, b = (a0, a0 + la), (b0, b0 + lb)
    iou = segment_iou(a, b)
    assert iou == segment_iou(b, a)
    assert 0.0 <= iou <= 1.0
    # counting oracle
    fa, fb = set(range(*a)), set(range(*b))
    assert iou == pytest.approx(len(fa & fb) / len(fa | fb))
