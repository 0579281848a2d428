import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hiertrack.evaluation import (
    ALPHAS,
    GapResult,
    box_iou,
    evaluate,
    format_gap_table,
    gap_accuracy,
    match_detections_to_gt,
    match_frame,
)
from hiertrack.model import Detection, TrackPoint, TrackSet

from helpers import random_boxes_instance, trackset
from oracles import hota_oracle, iou_xywh

BOX = (0.0, 0.0, 10.0, 10.0)


def test_identical_sets_score_100():
    gt = trackset({1: [(0, BOX), (1, BOX)], 2: [(0, (50, 50, 10, 10))]})
    r = evaluate(gt, gt)
    assert (r.hota, r.deta, r.assa) == (100.0, 100.0, 100.0)


def test_split_track_example():
    gt = trackset({1: [(0, BOX), (1, BOX)]})
    pred = trackset({1: [(0, BOX)], 2: [(1, BOX)]})
    r = evaluate(pred, gt)
    assert r.deta == pytest.approx(100.0)
    assert r.assa == pytest.approx(50.0)
    assert r.hota == pytest.approx(100 * np.sqrt(0.5))


def test_empty_prediction_scores_zero():
    gt = trackset({1: [(0, BOX)]})
    r = evaluate(TrackSet({}), gt)
    assert r.hota == 0.0 and int(r.fn.sum()) == len(ALPHAS)


def test_both_empty_is_perfect():
    assert evaluate(TrackSet({}), TrackSet({})).hota == 100.0


def test_duplicate_frame_in_track_rejected():
    bad = TrackSet({0: (TrackPoint(0, BOX, 1.0), TrackPoint(0, BOX, 1.0))})
    with pytest.raises(ValueError, match="more than one box"):
        evaluate(bad, bad)


def test_box_iou_matches_scalar_formula():
    rng = np.random.default_rng(0)
    a = np.column_stack([rng.uniform(0, 10, (6, 2)), rng.uniform(0.5, 8, (6, 2))])
    b = np.column_stack([rng.uniform(0, 10, (5, 2)), rng.uniform(0.5, 8, (5, 2))])
    expected = [[iou_xywh(x, y) for y in b] for x in a]
    np.testing.assert_allclose(box_iou(a, b), expected, atol=1e-15)


def test_match_frame_maximises_count_before_alignment():
    iou = np.array([[0.9, 0.6], [0.6, 0.0]])
    align = np.array([[1.0, 0.0], [0.0, 0.0]])
    r, c = match_frame(iou, align, 0.5)
    assert sorted(zip(r.tolist(), c.tolist())) == [(0, 1), (1, 0)]


def test_match_frame_threshold_is_inclusive():
    r, _ = match_frame(np.array([[0.5]]), np.zeros((1, 1)), 0.5)
    assert len(r) == 1


@given(st.integers(0, 2**32 - 1))
def test_against_exhaustive_oracle(seed):
    pred, gt = random_boxes_instance(np.random.default_rng(seed))
    alphas = ALPHAS[::3]
    r = evaluate(pred, gt, alphas)
    ref = hota_oracle(pred, gt, alphas)
    for k, (h, d, a) in enumerate(ref):
        assert r.hota_alpha[k] == pytest.approx(h, abs=1e-9)
        assert r.deta_alpha[k] == pytest.approx(d, abs=1e-9)
        assert r.assa_alpha[k] == pytest.approx(a, abs=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_relabelling_does_not_change_score(seed):
    rng = np.random.default_rng(seed)
    pred, gt = random_boxes_instance(rng)
    perm = {tid: 100 + int(v) for tid, v in zip(pred.tracks, rng.permutation(len(pred.tracks)))}
    renamed = TrackSet({perm[t]: pts for t, pts in pred.tracks.items()}, pred.info)
    a, b = evaluate(pred, gt), evaluate(renamed, gt)
    np.testing.assert_allclose(a.hota_alpha, b.hota_alpha, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_score_components(seed):
    pred, gt = random_boxes_instance(np.random.default_rng(seed))
    r = evaluate(pred, gt)
    np.testing.assert_allclose(r.hota_alpha, np.sqrt(r.deta_alpha * r.assa_alpha))
    assert np.all(np.diff(r.tp) <= 0)
    assert np.all(np.diff(r.deta_alpha) <= 1e-12)
    assert 0.0 <= r.hota <= 100.0
    assert np.all(r.tp + r.fn == gt.n_points) and np.all(r.tp + r.fp == pred.n_points)


def test_report_formats():
    gt = trackset({1: [(0, BOX)]})
    r = evaluate(gt, gt)
    text = r.to_text()
    assert text.splitlines()[1].split() == ["HOTA", "100.00"]
    assert len(text.splitlines()) == 6 + len(ALPHAS)
    kv = dict(line.split("=") for line in r.to_kv().splitlines())
    assert float(kv["HOTA"]) == 100.0 and kv["TP"] == str(len(ALPHAS))
    assert "HOTA@0.50" in kv


# ---------------------------------------------------------------------------
# Detection assignment and frame gaps


def test_match_detections_to_gt():
    gt = trackset({7: [(0, BOX)], 9: [(0, (40, 0, 10, 10))]})
    dets = [Detection(0, (41, 0, 10, 10), 1.0, 0), Detection(0, (1, 1, 10, 10), 1.0, 1),
            Detection(0, (200, 200, 5, 5), 1.0, 2), Detection(3, BOX, 1.0, 3)]
    assert match_detections_to_gt(dets, gt) == {0: 9, 1: 7, 2: -1, 3: -1}


def test_gap_zero_is_perfect_and_swap_is_zero():
    frames = np.array([0, 0, 1, 1])
    ids = np.array([0, 1, 0, 1])
    feats = np.array([[1.0, 0], [0, 1.0], [1.0, 0], [0, 1.0]])
    (zero, one) = gap_accuracy(frames, ids, feats, [0, 1])
    assert zero.accuracy == 100.0 and one.accuracy == 100.0
    swapped = feats[[0, 1, 3, 2]]
    (_, one) = gap_accuracy(frames, ids, swapped, [0, 1])
    assert one.accuracy == 0.0 and one.n_queries == 2


def test_gap_without_partners_is_nan():
    (r,) = gap_accuracy(np.array([0, 1]), np.array([0, 0]), np.eye(2), [5])
    assert np.isnan(r.accuracy) and r.n_queries == 0 and r.n_skipped_frames == 2


def test_unlabelled_rows_compete_but_are_not_queried():
    frames = np.array([0, 1, 1])
    ids = np.array([0, 0, -1])
    feats = np.array([[1.0, 0], [0.2, 1.0], [1.0, 0.05]])
    (r,) = gap_accuracy(frames, ids, feats, [1])
    assert r.n_queries == 1 and r.accuracy == 0.0


def test_gap_table():
    text = format_gap_table([GapResult(1, 99.5, 10, 0), GapResult(50, 80.25, 8, 1)])
    lines = text.splitlines()
    assert lines[0].split() == ["step", "accuracy", "queries"]
    assert lines[2].split() == ["50", "80.25", "8"]
