from __future__ import annotations

import numpy as np
import pytest

from vsynopsis.geometry import Box
from vsynopsis.metrics import (
    AnnotationSet, EvalCounts, average_precision, evaluate, frame_reduction_rate, match_frame,
    pr_curve, precision_recall, read_annotations, read_roi, throughput_fps, tracks_to_annotations,
    write_annotations, write_pr_curve,
)


def _counts(tp, fp, npos):
    return EvalCounts(np.asarray(tp), np.asarray(fp), np.asarray(npos))


class TestMatchFrame:
    def test_identical(self):
        boxes = [(1, Box(0, 0, 10, 10)), (2, Box(30, 30, 5, 5))]
        assert match_frame(boxes, boxes) == (2, 0)

    def test_duplicate_detection(self):
        gt = [(1, Box(0, 0, 10, 10))]
        assert match_frame(gt, [(1, Box(0, 0, 10, 10)), (2, Box(1, 1, 10, 10))]) == (1, 1)

    def test_low_iou(self):
        assert match_frame([(1, Box(5, 0, 10, 10))], [(1, Box(0, 0, 10, 10))]) == (0, 1)

    def test_threshold_inclusive(self):
        # IoU 50/100 overlap of (0,0,10,10) and (0,0,10,5) = 0.5
        assert match_frame([(1, Box(0, 0, 10, 10))], [(1, Box(0, 0, 10, 5))]) == (1, 0)

    def test_best_iou_wins(self):
        gt = [(1, Box(0, 0, 10, 10)), (2, Box(4, 0, 10, 10))]
        pred = [(9, Box(3, 0, 10, 10))]
        assert match_frame(gt, pred) == (1, 0)

    def test_roi_excludes_outside(self):
        roi = [(0, 0), (20, 0), (20, 20), (0, 20)]
        gt = [(1, Box(0, 0, 10, 10)), (2, Box(50, 50, 10, 10))]
        pred = [(1, Box(0, 0, 10, 10)), (2, Box(52, 50, 10, 10)), (3, Box(80, 80, 4, 4))]
        assert match_frame(gt, pred, roi=roi) == (1, 0)

    @pytest.mark.parametrize("thr", [0.0, 1.0, -0.5])
    def test_bad_threshold(self, thr):
        with pytest.raises(ValueError):
            match_frame([], [], thr)


class TestPrecisionRecall:
    def test_perfect(self):
        assert precision_recall(_counts([1, 2, 3], [0, 0, 0], [1, 2, 3])) == (1.0, 1.0)

    def test_ninety(self):
        c = _counts([45, 45], [5, 5], [50, 50])
        p, r = precision_recall(c)
        assert p == pytest.approx(0.9) and r == pytest.approx(0.9)

    def test_first_frame_uses_full_denominator(self):
        c = _counts([2, 48], [0, 0], [50, 50])
        assert precision_recall(c, 1) == (1.0, 0.02)

    def test_no_predictions(self):
        assert precision_recall(_counts([0, 0], [0, 0], [3, 3])) == (1.0, 0.0)

    def test_empty_gt_and_pred(self):
        assert precision_recall(_counts([0], [0], [0])) == (1.0, 1.0)

    def test_index_range(self):
        with pytest.raises(ValueError):
            precision_recall(_counts([1], [0], [1]), 0)
        with pytest.raises(ValueError):
            precision_recall(_counts([1], [0], [1]), 2)

    def test_monotone_without_false_positives(self):
        rng = np.random.default_rng(0)
        npos = rng.integers(0, 5, 100)
        tp = np.minimum(npos, rng.integers(0, 5, 100))
        p, r = _counts(tp, np.zeros(100, int), npos).cumulative()
        assert (np.diff(r) >= 0).all() and (p == 1).all()
        fp = rng.integers(0, 3, 100)
        p, r = _counts(tp, fp, npos).cumulative()
        assert (np.diff(r) >= 0).all()
        assert ((0 <= p) & (p <= 1)).all()


class TestScalars:
    def test_average_precision(self):
        assert average_precision(1.0, 1.0) == 1.0
        assert average_precision(0.9, 0.9) == pytest.approx(0.81)
        assert average_precision(0.3, 0.8) <= 0.3
        with pytest.raises(ValueError):
            average_precision(1.2, 0.5)

    def test_frr(self):
        assert round(frame_reduction_rate(12906, 70195), 3) == 0.184
        assert frame_reduction_rate(70195, 70195) == 1.0
        assert frame_reduction_rate(0, 70195) == 0.0
        with pytest.raises(ValueError):
            frame_reduction_rate(5, 0)

    def test_throughput(self):
        assert round(throughput_fps(70195, 1231.5), 1) == 57.0
        assert throughput_fps(100, 100) == 1.0
        assert throughput_fps(0, 10) == 0.0
        with pytest.raises(ValueError):
            throughput_fps(10, 0)


def _ann(rows, n=None):
    a = AnnotationSet(n_frames=n)
    for k, oid, *box in rows:
        a.add(k, oid, Box(*box))
    return a


class TestEvaluate:
    def test_self_evaluation(self):
        gt = _ann([(k, 1, 2 * k, 5, 10, 10) for k in range(20)], n=25)
        counts = evaluate(gt, gt)
        assert precision_recall(counts) == (1.0, 1.0)
        assert counts.n_frames == 25

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            evaluate(_ann([], n=10), _ann([], n=11))

    def test_out_of_range_frame(self):
        with pytest.raises(ValueError):
            evaluate(_ann([(12, 1, 0, 0, 2, 2)], n=10), _ann([], n=10))

    def test_length_inferred(self):
        counts = evaluate(_ann([(4, 1, 0, 0, 2, 2)]), _ann([(6, 1, 0, 0, 2, 2)]))
        assert counts.n_frames == 7

    def test_warmup_curve(self):
        gt = _ann([(k, 1, 10, 10, 20, 20) for k in range(200)], n=200)
        pred = _ann([(k, 1, 10, 10, 20, 20) for k in range(50, 200)], n=200)
        curve = pr_curve(evaluate(gt, pred))
        assert len(curve) == 200
        assert all(p == 1.0 for _, p in curve)
        assert curve[49][0] == 0.0
        assert curve[50][0] == pytest.approx(1 / 200)
        assert curve[-1][0] == pytest.approx(0.75)
        recalls = [r for r, _ in curve]
        assert recalls == sorted(recalls)

    def test_perfect_curve(self):
        gt = _ann([(k, 1, 0, 0, 4, 4) for k in range(10)], n=10)
        curve = pr_curve(evaluate(gt, gt))
        assert [p for _, p in curve] == [1.0] * 10
        assert curve[-1][0] == 1.0


class TestFiles:
    def test_annotation_round_trip(self, tmp_path):
        ann = _ann([(0, 1, 1, 2, 3, 4), (3, 2, 5, 6, 7, 8), (3, 1, 0, 0, 1, 1)], n=9)
        path = tmp_path / "a.txt"
        write_annotations(path, ann)
        back = read_annotations(path)
        assert back.n_frames == 9 and list(back.rows()) == list(ann.rows())

    def test_delimiters_and_header(self, tmp_path):
        path = tmp_path / "b.txt"
        path.write_text("frame,id,x,y,w,h\n0, 1, 2, 3, 4, 5\n1\t2\t3\t4\t5\t6\n\n2 3 4 5 6 7\n")
        ann = read_annotations(path)
        assert ann.n_frames is None and len(list(ann.rows())) == 3

    def test_bad_row(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("0 1 2 3\n")
        with pytest.raises(ValueError):
            read_annotations(path)

    def test_roi(self, tmp_path):
        path = tmp_path / "roi.txt"
        path.write_text("# polygon\n0 0\n10,0\n10 10\n")
        assert read_roi(path) == [(0, 0), (10, 0), (10, 10)]
        path.write_text("0 0\n1 1\n")
        with pytest.raises(ValueError):
            read_roi(path)

    def test_pr_curve_csv(self, tmp_path):
        path = tmp_path / "pr.csv"
        write_pr_curve(path, [(0.5, 1.0), (1.0, 0.75)])
        assert path.read_text() == "recall,precision\n0.500000,1.000000\n1.000000,0.750000\n"


def test_tracks_to_annotations():
    from helpers import make_tube

    ann = tracks_to_annotations([make_tube(4, 10, [(1, 1, 2, 2), (2, 1, 2, 2)])], n_frames=20)
    assert list(ann.rows()) == [(10, 4, 1, 1, 2, 2), (11, 4, 2, 1, 2, 2)]
