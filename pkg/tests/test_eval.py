import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frontview.core import Box3D, ClassId
from frontview.evaluation import (DIFFICULTIES, Detection, GroundTruth, ap_11point, clip_convex, evaluate, evaluate_all,
                              iou_3d, iou_bev, iou_map, iou_of_kind, match_sample, polygon_area, pr_from_flags,
                              recall_points, report_table, report_to_json)

OCTAGON_IOU = 2 * (math.sqrt(2) - 1) / (2 - 2 * (math.sqrt(2) - 1))


def monte_carlo_iou_bev(a: Box3D, b: Box3D, n: int, rng) -> float:
    """Sample the joint bounding square and test membership in each rotated rectangle."""
    def inside(box, x, y):
        c, s = math.cos(box.heading), math.sin(box.heading)
        dx, dy = x - box.cx, y - box.cy
        u = c * dx + s * dy
        v = -s * dx + c * dy
        return (np.abs(u) <= box.l / 2) & (np.abs(v) <= box.w / 2)

    r = max(math.hypot(a.l, a.w), math.hypot(b.l, b.w)) / 2
    x0, x1 = min(a.cx, b.cx) - r, max(a.cx, b.cx) + r
    y0, y1 = min(a.cy, b.cy) - r, max(a.cy, b.cy) + r
    x = rng.uniform(x0, x1, n)
    y = rng.uniform(y0, y1, n)
    ia, ib = inside(a, x, y), inside(b, x, y)
    union = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / union if union else 0.0


def unit(cx=0.0, cy=0.0, cz=0.0, heading=0.0, h=1.0, w=1.0, l=1.0):
    return Box3D(cx, cy, cz, h, w, l, heading)


class TestPolygon:
    def test_square_area_and_clip(self):
        sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
        assert polygon_area(sq) == 1.0
        shifted = sq + [0.5, 0.5]
        assert polygon_area(clip_convex(sq, shifted)) == pytest.approx(0.25)

    def test_degenerate(self):
        assert polygon_area(np.zeros((2, 2))) == 0.0


class TestIoUBEV:
    def test_identical_and_disjoint(self):
        assert iou_bev(unit(heading=0.3), unit(heading=0.3)) == pytest.approx(1.0, abs=1e-12)
        assert iou_bev(unit(), unit(cx=5)) == 0.0

    def test_touching_edges(self):
        assert iou_bev(unit(), unit(cx=1.0)) == 0.0

    def test_octagon_analytic(self):
        assert iou_bev(unit(), unit(heading=math.pi / 4)) == pytest.approx(OCTAGON_IOU, abs=1e-12)

    def test_monte_carlo_oracle_checks_out_on_octagon(self):
        est = monte_carlo_iou_bev(unit(), unit(heading=math.pi / 4), 400_000, np.random.default_rng(0))
        assert est == pytest.approx(OCTAGON_IOU, abs=0.005)

    def test_monte_carlo_random_pairs(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            a = Box3D(*rng.uniform(-1, 1, 3), *rng.uniform(0.5, 3, 3), rng.uniform(0, 2 * math.pi))
            b = Box3D(a.cx + rng.uniform(-1, 1), a.cy + rng.uniform(-1, 1), 0, *rng.uniform(0.5, 3, 3),
                      rng.uniform(0, 2 * math.pi))
            assert iou_bev(a, b) == pytest.approx(monte_carlo_iou_bev(a, b, 200_000, rng), abs=0.01)

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 6.28), st.floats(0, 6.28))
    @settings(max_examples=50)
    def test_symmetric_and_bounded(self, dx, dy, ha, hb):
        a = Box3D(0, 0, 0, 1, 1.5, 3, ha)
        b = Box3D(dx, dy, 0, 1, 1, 2, hb)
        v = iou_bev(a, b)
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(iou_bev(b, a), abs=1e-9)

    @given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0, 6.28))
    @settings(max_examples=30)
    def test_rigid_motion_invariant(self, tx, ty, rot):
        a = Box3D(1, 0.5, 0, 1, 1.5, 3, 0.2)
        b = Box3D(1.5, 0.2, 0, 1, 1, 2, 1.0)
        base = iou_bev(a, b)
        a2 = a.rotated(rot).translated(tx, ty, 0)
        b2 = b.rotated(rot).translated(tx, ty, 0)
        assert iou_bev(a2, b2) == pytest.approx(base, abs=1e-7)


class TestIoU3D:
    def test_identical(self):
        assert iou_3d(unit(), unit()) == pytest.approx(1.0)

    def test_vertical_shift(self):
        assert iou_3d(unit(), unit(cz=1.0)) == 0.0

    def test_third(self):
        assert iou_3d(unit(), unit(cx=0.5)) == pytest.approx(1 / 3, abs=1e-12)

    def test_half_height_overlap(self):
        # same footprint, half the height overlapping: 0.5 / 1.5
        assert iou_3d(unit(), unit(cz=0.5)) == pytest.approx(1 / 3, abs=1e-12)

    def test_bounded_by_bev(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            a = Box3D(*rng.uniform(-1, 1, 3), *rng.uniform(0.5, 3, 3), rng.uniform(0, 6))
            b = Box3D(*rng.uniform(-1, 1, 3), *rng.uniform(0.5, 3, 3), rng.uniform(0, 6))
            assert iou_3d(a, b) <= iou_bev(a, b) + 1e-12 or iou_bev(a, b) == 0

    def test_map_iou_identity(self):
        b = Box3D(20, 3, -1, 1.5, 1.6, 4, 0.5)
        assert iou_map(b, b) == pytest.approx(1.0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            iou_of_kind("volume")


class TestAP:
    def test_hand_enumerated(self):
        recall, precision = pr_from_flags([0.9, 0.8, 0.7], [True, False, True], 2)
        np.testing.assert_allclose(recall, [0.5, 0.5, 1.0])
        np.testing.assert_allclose(precision, [1.0, 0.5, 2 / 3])
        assert ap_11point(recall, precision) == pytest.approx(0.848485, abs=1e-6)
        assert ap_11point(recall, precision) == pytest.approx((6 + 5 * 2 / 3) / 11, abs=1e-15)

    def test_perfect_and_empty(self):
        r, p = pr_from_flags([0.5, 0.4], [True, True], 2)
        assert ap_11point(r, p) == 1.0
        r, p = pr_from_flags([0.5], [False], 2)
        assert ap_11point(r, p) == 0.0

    def test_forty_points(self):
        assert len(recall_points(40)) == 40 and recall_points(40)[0] == 1 / 40
        r, p = pr_from_flags([0.9, 0.8, 0.7], [True, False, True], 2)
        # levels 1/40..20/40 see precision 1, the remaining 20 see 2/3
        assert ap_11point(r, p, 40) == pytest.approx((20 + 20 * 2 / 3) / 40)
        with pytest.raises(ValueError):
            recall_points(7)

    def test_recall_non_decreasing(self):
        rng = np.random.default_rng(0)
        r, _ = pr_from_flags(rng.uniform(size=50), rng.uniform(size=50) > 0.5, 30)
        assert np.all(np.diff(r) >= 0)


def gt(box, cls=ClassId.CAR, sample="0", **kw):
    return GroundTruth(box, cls, sample, height_px=kw.pop("height_px", 100.0), **kw)


def det(box, score, cls=ClassId.CAR, sample="0"):
    return Detection(box, cls, score, sample)


class TestEvaluate:
    B = [Box3D(10 * i, 0, 0, 1.5, 1.6, 4.0, 0) for i in range(1, 4)]

    def test_perfect_detector(self):
        gts = [gt(b) for b in self.B]
        dets = [det(b, 0.9 - 0.1 * i) for i, b in enumerate(self.B)]
        for kind in ("bev", "3d", "2d-map"):
            assert evaluate(dets, gts, ClassId.CAR, "hard", kind).ap == 1.0

    def test_no_gt_is_absent(self):
        assert evaluate([], [], ClassId.CAR).ap is None

    def test_zero_tp(self):
        gts = [gt(self.B[0])]
        assert evaluate([det(self.B[1], 0.9)], gts, ClassId.CAR).ap == 0.0

    def test_each_gt_matched_once(self):
        gts = [gt(self.B[0])]
        curve = evaluate([det(self.B[0], 0.9), det(self.B[0], 0.8)], gts, ClassId.CAR)
        assert curve.pairs() == [(1.0, 1.0), (1.0, 0.5)]

    def test_dont_care_absorbs(self):
        gts = [gt(self.B[0]), gt(self.B[1], dont_care=True)]
        curve = evaluate([det(self.B[0], 0.9), det(self.B[1], 0.95)], gts, ClassId.CAR)
        assert curve.ap == 1.0 and len(curve.recall) == 1

    def test_difficulty_buckets_nested(self):
        gts = [gt(self.B[0], height_px=50), gt(self.B[1], height_px=30, occlusion=1),
               gt(self.B[2], height_px=30, occlusion=2, truncation=0.4)]
        counts = [evaluate([], gts, ClassId.CAR, b).n_gt for b in ("easy", "moderate", "hard")]
        assert counts == [1, 2, 3]

    def test_out_of_bucket_detection_not_false_positive(self):
        gts = [gt(self.B[0]), gt(self.B[1], height_px=10)]
        curve = evaluate([det(self.B[0], 0.9), det(self.B[1], 0.95)], gts, ClassId.CAR, "hard")
        assert curve.ap == 1.0

    def test_height_scale(self):
        gts = [gt(self.B[0], height_px=20)]
        assert evaluate([], gts, ClassId.CAR, "hard").n_gt == 0
        assert evaluate([], gts, ClassId.CAR, "hard", height_scale=2.0).n_gt == 1

    def test_person_covers_both(self):
        gts = [gt(self.B[0], ClassId.PEDESTRIAN), gt(self.B[1], ClassId.CYCLIST)]
        dets = [det(self.B[0], 0.9, ClassId.PEDESTRIAN), det(self.B[1], 0.8, ClassId.CYCLIST)]
        assert evaluate(dets, gts, ClassId.PERSON).ap == 1.0
        assert evaluate(dets, gts, ClassId.PEDESTRIAN).n_gt == 1

    def test_samples_do_not_cross_match(self):
        gts = [gt(self.B[0], sample="a")]
        assert evaluate([det(self.B[0], 0.9, sample="b")], gts, ClassId.CAR).ap == 0.0

    def test_match_sample_prefers_higher_iou(self):
        g = [gt(self.B[0]), gt(self.B[0].translated(0.3, 0, 0))]
        flags = match_sample([det(self.B[0].translated(0.29, 0, 0), 0.9)], g, [True, True], iou_bev, 0.5)
        assert flags == [True]

    def test_report_outputs(self, tmp_path):
        gts = [gt(b) for b in self.B]
        dets = [det(b, 0.5) for b in self.B]
        rep = evaluate_all(dets, gts, iou_thresholds={"Car": 0.7})
        assert rep["Car"]["moderate"]["bev"]["ap"] == 1.0
        assert rep["Person"]["easy"]["3d"]["ap"] is None
        report_to_json(rep, tmp_path / "r.json")
        table = report_table(rep, "bev")
        assert "100.00" in table and "-" in table


def aligned_iou(a: Box3D, b: Box3D) -> float:
    """Axis-aligned BEV IoU from interval algebra, for heading-0 boxes."""
    ix = max(0.0, min(a.cx + a.l / 2, b.cx + b.l / 2) - max(a.cx - a.l / 2, b.cx - b.l / 2))
    iy = max(0.0, min(a.cy + a.w / 2, b.cy + b.w / 2) - max(a.cy - a.w / 2, b.cy - b.w / 2))
    inter = ix * iy
    return inter / (a.l * a.w + b.l * b.w - inter)


def reference_ap(dets, gts, thr):
    """Independent evaluator: per-sample greedy matching, global ranking, 11-point interpolation."""
    ranked = []
    n_gt = len(gts)
    for sid in sorted({d.sample for d in dets} | {g.sample for g in gts}):
        sg = [g for g in gts if g.sample == sid]
        taken = set()
        for d in sorted((d for d in dets if d.sample == sid), key=lambda d: -d.score):
            best, best_iou = None, thr
            for j, g in enumerate(sg):
                v = aligned_iou(d.box, g.box)
                if j not in taken and v >= thr and (best is None or v > best_iou):
                    best, best_iou = j, v
            if best is not None:
                taken.add(best)
            ranked.append((d.score, best is not None))
    ranked.sort(key=lambda t: -t[0])
    tp = fp = 0
    pts = []
    for _, hit in ranked:
        tp += hit
        fp += not hit
        pts.append((tp / n_gt, tp / (tp + fp)))
    ap = 0.0
    for k in range(11):
        level = k / 10
        ap += max([p for r, p in pts if r >= level - 1e-12], default=0.0)
    return ap / 11


def random_scenario(seed):
    """Axis-aligned cars over four samples: jittered true positives plus scattered false positives."""
    rng = np.random.default_rng(seed)
    gts, dets = [], []
    for s in range(4):
        for _ in range(rng.integers(1, 6)):
            b = Box3D(rng.uniform(0, 30), rng.uniform(-10, 10), 0, 1.5, rng.uniform(1, 2), rng.uniform(3, 5), 0)
            gts.append(gt(b, sample=str(s)))
            for _ in range(rng.integers(0, 3)):
                j = Box3D(b.cx + rng.normal(0, 0.4), b.cy + rng.normal(0, 0.3), 0, 1.5, b.w, b.l, 0)
                dets.append(det(j, float(rng.uniform()), sample=str(s)))
        for _ in range(rng.integers(0, 3)):
            fpb = Box3D(rng.uniform(0, 30), rng.uniform(-10, 10), 0, 1.5, 1.6, 4, 0)
            dets.append(det(fpb, float(rng.uniform()), sample=str(s)))
    return dets, gts


class TestReferenceEvaluator:
    @pytest.mark.parametrize("seed", range(10))
    def test_random_scenarios(self, seed):
        dets, gts = random_scenario(seed)
        for thr in (0.5, 0.7):
            assert evaluate(dets, gts, ClassId.CAR, "hard", "bev", thr).ap == reference_ap(dets, gts, thr)

    def test_difficulty_table_values(self):
        assert DIFFICULTIES["easy"].min_height == 40 and DIFFICULTIES["hard"].max_truncation == 0.5
