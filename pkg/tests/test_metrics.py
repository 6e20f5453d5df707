import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tenrmot.errors import InputError
from tenrmot.metrics import (
    METRIC_NAMES,
    THRESHOLDS,
    Detection,
    TrajectorySet,
    evaluate,
    evaluate_many,
    similarity,
)


def track(frames):
    """frames: list of {id: (x, y, w, h)}"""
    return TrajectorySet([[Detection(i, b) for i, b in f.items()] for f in frames])


def box_iou(a, b):
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    iw = max(0.0, min(ax0 + aw, bx0 + bw) - max(ax0, bx0))
    ih = max(0.0, min(ay0 + ah, by0 + bh) - max(ay0, by0))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def brute_force_hota(pred_frames, gt_frames):
    """Reference HOTA: exhaustive per-frame matching, explicit association
    counting by dictionary, no shared code with the evaluator."""
    n = max(len(pred_frames), len(gt_frames))
    pred_frames = pred_frames + [{}] * (n - len(pred_frames))
    gt_frames = gt_frames + [{}] * (n - len(gt_frames))
    g_frames, p_frames = {}, {}
    for f in gt_frames:
        for k in f:
            g_frames[k] = g_frames.get(k, 0) + 1
    for f in pred_frames:
        for k in f:
            p_frames[k] = p_frames.get(k, 0) + 1
    out = {name: [] for name in ("HOTA", "DetA", "AssA", "DetRe", "DetPr", "AssRe", "AssPr")}
    loc_sum, loc_n = 0.0, 0
    for tau in THRESHOLDS:
        tp = fn = fp = 0
        pairs = []
        for g, p in zip(gt_frames, pred_frames):
            gk, pk = list(g), list(p)
            best, best_score = [], -1.0
            for r in range(min(len(gk), len(pk)) + 1):
                for gs in itertools.combinations(gk, r):
                    for ps in itertools.permutations(pk, r):
                        sims = [box_iou(g[a], p[b]) for a, b in zip(gs, ps)]
                        if any(s < tau - 1e-12 for s in sims):
                            continue
                        if sum(sims) > best_score + 1e-12:
                            best, best_score = list(zip(gs, ps, sims)), sum(sims)
            tp += len(best)
            fn += len(g) - len(best)
            fp += len(p) - len(best)
            pairs += best
            loc_sum += sum(s for _, _, s in best)
            loc_n += len(best)
        tpa = {}
        for a, b, _ in pairs:
            tpa[(a, b)] = tpa.get((a, b), 0) + 1
        ass = ass_re = ass_pr = 0.0
        for a, b, _ in pairs:
            t = tpa[(a, b)]
            ass += t / (g_frames[a] + p_frames[b] - t)
            ass_re += t / g_frames[a]
            ass_pr += t / p_frames[b]
        det_a = tp / (tp + fn + fp) if tp + fn + fp else 0.0
        ass_a = ass / tp if tp else 0.0
        out["DetA"].append(det_a)
        out["AssA"].append(ass_a)
        out["HOTA"].append(math.sqrt(det_a * ass_a))
        out["DetRe"].append(tp / (tp + fn) if tp + fn else 0.0)
        out["DetPr"].append(tp / (tp + fp) if tp + fp else 0.0)
        out["AssRe"].append(ass_re / tp if tp else 0.0)
        out["AssPr"].append(ass_pr / tp if tp else 0.0)
    result = {k: float(np.mean(v)) for k, v in out.items()}
    result["LocA"] = loc_sum / loc_n if loc_n else 0.0
    return result


# -- similarity -------------------------------------------------------------


def test_identical_boxes():
    assert similarity(Detection(1, [0, 0, 2, 2]), Detection(2, [0, 0, 2, 2])) == 1.0


def test_overlapping_boxes():
    assert similarity(Detection(1, [0, 0, 2, 2]), Detection(2, [1, 1, 2, 2])) == pytest.approx(1 / 7, abs=1e-12)


def test_disjoint_masks():
    a, b = np.zeros((4, 4), bool), np.zeros((4, 4), bool)
    a[0, 0] = b[3, 3] = True
    assert similarity(Detection(1, [0] * 4, a), Detection(1, [0] * 4, b), "mask") == 0.0


def test_empty_masks():
    e = np.zeros((2, 2), bool)
    assert similarity(Detection(1, [0] * 4, e), Detection(1, [0] * 4, e), "mask") == 0.0


# -- fixtures ---------------------------------------------------------------

BOX = (10.0, 10.0, 20.0, 20.0)


def test_perfect_tracking():
    gt = track([{1: BOX, 2: (40, 40, 10, 10)}] * 6)
    res = evaluate(gt, gt)
    assert all(v == 1.0 for v in res.as_dict().values())


def test_identity_switch():
    gt = track([{1: BOX}] * 10)
    pred = track([{5: BOX}] * 5 + [{6: BOX}] * 5)
    res = evaluate(pred, gt)
    np.testing.assert_allclose(res.curves["DetA"], 1.0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(res.curves["AssA"], 0.5, rtol=0, atol=1e-12)
    np.testing.assert_allclose(res.curves["HOTA"], math.sqrt(0.5), rtol=0, atol=1e-9)


def test_empty_predictions():
    res = evaluate(TrajectorySet([[]] * 4), track([{1: BOX}] * 4))
    assert res.HOTA == 0.0 and res.DetA == 0.0 and res.DetRe == 0.0


def test_both_empty_is_perfect():
    assert evaluate(TrajectorySet([[]] * 3), TrajectorySet([[]] * 3)).HOTA == 1.0


def test_non_referred_prediction_is_false_positive():
    gt = track([{1: BOX}] * 4)
    pred = track([{1: BOX, 2: (40, 40, 10, 10)}] * 4)
    res = evaluate(pred, gt)
    assert res.DetA == pytest.approx(0.5) and res.DetPr == pytest.approx(0.5) and res.DetRe == 1.0


def test_duplicate_ids_are_rejected():
    with pytest.raises(InputError):
        TrajectorySet([[Detection(1, BOX), Detection(1, BOX)]])


def test_unknown_mode():
    with pytest.raises(InputError):
        evaluate(track([{1: BOX}]), track([{1: BOX}]), "polygon")


def test_pooling_adds_counts():
    a = (track([{1: BOX}] * 3), track([{1: BOX}] * 3))
    b = (TrajectorySet([[]] * 3), track([{1: BOX}] * 3))
    res = evaluate_many([a, b])
    assert res.DetA == pytest.approx(0.5)
    assert res.AssA == pytest.approx(1.0)


# -- oracle and properties --------------------------------------------------


def random_instance(rng):
    n_frames = int(rng.integers(1, 7))
    base = {k: rng.uniform(0, 40, 2) for k in range(int(rng.integers(1, 4)))}
    gt, pred = [], []
    for _ in range(n_frames):
        g, p = {}, {}
        for k, xy in base.items():
            if rng.random() < 0.8:
                g[k] = (*xy, 16.0, 16.0)
            if rng.random() < 0.8:
                jitter = rng.normal(0, 3, 4)
                p[10 + int(rng.integers(0, 3))] = (xy[0] + jitter[0], xy[1] + jitter[1],
                                                  16 + jitter[2], 16 + jitter[3])
        if rng.random() < 0.3:
            p[20 + int(rng.integers(0, 2))] = (*rng.uniform(0, 40, 2), 12.0, 12.0)
        gt.append(g)
        pred.append(p)
    return pred, gt


@pytest.mark.parametrize("seed", range(60))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    pred, gt = random_instance(rng)
    res = evaluate(track(pred), track(gt)).as_dict()
    ref = brute_force_hota(pred, gt)
    for name in METRIC_NAMES:
        assert res[name] == pytest.approx(ref[name], abs=1e-9), name


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_properties(seed):
    rng = np.random.default_rng(seed)
    pred, gt = random_instance(rng)
    res = evaluate(track(pred), track(gt))
    for name in METRIC_NAMES:
        assert 0.0 <= getattr(res, name) <= 1.0
    np.testing.assert_allclose(res.curves["HOTA"], np.sqrt(res.curves["DetA"] * res.curves["AssA"]),
                               rtol=0, atol=1e-12)
    # a far-away extra detection never helps
    t = int(rng.integers(len(pred)))
    worse = [dict(f) for f in pred]
    worse[t][99] = (200.0, 200.0, 5.0, 5.0)
    res2 = evaluate(track(worse), track(gt))
    assert res2.DetA <= res.DetA + 1e-12
    assert res2.HOTA <= res.HOTA + 1e-12
