"""Box transform targets and the per-category ridge refinement."""

import numpy as np
import pytest

from fusedet.core import Box, Detection, GroundTruth, iou
from fusedet.regress import (
    BoxRegressor,
    BoxTargets,
    apply_targets,
    bbox_targets,
    train_bbox_regressor,
    refine,
)


def _rand_box(rng, span=80.0):
    x0 = rng.uniform(0, span)
    y0 = rng.uniform(0, span)
    return Box(x0, y0, x0 + rng.uniform(5, 30), y0 + rng.uniform(5, 30))


def _corners(b):
    return (b.x_min, b.y_min, b.x_max, b.y_max)


# -------------------------------------------------------------------- targets


def test_identical_boxes_give_zero_targets():
    b = Box(3.0, 4.0, 13.0, 24.0)
    t = bbox_targets(b, b)
    assert (t.tx, t.ty, t.tw, t.th) == (0.0, 0.0, 0.0, 0.0)


def test_target_hand_values():
    t = bbox_targets(Box(0, 0, 10, 10), Box(5, 5, 15, 15))
    assert (t.tx, t.ty, t.tw, t.th) == (0.5, 0.5, 0.0, 0.0)
    t = bbox_targets(Box(0, 0, 10, 10), Box(0, 0, 20, 10))
    assert t.tx == 0.5 and t.ty == 0.0
    assert abs(t.tw - np.log(2.0)) <= 1e-15 and t.th == 0.0


def test_targets_apply_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = _rand_box(rng)
        g = _rand_box(rng)
        got = apply_targets(p, bbox_targets(p, g))
        for a, b in zip(_corners(got), _corners(g)):
            assert abs(a - b) <= 1e-9


def test_apply_targets_round_trip_in_target_space():
    rng = np.random.default_rng(1)
    for _ in range(100):
        p = _rand_box(rng)
        t = BoxTargets(*rng.uniform(-0.4, 0.4, size=4))
        back = bbox_targets(p, apply_targets(p, t))
        assert abs(back.tx - t.tx) <= 1e-9
        assert abs(back.ty - t.ty) <= 1e-9
        assert abs(back.tw - t.tw) <= 1e-9
        assert abs(back.th - t.th) <= 1e-9


def test_zero_targets_keep_the_box():
    rng = np.random.default_rng(2)
    for _ in range(50):
        p = _rand_box(rng)
        got = apply_targets(p, BoxTargets(0.0, 0.0, 0.0, 0.0))
        for a, b in zip(_corners(got), _corners(p)):
            assert abs(a - b) <= 1e-12


def test_targets_must_be_finite():
    with pytest.raises(ValueError, match="finite"):
        BoxTargets(float("nan"), 0.0, 0.0, 0.0)
    with pytest.raises(ValueError, match="finite"):
        BoxTargets(0.0, float("inf"), 0.0, 0.0)


# ------------------------------------------------------------------- training


def _linear_fixture(rng, n=40, dim=3, scale=0.02):
    """Pairs whose true transform is exactly linear in the feature."""
    W = rng.normal(size=(4, dim + 1)) * scale
    X = rng.normal(size=(n, dim))
    proposals, gts = [], []
    for i in range(n):
        p = Box(10.0 + 3.0 * i, 20.0, 110.0 + 3.0 * i, 120.0)
        t = W @ np.append(X[i], 1.0)
        g = apply_targets(p, BoxTargets(*t))
        proposals.append(p)
        gts.append(GroundTruth(image_id="im", category_id=0, box=g))
    return W, X, proposals, gts


def test_training_recovers_an_exactly_linear_transform():
    rng = np.random.default_rng(3)
    W, X, proposals, gts = _linear_fixture(rng)
    assert all(iou(p, g.box) >= 0.6 for p, g in zip(proposals, gts))
    reg = train_bbox_regressor(X, proposals, gts, ridge_lambda=1e-9)
    assert reg.is_trained(0)
    assert np.allclose(reg.coefficients[0], W, atol=1e-6)
    for i in range(10):
        pred = reg.predict(0, X[i])
        true = W @ np.append(X[i], 1.0)
        assert np.allclose(pred.as_array(), true, atol=1e-6)


def test_huge_ridge_collapses_predictions_to_target_mean():
    rng = np.random.default_rng(4)
    _, X, proposals, gts = _linear_fixture(rng)
    reg = train_bbox_regressor(X, proposals, gts, ridge_lambda=1e12)
    T = np.stack([bbox_targets(p, g.box).as_array() for p, g in zip(proposals, gts)])
    mean = T.mean(axis=0)
    for i in range(10):
        assert np.allclose(reg.predict(0, X[i]).as_array(), mean, atol=1e-6)


def test_coefficients_satisfy_the_normal_equations():
    rng = np.random.default_rng(5)
    _, X, proposals, gts = _linear_fixture(rng)
    lam = 0.5
    reg = train_bbox_regressor(X, proposals, gts, ridge_lambda=lam)
    A = np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)
    T = np.stack([bbox_targets(p, g.box).as_array() for p, g in zip(proposals, gts)])
    gram = A.T @ A + lam * np.diag(np.append(np.ones(X.shape[1]), 0.0))
    rhs = A.T @ T
    resid = np.linalg.norm(gram @ reg.coefficients[0].T - rhs)
    assert resid <= 1e-8 * max(1.0, np.linalg.norm(rhs))


def test_constant_shift_is_learned_and_iou_improves():
    # every proposal sits 5 px right of its object; a constant feature can
    # only learn the bias, which suffices here
    proposals, gts, dets = [], [], []
    for i in range(12):
        g = Box(10.0 + 11.0 * i, 30.0, 30.0 + 11.0 * i, 40.0)
        p = Box(g.x_min + 5.0, g.y_min, g.x_max + 5.0, g.y_max)
        proposals.append(p)
        gts.append(GroundTruth(image_id="im", category_id=0, box=g))
        dets.append(Detection(image_id="im", category_id=0, score=1.0, box=p))
    X = np.ones((12, 1))
    reg = train_bbox_regressor(X, proposals, gts, ridge_lambda=1e-6)
    refined = refine(dets, X, reg, image_width=200, image_height=100)
    for det, ref, g in zip(dets, refined, gts):
        for a, b in zip(_corners(ref.box), _corners(g.box)):
            assert abs(a - b) <= 0.1
        assert iou(ref.box, g.box) >= iou(det.box, g.box) - 1e-12
        assert ref.score == det.score and ref.category_id == det.category_id


def test_pairs_below_the_iou_gate_are_dropped():
    proposals = [Box(0, 0, 10, 10), Box(100, 100, 110, 110)]
    gts = [
        GroundTruth(image_id="a", category_id=0, box=Box(0, 0, 10, 10)),
        GroundTruth(image_id="a", category_id=1, box=Box(0, 0, 10, 10)),  # iou 0
    ]
    X = np.array([[1.0], [2.0]])
    reg = train_bbox_regressor(X, proposals, gts, ridge_lambda=1e-3)
    assert reg.is_trained(0)
    assert not reg.is_trained(1)


def test_train_validates_inputs():
    with pytest.raises(ValueError, match="parallel"):
        train_bbox_regressor(np.zeros((2, 1)), [Box(0, 0, 1, 1)], [], 0.1)
    gts = [GroundTruth(image_id="a", category_id=0, box=Box(0, 0, 1, 1))]
    with pytest.raises(ValueError, match="positive"):
        train_bbox_regressor(np.zeros((1, 1)), [Box(0, 0, 1, 1)], gts, 0.0)


# ----------------------------------------------------------------- refinement


def test_untrained_category_passes_through():
    reg = BoxRegressor(dim=2, coefficients={})
    det = Detection(image_id="a", category_id=3, score=0.5, box=Box(0, 0, 10, 10))
    out = refine([det], np.zeros((1, 2)), reg, image_width=50, image_height=50)
    assert out[0] is det


def test_refine_clips_to_the_image():
    # bias-only transform shifting the center by half a width
    coef = np.zeros((4, 2))
    coef[0, 1] = 0.5
    reg = BoxRegressor(dim=1, coefficients={0: coef})
    det = Detection(image_id="a", category_id=0, score=0.5, box=Box(0, 0, 10, 10))
    out = refine([det], np.zeros((1, 1)), reg, image_width=12, image_height=12)
    assert out[0].box == Box(5.0, 0.0, 12.0, 10.0)


def test_refine_propagates_clip_errors():
    coef = np.zeros((4, 2))
    coef[0, 1] = 5.0
    reg = BoxRegressor(dim=1, coefficients={0: coef})
    det = Detection(image_id="a", category_id=0, score=0.5, box=Box(0, 0, 10, 10))
    with pytest.raises(ValueError):
        refine([det], np.zeros((1, 1)), reg, image_width=20, image_height=20)


def test_refine_validates_feature_rows():
    reg = BoxRegressor(dim=1, coefficients={})
    det = Detection(image_id="a", category_id=0, score=0.5, box=Box(0, 0, 10, 10))
    with pytest.raises(ValueError, match="one feature row per detection"):
        refine([det], np.zeros((2, 1)), reg, image_width=20, image_height=20)


def test_predict_validates_shape_and_untrained_gives_none():
    coef = np.zeros((4, 3))
    reg = BoxRegressor(dim=2, coefficients={1: coef})
    assert reg.predict(0, np.zeros(2)) is None
    with pytest.raises(ValueError, match=r"expected \(2,\)"):
        reg.predict(1, np.zeros(3))


def test_regressor_validates_coefficient_shapes():
    with pytest.raises(ValueError, match=r"category 5: expected \(4, 3\)"):
        BoxRegressor(dim=2, coefficients={5: np.zeros((4, 4))})
    bad = np.zeros((4, 3))
    bad[0, 0] = np.inf
    with pytest.raises(ValueError, match="category 2: non-finite"):
        BoxRegressor(dim=2, coefficients={2: bad})


def test_save_load_round_trips_bits_including_empty(tmp_path):
    rng = np.random.default_rng(6)
    reg = BoxRegressor(
        dim=3,
        coefficients={0: rng.normal(size=(4, 4)), 4: rng.normal(size=(4, 4))},
    )
    path = tmp_path / "reg.txt"
    reg.save(path)
    loaded = BoxRegressor.load(path)
    assert loaded.dim == 3
    assert sorted(loaded.coefficients) == [0, 4]
    for cid in (0, 4):
        assert np.array_equal(loaded.coefficients[cid], reg.coefficients[cid])

    empty = BoxRegressor(dim=7, coefficients={})
    empty.save(tmp_path / "empty.txt")
    loaded = BoxRegressor.load(tmp_path / "empty.txt")
    assert loaded.dim == 7 and loaded.coefficients == {}
