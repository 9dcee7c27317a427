import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from dogmapred.grid import DogmaFrame, GridSpec, unknown_channels
from dogmapred.evaluation import (
    RocCurve, auc, binarize_truth, confusion, default_gammas, evaluate_prediction, export_metrics,
    pool_curves, read_metrics, read_ppm, render_overlay, roc_curve, write_ppm,
)


def frame_from_p(p, offset=(0, 0)):
    g = GridSpec(*p.shape)
    ch = unknown_channels(g).astype(np.float64)
    ch[0], ch[1] = p, 1 - p
    return DogmaFrame(g, 0.0, offset, ch)


def test_binarize_truth_is_strict():
    p = np.array([[0.56, 0.5, 0.95]])
    assert binarize_truth(frame_from_p(p)).tolist() == [[True, False, True]]
    # f32 masses cannot hit 0.55 exactly; the comparison itself is strict
    g = GridSpec(1, 2)
    ch = unknown_channels(g)
    ch[0] = 0.1
    ch[1] = 0.0
    f = DogmaFrame(g, 0.0, (0, 0), ch)
    assert binarize_truth(f).tolist() == (f.occupancy > 0.55).tolist()
    f32 = frame_from_p(np.array([[0.25, 0.25]]))
    ch = np.array(f32.channels)
    ch[1] = 0.15
    edge = DogmaFrame(GridSpec(1, 2), 0.0, (0, 0), ch)
    assert edge.occupancy[0, 0] == pytest.approx(0.55) and not binarize_truth(edge).any()


def test_default_gammas():
    g = default_gammas()
    assert len(g) == 99 and g[0] == 0.01 and g[-1] == 0.99


def test_perfect_prediction():
    rng = np.random.default_rng(0)
    truth = rng.random((20, 20)) < 0.1
    c = roc_curve(truth.astype(float), np.zeros(truth.shape), truth)
    assert np.all(c.tpr == 1) and np.all(c.fpr == 0)
    assert auc(c) == 1.0
    assert np.all(np.diff(c.gammas) < 0)


def test_random_scores_auc_half():
    rng = np.random.default_rng(1)
    truth = rng.random((100, 100)) < 0.5
    c = roc_curve(rng.random((100, 100)), np.zeros((100, 100)), truth)
    assert abs(auc(c) - 0.5) < 0.05


def test_auc_diagonal_and_degenerate():
    g = np.array([0.9, 0.5, 0.1])
    diag = RocCurve(g, np.array([0.0, 0.5, 1.0]), np.array([0.0, 0.5, 1.0]))
    assert auc(diag) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        auc(RocCurve(g[:1], np.array([0.3]), np.array([0.2])))


def test_auc_close_to_pairwise_ranking():
    rng = np.random.default_rng(2)
    truth = rng.random((30, 30)) < 0.3
    score = np.clip(truth * 0.25 + rng.random((30, 30)) * 0.75, 0, 1)
    c = roc_curve(score, np.zeros(truth.shape), truth)
    assert abs(auc(c) - oracles.pairwise_auc(score.ravel(), truth.ravel())) < 0.01


def test_gamma_one_endpoint_is_static_only():
    rng = np.random.default_rng(3)
    truth = rng.random((16, 16)) < 0.3
    static = rng.random((16, 16))
    score = rng.random((16, 16))
    c = roc_curve(score, static, truth, gammas=[1.0, 0.5])
    assert tuple(c.counts[0]) == confusion(static > 0.55, truth)
    counts = rng.integers(0, 50, (16, 16))
    c = roc_curve(counts, static, truth, gammas=[1.0], counts=True)
    assert tuple(c.counts[0]) == confusion(static > 0.55, truth)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.booleans())
def test_confusion_matches_oracle_and_monotone(seed, use_counts):
    rng = np.random.default_rng(seed)
    truth = rng.random((32, 32)) < rng.uniform(0.05, 0.6)
    region = rng.random((32, 32)) < 0.8
    static = rng.random((32, 32))
    score = rng.integers(0, 40, (32, 32)) if use_counts else rng.random((32, 32))
    gam = default_gammas()
    c = roc_curve(score, static, truth, gam, region, counts=use_counts)
    scale = score.max() if use_counts else 1.0
    for k in (0, 17, 50, 98):
        pred = (static > 0.55) | (score > c.gammas[k] * scale)
        assert tuple(c.counts[k]) == oracles.confusion_loop(pred, truth, region)
    assert np.all(np.diff(c.tpr) >= 0) and np.all(np.diff(c.fpr) >= 0)
    assert 0 <= auc(c) <= 1


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        roc_curve(np.zeros((3, 3)), np.zeros((3, 3)), np.zeros((3, 4), bool))


def test_moving_ego_alignment_gives_same_curve():
    rng = np.random.default_rng(4)
    world = rng.random((40, 20))
    world[world < 0.3] = 0.05
    pred_static = world[10:26, 2:18]
    score = rng.random((16, 16))
    still = frame_from_p(world[10:26, 2:18], offset=(10, 2))
    moved = frame_from_p(world[13:29, 1:17], offset=(13, 1))
    # the shifted truth frame covers world e 13..28, n 1..16; compare on shared cells
    keep = np.zeros((16, 16), bool)
    keep[3:, :15] = True
    a = evaluate_prediction(score, pred_static, (10, 2), still, valid_mask=keep)
    b = evaluate_prediction(score, pred_static, (10, 2), moved, valid_mask=keep)
    np.testing.assert_array_equal(a.counts, b.counts)


def test_pool_sums_counts():
    rng = np.random.default_rng(5)
    curves = [roc_curve(rng.random((8, 8)), np.zeros((8, 8)), rng.random((8, 8)) < 0.4) for _ in range(3)]
    pooled = pool_curves(curves)
    np.testing.assert_array_equal(pooled.counts, sum(c.counts for c in curves))
    tot = pooled.counts[0]
    assert pooled.tpr[0] == tot[0] / (tot[0] + tot[2])


def test_overlay_colours():
    z = np.zeros((3, 2), bool)
    truth, net, part = z.copy(), z.copy(), z.copy()
    truth[0, 0] = True
    truth[1, 0] = net[1, 0] = part[1, 0] = True
    static = np.zeros((3, 2))
    static[2, 1] = 0.55
    static[2, 0] = 0.61
    img = render_overlay(truth, net, part, static)
    assert img.shape == (2, 3, 3)
    # north up: grid row n=0 is the bottom image row
    assert img[1, 0].tolist() == [255, 0, 0]
    assert img[1, 1].tolist() == [255, 255, 255]
    assert img[1, 2].tolist() == [255, 255, 255]
    assert img[0, 2].tolist() == [0, 0, 0]
    with pytest.raises(ValueError):
        render_overlay(truth, net, part, np.zeros((2, 2)))


def test_ppm_roundtrip(tmp_path):
    img = np.random.default_rng(6).integers(0, 256, (5, 7, 3)).astype(np.uint8)
    write_ppm(img, tmp_path / "a.ppm")
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n7 5\n255\n")
    np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), img)


def test_metrics_export(tmp_path):
    export_metrics([], tmp_path / "empty.csv")
    assert (tmp_path / "empty.csv").read_text().strip() == "predictor,horizon,gamma,tpr,fpr,auc"
    rng = np.random.default_rng(7)
    curves = []
    for pred in ("net", "particles"):
        for h in (0.5, 1.0, 1.5, 2.0, 2.5, 3.0):
            curves.append(roc_curve(rng.random((8, 8)), np.zeros((8, 8)), rng.random((8, 8)) < 0.3,
                                    horizon=h, predictor=pred))
    export_metrics(curves, tmp_path / "m.csv")
    rows = read_metrics(tmp_path / "m.csv")
    assert len({(r["predictor"], r["horizon"]) for r in rows}) == 12
    first = [r for r in rows if r["predictor"] == "net" and r["horizon"] == 0.5]
    assert [r["tpr"] for r in first] == curves[0].tpr.tolist()
    assert [r["gamma"] for r in first] == curves[0].gammas.tolist()
    assert first[0]["auc"] == auc(curves[0])
