"""Evaluation metrics against hand-worked pairs and per-pixel loop oracles."""

import csv

import numpy as np
import pytest

from mugennet.exceptions import DataError
from mugennet.metrics import (MetricReport, binarize, confusion, dice, e_measure,
                              fbeta, iou, mae, mdice, miou, precision_recall,
                              report_for_pairs, s_measure, valid_prediction,
                              weighted_fbeta, write_report_csv)

from oracles import (loop_confusion, loop_dice, loop_e_measure, loop_iou,
                     loop_mae, loop_report, loop_s_measure, loop_weighted_fbeta)

RNG = np.random.default_rng(17)


def worked_pair():
    """A = {(0,0),(0,1)}, B = {(0,1),(0,2)} on a 1x4 grid."""
    a = np.array([[1.0, 1.0, 0.0, 0.0]])
    b = np.array([[0.0, 1.0, 1.0, 0.0]])
    return a, b


# -- overlap -----------------------------------------------------------------


def test_worked_pair_iou_dice():
    a, b = worked_pair()
    assert iou(a, b) == pytest.approx(1.0 / 3.0)
    assert dice(a, b) == pytest.approx(0.5)


def test_identical_and_disjoint():
    g = (RNG.random((6, 6)) < 0.5).astype(float)
    assert iou(g, g) == 1.0
    assert dice(g, g) == 1.0
    a = np.zeros((2, 2)); a[0, 0] = 1
    b = np.zeros((2, 2)); b[1, 1] = 1
    assert iou(a, b) == 0.0


def test_empty_vs_empty_is_perfect():
    z = np.zeros((3, 3))
    assert iou(z, z) == 1.0
    assert dice(z, z) == 1.0


def test_dice_iou_identity():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        a = (rng.random((8, 8)) < 0.5).astype(float)
        b = (rng.random((8, 8)) < 0.5).astype(float)
        i, d = iou(a, b), dice(a, b)
        assert d == pytest.approx(2.0 * i / (1.0 + i))


# -- MAE ---------------------------------------------------------------------


def test_mae_examples():
    assert mae([(np.ones((2, 2)), np.ones((2, 2)))]) == 0.0
    p = np.array([[1.0, 0.0, 1.0]])
    g = np.array([[1.0, 1.0, 0.0]])
    assert mae([(p, g)]) == pytest.approx(2.0 / 3.0)
    g2 = (RNG.random((5, 5)) < 0.5).astype(float)
    assert mae([(np.full((5, 5), 0.5), g2)]) == pytest.approx(0.5)


# -- confusion / F-beta ------------------------------------------------------


def test_confusion_hand_count():
    d = np.array([1.0, 0.0, 1.0, 0.0])
    g = np.array([1.0, 1.0, 0.0, 0.0])
    assert confusion(d, g) == (1.0, 1.0, 1.0, 1.0)
    assert confusion(g, g)[2:] == (0.0, 0.0)
    tp, tn, _, _ = confusion(1.0 - g, g)
    assert tp == 0.0 and tn == 0.0


def test_confusion_partitions_grid():
    d = (RNG.random((7, 5)) < 0.5).astype(float)
    g = (RNG.random((7, 5)) < 0.5).astype(float)
    assert sum(confusion(d, g)) == pytest.approx(35.0)


def test_precision_recall_conventions():
    assert precision_recall((1.0, 1.0, 1.0, 1.0)) == (0.5, 0.5)
    assert precision_recall((4.0, 0.0, 0.0, 0.0)) == (1.0, 1.0)
    assert precision_recall((0.0, 0.0, 3.0, 0.0))[0] == 0.0
    assert precision_recall((0.0, 4.0, 0.0, 0.0)) == (1.0, 1.0)


def test_fbeta_values():
    for v in (0.2, 0.7, 1.0):
        assert fbeta(v, v) == pytest.approx(v)
    assert fbeta(1.0, 0.5) == pytest.approx(1.25 * 0.5 / 0.75)
    assert fbeta(0.0, 0.0) == 0.0


def test_weighted_fbeta_loop_oracle():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        p = rng.random((8, 8))
        g = (rng.random((8, 8)) < 0.4).astype(float)
        assert weighted_fbeta(p, g) == pytest.approx(loop_weighted_fbeta(p, g), abs=1e-6)


# -- S-measure ---------------------------------------------------------------


def test_s_measure_perfect_prediction():
    g = np.zeros((8, 8))
    g[2:5, 3:7] = 1.0
    assert s_measure(g.copy(), g) == pytest.approx(1.0, abs=1e-9)


def test_s_measure_uniform_half_object_term():
    # x_bar = 0.5, sigma = 0 gives object score 1/(0.25+1) = 0.8 on both sides
    g = np.zeros((8, 8))
    g[2:6, 2:6] = 1.0
    p = np.full((8, 8), 0.5)
    from mugennet.metrics import _object_score
    assert _object_score(p[g == 1]) == pytest.approx(0.8)
    assert _object_score((1 - p)[g == 0]) == pytest.approx(0.8)


def test_s_measure_degenerate_masks():
    p = RNG.random((6, 6))
    assert 0.0 <= s_measure(p, np.zeros((6, 6))) <= 1.0
    assert 0.0 <= s_measure(p, np.ones((6, 6))) <= 1.0
    assert s_measure(np.zeros((6, 6)), np.zeros((6, 6))) == pytest.approx(1.0, abs=1e-9)


def test_s_measure_in_unit_interval_and_loop_oracle():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        p = rng.random((8, 8))
        g = (rng.random((8, 8)) < 0.4).astype(float)
        s = s_measure(p, g)
        assert 0.0 <= s <= 1.0
        assert s == pytest.approx(loop_s_measure(p, g), abs=1e-6)


# -- E-measure ---------------------------------------------------------------


def test_e_measure_perfect_and_inverted():
    g = np.zeros((8, 8))
    g[1:4, 2:6] = 1.0
    assert e_measure(g.copy(), g) == pytest.approx(1.0, abs=1e-9)
    inverted = e_measure(1.0 - g, g)
    rng = np.random.default_rng(0)
    assert inverted <= e_measure(rng.random((8, 8)), g)


def test_e_measure_loop_oracle():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        p = rng.random((8, 8))
        g = (rng.random((8, 8)) < 0.4).astype(float)
        assert e_measure(p, g) == pytest.approx(loop_e_measure(p, g), abs=1e-6)


# -- aggregation -------------------------------------------------------------


def test_validity_flag():
    a, b = worked_pair()
    assert not valid_prediction(a, b)              # IoU 1/3
    g = np.zeros((4, 4)); g[1:3, 1:3] = 1.0
    assert valid_prediction(g.copy(), g)


def test_perfect_report():
    pairs = []
    for seed in range(4):
        rng = np.random.default_rng(seed)
        g = (rng.random((8, 8)) < 0.4).astype(float)
        pairs.append((g.copy(), g))
    rep = report_for_pairs(pairs)
    assert rep.mDice == pytest.approx(1.0)
    assert rep.mIoU == pytest.approx(1.0)
    assert rep.MAE == pytest.approx(0.0)
    assert rep.wFbeta == pytest.approx(1.0)
    assert rep.Smeasure == pytest.approx(1.0, abs=1e-9)
    assert rep.Emeasure == pytest.approx(1.0, abs=1e-9)
    assert rep.n_samples == 4


def test_report_matches_loop_oracle_means():
    rng = np.random.default_rng(2)
    pairs = [(rng.random((8, 8)), (rng.random((8, 8)) < 0.4).astype(float))
             for _ in range(6)]
    rep = report_for_pairs(pairs)
    ref = loop_report(pairs)
    for key in ref:
        assert getattr(rep, key) == pytest.approx(ref[key], abs=1e-6), key


def test_miou_le_mdice_and_spatial_permutation_invariance():
    rng = np.random.default_rng(6)
    pairs = [(rng.random((6, 6)), (rng.random((6, 6)) < 0.5).astype(float))
             for _ in range(8)]
    assert miou(pairs) <= mdice(pairs) + 1e-12
    perm = rng.permutation(36)
    permuted = [(p.ravel()[perm].reshape(6, 6), g.ravel()[perm].reshape(6, 6))
                for p, g in pairs]
    assert miou(permuted) == pytest.approx(miou(pairs))
    assert mdice(permuted) == pytest.approx(mdice(pairs))
    assert mae(permuted) == pytest.approx(mae(pairs))
    assert np.allclose([weighted_fbeta(p, g) for p, g in permuted],
                       [weighted_fbeta(p, g) for p, g in pairs])


def test_empty_dataset_rejected():
    with pytest.raises(DataError):
        report_for_pairs([])


def test_csv_report_format(tmp_path):
    rep = MetricReport(mDice=0.9, mIoU=0.8, MAE=0.05, wFbeta=0.85,
                       Smeasure=0.87, Emeasure=0.91, n_samples=12)
    out = tmp_path / "report.csv"
    write_report_csv(out, [("synthetic", "mugennet", rep)])
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["dataset", "model", "n", "mDice", "mIoU", "MAE",
                       "wFbeta", "Smeasure", "Emeasure"]
    assert rows[1][:3] == ["synthetic", "mugennet", "12"]
    assert rows[1][3] == "0.900000"


def test_binarize_threshold():
    p = np.array([0.49, 0.5, 0.51])
    assert np.array_equal(binarize(p), [0.0, 1.0, 1.0])
