import json

import numpy as np
import pytest

from cmpcal import InvalidArgumentError
from cmpcal.calibration import (CalibrationReport, Prediction, ace, bin_index,
                                confidence_histograms, ece, mce, predictions_from_probs, report)
from oracles import brute_force_ace, brute_force_ece, brute_force_mce

# (confidence, correct) pairs from the worked example
FOUR = [Prediction(0.9, 1, 1), Prediction(0.8, 0, 1), Prediction(0.6, 0, 1), Prediction(0.3, 2, 2)]


def _random_preds(rng, n, c=5):
    conf = rng.uniform(1 / c, 1, size=n)
    if rng.random() < 0.3:
        conf = np.round(conf, 1)  # exercise bin edges and ties
    correct = rng.random(n) < conf
    return [Prediction(float(v), 0, 0 if ok else 1) for v, ok in zip(conf, correct)]


def test_worked_example():
    assert ece(FOUR, 2) == 0.5
    assert mce(FOUR, 2) == 0.7
    # 0.3 + 0.6 and 0.8 + 0.9 are inexact in binary, so only ulp-level agreement is possible
    assert ace(FOUR, 2) == pytest.approx(0.2, abs=1e-15)
    assert confidence_histograms(FOUR, 2) == ([1, 1], [0, 2])


def test_single_prediction():
    assert ece([Prediction(0.7, 1, 1)], 10) == pytest.approx(0.3, abs=1e-15)


def test_perfect_predictions():
    preds = [Prediction(1.0, k % 3, k % 3) for k in range(10)]
    assert ece(preds) == 0 and mce(preds) == 0 and ace(preds, 5) == 0
    assert confidence_histograms(preds, 4)[1] == [0, 0, 0, 0]


def test_bin_edges_half_open():
    assert list(bin_index(np.array([0.0, 0.4999999, 0.5, 1.0]), 2)) == [0, 0, 1, 1]
    assert confidence_histograms([Prediction(0.5, 0, 0)], 2) == ([0, 1], [0, 0])
    rng = np.random.default_rng(0)
    for m in range(1, 30):
        idx = bin_index(rng.uniform(0, 1, 1000), m)
        assert idx.min() >= 0 and idx.max() < m


def test_ace_rules():
    for pred, gap in ((Prediction(0.8, 0, 0), 0.2), (Prediction(0.8, 1, 0), 0.8)):
        for m in (1, 2, 4):
            assert ace([pred] * 4, m) == pytest.approx(gap, abs=1e-15)
    rng = np.random.default_rng(1)
    preds = _random_preds(rng, 17)
    singleton = np.mean([abs(float(p.correct) - p.confidence) for p in preds])
    assert ace(preds, 17) == pytest.approx(singleton, abs=1e-15)
    with pytest.raises(InvalidArgumentError):
        ace(preds, 18)


def test_empty_inputs_rejected():
    for fn in (ece, ace, mce, confidence_histograms, report):
        with pytest.raises(InvalidArgumentError):
            fn([], 5)
    with pytest.raises(InvalidArgumentError):
        ece(FOUR, 0)


def test_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(300):
        n = int(rng.integers(1, 201))
        m = int(rng.integers(1, 21))
        preds = _random_preds(rng, n)
        assert ece(preds, m) == brute_force_ece(preds, m)
        assert mce(preds, m) == brute_force_mce(preds, m)
        if m <= n:
            assert ace(preds, m) == brute_force_ace(preds, m)


def test_ece_at_most_mce_and_permutation_invariant():
    rng = np.random.default_rng(3)
    for _ in range(300):
        n = int(rng.integers(1, 100))
        preds = [Prediction(float(c), 0, int(rng.random() < 0.5))
                 for c in rng.permutation(rng.uniform(0.2, 1, n))]
        m = int(rng.integers(1, 20))
        assert ece(preds, m) <= mce(preds, m) + 1e-15
        shuffled = [preds[i] for i in rng.permutation(n)]
        assert ece(shuffled, m) == pytest.approx(ece(preds, m), abs=1e-14)
        assert mce(shuffled, m) == pytest.approx(mce(preds, m), abs=1e-14)
        if m <= n:
            assert ace(shuffled, m) == pytest.approx(ace(preds, m), abs=1e-14)


def test_calibrated_synthetic_set_has_small_ece():
    rng = np.random.default_rng(4)
    conf = rng.uniform(0.25, 1, 100_000)
    correct = rng.random(100_000) < conf
    preds = [Prediction(float(c), 1, 1 if ok else 0) for c, ok in zip(conf, correct)]
    assert ece(preds, 15) < 0.02


def test_report_consistency():
    rep = report(FOUR, 2)
    assert (rep.ece, rep.mce, rep.n, rep.m) == (0.5, 0.7, 4, 2)
    assert rep.ace == pytest.approx(0.2, abs=1e-15)
    assert rep.ece_from_bins() == rep.ece and rep.mce_from_bins() == rep.mce
    assert sum(rep.correct_hist) + sum(rep.incorrect_hist) == rep.n
    assert report(FOUR, 2) == rep


def test_report_empty_bins_skipped():
    preds = [Prediction(0.95, 0, 0)] * 3 + [Prediction(0.96, 1, 0)]
    rep = report(preds, 15)
    assert sum(b.count == 0 for b in rep.bins) == 14
    assert rep.ece == pytest.approx(abs(0.75 - 0.9525), abs=1e-12)
    assert rep.mce == rep.ece


def test_report_serialization():
    rep = report(FOUR, 2)
    d = json.loads(rep.to_json())
    assert list(d) == ["ece", "ace", "mce", "n", "m", "bins", "correct_hist", "incorrect_hist"]
    assert list(d["bins"][0]) == ["lower", "upper", "count", "mean_confidence", "accuracy"]
    assert CalibrationReport.from_dict(d) == rep
    lines = rep.to_csv().splitlines()
    assert lines[0] == "bin_lower,bin_upper,count,mean_confidence,accuracy,correct_count,incorrect_count"
    assert len(lines) == 1 + rep.m


def test_predictions_from_probs_uses_max_probability():
    preds = predictions_from_probs([[0.2, 0.7, 0.1], [0.5, 0.25, 0.25]], [0, 0])
    assert preds[0] == Prediction(0.7, 1, 0)
    assert preds[1] == Prediction(0.5, 0, 0)
