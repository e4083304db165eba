from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crisis_concerns.metrics import confusion_matrix, evaluate_predictions, f1_score, precision, recall


def test_formula_fixtures():
    assert precision(9, 1) == pytest.approx(0.9)
    assert recall(9, 3) == pytest.approx(0.75)
    # harmonic mean worked exactly
    oracle = float(2 * Fraction(9, 10) * Fraction(3, 4) / (Fraction(9, 10) + Fraction(3, 4)))
    assert f1_score(0.9, 0.75) == pytest.approx(oracle, abs=1e-12)
    assert round(f1_score(0.9, 0.75), 4) == 0.8182


def test_reported_scores_harmonic_mean():
    assert round(f1_score(0.974, 0.986), 4) == 0.9800


def test_zero_denominators():
    assert precision(0, 0) == 0.0
    assert recall(0, 0) == 0.0
    assert f1_score(0.0, 0.0) == 0.0


def test_perfect_predictions():
    y = [0, 1, 2, 1, 0]
    rep = evaluate_predictions(y, y, ["a", "b", "c"])
    assert rep.accuracy == 1.0
    assert rep.f1 == [1.0, 1.0, 1.0]


def test_confusion_rows_are_truth():
    cm = confusion_matrix([0, 0, 1], [1, 0, 1], 2)
    assert cm.tolist() == [[1, 1], [0, 1]]


def test_empty_split_rejected():
    with pytest.raises(ValueError):
        evaluate_predictions([], [], ["a", "b"])


labels = st.lists(st.integers(0, 3), min_size=1, max_size=60)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_report_invariants(data):
    y = data.draw(labels)
    p = data.draw(st.lists(st.integers(0, 3), min_size=len(y), max_size=len(y)))
    rep = evaluate_predictions(y, p, list("abcd"))
    assert rep.confusion.sum() == len(y)
    assert rep.accuracy == pytest.approx(np.mean(np.array(y) == np.array(p)))
    for v in (*rep.precision, *rep.recall, *rep.f1):
        assert 0.0 <= v <= 1.0
    for k in range(4):
        tp, fp, fn, tn = rep.counts(k)
        assert tp + fp + fn + tn == len(y)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_binary_micro_f1_equals_accuracy(data):
    y = data.draw(st.lists(st.integers(0, 1), min_size=1, max_size=50))
    p = data.draw(st.lists(st.integers(0, 1), min_size=len(y), max_size=len(y)))
    rep = evaluate_predictions(y, p, ["Male", "Female"])
    assert rep.micro_f1() == pytest.approx(rep.accuracy)
