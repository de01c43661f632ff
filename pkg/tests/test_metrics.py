import json
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from tarspatial.errors import InvalidInputError, InvalidIntervalError
from tarspatial.metrics import (
    ScoreCard,
    UndefinedScoreWarning,
    crps_empirical,
    frobenius_distance,
    interval_scores,
    point_scores,
    score_predictions,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_point_scores_identity():
    t = np.array([0.3, 1.2, -2.0])
    assert point_scores(t, t) == (pytest.approx(1.0), 0.0, 0.0)


def test_point_scores_constant_prediction():
    with pytest.warns(UndefinedScoreWarning):
        r2, mae, rmse = point_scores([0, 2], [1, 1])
    assert np.isnan(r2) and mae == 1.0 and rmse == 1.0


def test_point_scores_affine_invariance():
    t = np.random.default_rng(0).normal(size=50)
    # equal up to floating-point rounding of the centring step
    assert point_scores(t, 2 * t + 3)[0] == pytest.approx(1.0, abs=1e-12)


def test_point_scores_errors():
    with pytest.raises(InvalidInputError):
        point_scores([1.0], [1.0])
    with pytest.raises(InvalidInputError):
        point_scores([1.0, 2.0], [1.0])


@settings(max_examples=100)
@given(st.lists(st.tuples(finite, finite), min_size=2, max_size=40))
def test_mae_never_exceeds_rmse(pairs):
    t, p = map(np.array, zip(*pairs))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UndefinedScoreWarning)
        _, mae, rmse = point_scores(t, p)
    assert mae <= rmse * (1 + 1e-12) + 1e-12


def test_crps_examples():
    assert crps_empirical([2.0, 2.0, 2.0], 2.0) == 0.0
    assert crps_empirical([0.0, 1.0], 0.0) == pytest.approx(0.25)
    assert crps_empirical([0.0, 1.0], 10.0) == pytest.approx(9.25)
    with pytest.raises(InvalidInputError):
        crps_empirical([1.0], 0.0)


@settings(max_examples=60)
@given(st.lists(finite, min_size=2, max_size=30), finite)
def test_crps_matches_double_sum(xs, y):
    x = np.array(xs)
    brute = np.mean(np.abs(x - y)) - np.abs(x[:, None] - x[None, :]).sum() / (2 * x.size ** 2)
    assert crps_empirical(x, y) == pytest.approx(max(brute, 0.0), rel=1e-9, abs=1e-9)


@settings(max_examples=60)
@given(st.lists(finite, min_size=2, max_size=30), finite, finite, st.floats(0.01, 100))
def test_crps_translation_and_scale(xs, y, shift, scale):
    x = np.array(xs)
    base = crps_empirical(x, y)
    assert crps_empirical(x + shift, y + shift) == pytest.approx(base, rel=1e-7, abs=1e-6)
    assert crps_empirical(scale * x, scale * y) == pytest.approx(scale * base, rel=1e-7, abs=1e-6)
    assert base >= 0


def test_interval_examples():
    s, c = interval_scores([0.0, 1.0], [1.0, 3.0], [0.5, 2.0], 0.05)
    assert s == pytest.approx(1.5) and c == 1.0
    s, c = interval_scores([0.0], [0.0], [1.0], 0.05)
    assert s == pytest.approx(40.0) and c == 0.0
    with pytest.raises(InvalidIntervalError):
        interval_scores([1.0], [0.0], [0.5], 0.05)
    with pytest.raises(InvalidInputError):
        interval_scores([0.0], [1.0], [0.5], 0.0)


@settings(max_examples=60)
@given(finite, st.floats(0.0, 10), st.floats(0.001, 10), st.floats(0.01, 0.5))
def test_widening_covering_interval_increases_score(y, half, extra, alpha):
    lo, hi = y - half, y + half
    s1, _ = interval_scores([lo], [hi], [y], alpha)
    s2, _ = interval_scores([lo - extra], [hi], [y], alpha)
    assume(s2 - s1 > 1e-9 * max(1.0, abs(y)))
    assert s2 > s1


def test_frobenius_examples():
    K = np.random.default_rng(1).normal(size=(4, 4))
    assert frobenius_distance(K, K) == 0.0
    assert frobenius_distance(K + np.eye(4), K) == pytest.approx(2.0)
    L = K.T
    assert frobenius_distance(2 * K, 2 * L) == pytest.approx(2 * frobenius_distance(K, L))
    with pytest.raises(InvalidInputError):
        frobenius_distance(np.eye(2), np.eye(3))


def test_scorecard_invariants_and_json(tmp_path):
    rng = np.random.default_rng(2)
    truth = rng.normal(size=40)
    samples = truth + rng.normal(size=(200, 40))
    lower, upper = np.quantile(samples, [0.025, 0.975], axis=0)
    card = score_predictions(truth, samples.mean(0), samples, lower, upper, 0.05)
    assert isinstance(card, ScoreCard)
    assert card.mae <= card.rmse and 0 <= card.cvg <= 1 and card.crps >= 0 and card.int_score >= 0
    card.write_json(tmp_path / "s.json", {"prediction_time_sec": 0.1})
    d = json.loads((tmp_path / "s.json").read_text())
    assert d["n_scored"] == 40 and "prediction_time_sec" in d
