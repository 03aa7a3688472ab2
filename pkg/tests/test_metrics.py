import numpy as np
import pytest

from oracles import aupr_oracle, fmax_oracle, random_instance
from sao import metrics


def test_fmax_perfect_and_zero():
    labels = np.array([[1, 0, 1], [0, 1, 0]])
    assert metrics.fmax(labels.astype(float), labels) == 1.0
    assert metrics.fmax(np.zeros((2, 3)), labels) == 0.0


def test_fmax_hand_case():
    scores = np.array([[0.9, 0.4, 0.05], [0.3, 0.8, 0.6]])
    labels = np.array([[1, 0, 1], [0, 1, 0]])
    # t in (0.6, 0.8]: protein 0 calls {0} (1/1), protein 1 calls {1} (1/1);
    # recall = (1/2 + 1) / 2 = 0.75, F = 2 * 0.75 / 1.75
    assert metrics.fmax(scores, labels) == pytest.approx(6 / 7, abs=1e-15)
    assert metrics.fmax(scores, labels) == pytest.approx(fmax_oracle(scores, labels, metrics.FMAX_GRID), abs=1e-15)


def test_fmax_errors():
    with pytest.raises(metrics.NoPositiveLabels):
        metrics.fmax(np.ones((2, 2)), np.zeros((2, 2)))
    with pytest.raises(metrics.MetricError):
        metrics.fmax(np.ones((2, 2)), np.ones((2, 3)))


def test_aupr_examples():
    labels = np.array([[1, 0, 1, 0]])
    assert metrics.aupr(np.array([[0.9, 0.1, 0.8, 0.2]]), labels) == 1.0
    for p_frac, labs in ((0.5, labels), (0.25, np.array([[1, 0, 0, 0]]))):
        assert metrics.aupr(np.full((1, 4), 0.3), labs) == pytest.approx(p_frac, abs=1e-15)


def test_aupr_hand_case():
    # six pairs: scores 0.9 (+), 0.8 (-), 0.8 (+), 0.5 (+), 0.3 (-), 0.1 (+)
    scores = np.array([[0.9, 0.8, 0.8], [0.5, 0.3, 0.1]])
    labels = np.array([[1, 0, 1], [1, 0, 1]])
    # points: (R 1/4, P 1), (R 2/4, P 2/3), (R 3/4, P 3/4), (R 3/4, P 3/5), (R 1, P 4/6)
    want = 0.25 * 1 + 0.25 * 2 / 3 + 0.25 * 3 / 4 + 0.0 + 0.25 * 4 / 6
    assert metrics.aupr(scores, labels) == pytest.approx(want, abs=1e-15)
    assert metrics.aupr(scores, labels) == pytest.approx(aupr_oracle(scores, labels), abs=1e-15)


def test_aupr_degenerate():
    with pytest.raises(metrics.DegenerateLabels):
        metrics.aupr(np.random.default_rng(0).random((2, 2)), np.ones((2, 2)))
    with pytest.raises(metrics.DegenerateLabels):
        metrics.aupr(np.random.default_rng(0).random((2, 2)), np.zeros((2, 2)))


def test_random_instances_match_oracles():
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 100:
        scores, labels = random_instance(rng)
        # same thresholds and counts; only the summation order differs
        assert metrics.fmax(scores, labels) == pytest.approx(fmax_oracle(scores, labels, metrics.FMAX_GRID), abs=1e-12)
        if labels.all():
            continue
        assert metrics.aupr(scores, labels) == pytest.approx(aupr_oracle(scores, labels), abs=1e-12)
        checked += 1


def test_monotone_transform_invariance():
    rng = np.random.default_rng(5)
    for _ in range(20):
        scores, labels = random_instance(rng)
        if labels.all():
            continue
        warped = scores**3 * 0.5 + 0.1
        assert metrics.aupr(warped, labels) == metrics.aupr(scores, labels)
        # the continuous-threshold Fmax (all distinct scores as thresholds)
        # is invariant under any strictly increasing map
        cont = fmax_oracle(scores, labels, np.unique(scores))
        assert fmax_oracle(warped, labels, np.unique(warped)) == pytest.approx(cont, abs=1e-15)


def test_metrics_in_unit_interval():
    rng = np.random.default_rng(6)
    for _ in range(30):
        scores, labels = random_instance(rng)
        assert 0.0 <= metrics.fmax(scores, labels) <= 1.0
        if not labels.all():
            assert 0.0 <= metrics.aupr(scores, labels) <= 1.0
