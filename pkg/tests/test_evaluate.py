import csv

import numpy as np
import pytest

from acr.evaluate import AccuracyMatrix, acc, bwt, corrupted_test_sets, eval_task, iid_row, ood_accuracy_matrix


class Fixed:
    """Stub model predicting ``y = round(x[:, 0])`` over known classes."""

    def __init__(self, classes):
        self.classes_ = np.asarray(classes)

    def predict(self, X):
        return np.rint(np.asarray(X)[:, 0]).astype(int)


def test_eval_task_examples():
    X = np.array([[0.0], [1.0], [1.0], [0.0]])
    assert eval_task(Fixed([0, 1]), X, [0, 1, 1, 0]) == 1.0
    assert eval_task(Fixed([0, 1]), X, [0, 1, 0, 0]) == 0.75
    with pytest.raises(ValueError):
        eval_task(Fixed([0, 1]), X, [0, 1, 2, 0])
    with pytest.raises(ValueError):
        eval_task(Fixed([0]), X[:0], [])


def test_acc_bwt_hand_example():
    m = AccuracyMatrix(2)
    m.set(0, 0, 0.9)
    m.set(1, 0, 0.6)
    m.set(1, 1, 0.8)
    assert acc(m) == 0.7
    assert bwt(m) == -0.3


def test_metrics_match_float_oracle_on_random_matrices(rng):
    for _ in range(50):
        T = int(rng.integers(2, 8))
        a = np.tril(rng.integers(0, 201, (T, T)) / 200)
        a[np.triu_indices(T, 1)] = np.nan
        m = AccuracyMatrix.from_array(a)
        assert acc(m) == pytest.approx(a[-1].mean(), abs=1e-15)
        assert bwt(m) == pytest.approx((a[-1, :-1] - np.diag(a)[:-1]).mean(), abs=1e-15)


def test_bwt_no_forgetting_and_single_task():
    m = AccuracyMatrix.from_array([[0.8, np.nan], [0.8, 0.5]])
    assert bwt(m) == 0.0
    one = AccuracyMatrix.from_array([[0.4]])
    assert acc(one) == 0.4 and bwt(one) is None


def test_matrix_validation():
    m = AccuracyMatrix(3)
    with pytest.raises(IndexError):
        m.set(0, 1, 0.5)
    with pytest.raises(ValueError):
        m.set(1, 0, 1.2)
    with pytest.raises(ValueError):
        acc(m)
    with pytest.raises(ValueError):
        AccuracyMatrix(0)


def test_matrix_csv(tmp_path):
    m = AccuracyMatrix.from_array([[0.5, np.nan], [0.25, 1.0]])
    m.to_csv(tmp_path / "a.csv")
    rows = list(csv.reader(open(tmp_path / "a.csv")))
    assert rows == [["stage", "task_0", "task_1"], ["0", "0.5", ""], ["1", "0.25", "1.0"]]
    assert m.stage_accuracy() == [0.5, 0.625]


def test_iid_row_covers_seen_tasks():
    tests = [(np.array([[0.0]]), np.array([0])), (np.array([[1.0]]), np.array([1])), (None, None)]
    assert iid_row(Fixed([0, 1]), tests, 1) == [1.0, 1.0]


def test_corrupted_sets_deterministic_and_identity(rng):
    tests = [(rng.random((3, 16)), np.zeros(3, int)) for _ in range(2)]
    a = corrupted_test_sets(tests, "gaussian-noise", 2, 4, seed=1)
    b = corrupted_test_sets(tests, "gaussian-noise", 2, 4, seed=1)
    assert all(x[0].tobytes() == y[0].tobytes() for x, y in zip(a, b))
    ident = corrupted_test_sets(tests, "gaussian-noise", 0, 4, seed=1)
    assert all(np.array_equal(x[0], t[0]) for x, t in zip(ident, tests))


def test_ood_matrix_is_uniform_average():
    # the stub reads pixel 0; two specs with different effects on it
    X = np.array([[0.0, 0.5, 0.5, 0.5], [1.0, 0.0, 0.0, 0.0]] * 2)
    tests = [(X, np.array([0, 1, 0, 1]))]
    specs = [("pixelate", 0), ("defocus-blur", 0)]
    agg, per = ood_accuracy_matrix([Fixed([0, 1])], tests, specs, side=2)
    assert agg.alpha[0, 0] == 1.0
    assert set(per) == set(specs)
    specs = [("pixelate", 0), ("pixelate", 5)]  # side 2 at 0.5 averages the whole image
    agg, per = ood_accuracy_matrix([Fixed([0, 1])], tests, specs, side=2)
    vals = [per[s].alpha[0, 0] for s in specs]
    assert agg.alpha[0, 0] == pytest.approx(np.mean(vals))
    assert vals == [1.0, 0.5]
    with pytest.raises(ValueError):
        ood_accuracy_matrix([Fixed([0, 1])], tests, [], side=2)
