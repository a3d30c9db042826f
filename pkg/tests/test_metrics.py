import numpy as np
import pytest

from megacl.metrics import (AccuracyMatrix, MissingEntriesError, UndefinedMetricError, accuracy_curve,
                            average_accuracy, forgetting, lca, learning_curve)


def matrix_from(finals: dict, batches=5):
    """finals maps (k, j) -> end-of-task accuracy."""
    m = AccuracyMatrix()
    for (k, j), acc in finals.items():
        m.set_batches(k, batches)
        m.record(k, batches, j, acc)
    return m


def test_average_accuracy_examples():
    assert average_accuracy(matrix_from({(2, 1): 0.8, (2, 2): 0.85}), 2) == 0.825
    ones = matrix_from({(3, j): 1.0 for j in (1, 2, 3)})
    assert average_accuracy(ones, 3) == 1.0
    assert average_accuracy(matrix_from({(1, 1): 0.37}), 1) == 0.37


def test_forgetting_examples():
    assert forgetting(matrix_from({(1, 1): 0.9, (2, 1): 0.8, (2, 2): 0.7}), 2) == pytest.approx(0.1, abs=1e-15)
    m = matrix_from({(1, 1): 0.9, (2, 1): 0.7, (3, 1): 0.8, (2, 2): 0.9, (3, 2): 0.9, (3, 3): 0.5})
    assert forgetting(m, 3) == pytest.approx(0.05, abs=1e-15)


def test_forgetting_non_positive_when_nothing_drops():
    m = matrix_from({(1, 1): 0.5, (2, 1): 0.6, (2, 2): 0.4, (3, 1): 0.7, (3, 2): 0.8, (3, 3): 0.9})
    assert forgetting(m, 3) <= 0
    frozen = matrix_from({(k, j): 0.6 for k in (1, 2, 3) for j in range(1, k + 1)})
    assert forgetting(frozen, 3) == 0.0


def test_forgetting_needs_two_tasks():
    with pytest.raises(UndefinedMetricError):
        forgetting(matrix_from({(1, 1): 0.9}), 1)


def test_lca_examples():
    m = AccuracyMatrix()
    for k, accs in ((1, (0.1, 0.5)), (2, (0.2, 0.6))):
        m.set_batches(k, 10)
        for b, a in enumerate(accs):
            m.record(k, b, k, a)
    assert learning_curve(m, 1, 2) == pytest.approx([0.15, 0.55], abs=1e-15)
    assert lca(m, 1, 2) == pytest.approx(0.35, abs=1e-15)
    assert lca(m, 0, 2) == learning_curve(m, 0, 2)[0]


def test_lca_all_ones():
    m = AccuracyMatrix()
    for k in (1, 2, 3):
        m.set_batches(k, 20)
        for b in range(11):
            m.record(k, b, k, 1.0)
    assert lca(m, 10, 3) == 1.0


def test_lca_short_task_uses_end_of_task_accuracy():
    m = AccuracyMatrix()
    m.set_batches(1, 2)
    for b, a in enumerate((0.2, 0.5, 0.9)):
        m.record(1, b, 1, a)
    assert learning_curve(m, 4, 1) == [0.2, 0.5, 0.9, 0.9, 0.9]


def test_missing_entries_listed():
    m = matrix_from({(2, 1): 0.8})
    with pytest.raises(MissingEntriesError) as err:
        average_accuracy(m, 2)
    assert (2, 5, 2) in err.value.missing
    with pytest.raises(MissingEntriesError):
        lca(m, 1, 2)


def test_accuracy_range_enforced():
    with pytest.raises(ValueError):
        AccuracyMatrix().record(1, 0, 1, 1.2)


def random_matrix(rng, T=6, beta=10):
    m = AccuracyMatrix()
    for k in range(1, T + 1):
        n = int(rng.integers(beta + 1, 40))
        m.set_batches(k, n)
        for b in range(beta + 1):
            m.record(k, b, k, float(rng.uniform()))
        for j in range(1, k + 1):
            m.record(k, n, j, float(rng.uniform()))
    return m


def naive_metrics(entries, batches, T, beta):
    """Direct transcription of the definitions, summed left to right."""
    fin = {(k, j): entries[(k, batches[k], j)] for k in range(1, T + 1) for j in range(1, k + 1)}
    A = sum(fin[(T, j)] for j in range(1, T + 1)) / T
    F = sum(max(fin[(l, j)] for l in range(j, T)) - fin[(T, j)] for j in range(1, T)) / (T - 1)
    Z = [sum(entries[(k, b, k)] for k in range(1, T + 1)) / T for b in range(beta + 1)]
    return A, F, sum(Z) / (beta + 1)


def test_brute_force_recomputation():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m = random_matrix(rng)
        A, F, L = naive_metrics(m.entries, m.per_task_batches, 6, 10)
        assert average_accuracy(m, 6) == pytest.approx(A, abs=1e-15)
        assert forgetting(m, 6) == pytest.approx(F, abs=1e-15)
        assert lca(m, 10, 6) == pytest.approx(L, abs=1e-15)


def test_csv_round_trip_bit_identical(tmp_path):
    m = random_matrix(np.random.default_rng(1))
    path = tmp_path / "acc.csv"
    text = m.to_csv(path)
    assert text.splitlines()[0] == "k,i,j,accuracy"
    assert text.splitlines()[1].startswith("0,0,0,")  # zero-based task indices on disk
    back = AccuracyMatrix.from_csv(path)
    assert back.entries == m.entries
    assert back.per_task_batches == m.per_task_batches
    for fn in (lambda x: average_accuracy(x, 6), lambda x: forgetting(x, 6), lambda x: lca(x, 10, 6),
               lambda x: accuracy_curve(x, 6)):
        assert fn(back) == fn(m)
    assert back.to_csv() == text


def test_metric_ranges():
    rng = np.random.default_rng(2)
    for _ in range(20):
        m = random_matrix(rng)
        assert 0 <= average_accuracy(m, 6) <= 1
        assert -1 <= forgetting(m, 6) <= 1
        assert 0 <= lca(m, 10, 6) <= 1
