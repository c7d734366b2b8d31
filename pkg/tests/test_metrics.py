import numpy as np
import pytest

from fwdprompt.metrics import (
    AccuracyMatrix,
    MetricsReport,
    MissingEntryError,
    average_accuracy,
    compute_report,
    forgetting,
    forward_transfer,
    rank_experiment,
)


def matrix(rows, ref=None):
    return AccuracyMatrix.from_list(rows, ref)


def test_average_examples():
    acc = matrix([[0.9, None], [0.8, 0.6]])
    assert average_accuracy(acc, 1) == 0.9
    assert average_accuracy(acc, 2) == pytest.approx(0.7, abs=1e-15)
    const = matrix([[0.4, None, None], [0.4, 0.4, None], [0.4, 0.4, 0.4]])
    assert all(average_accuracy(const, t) == pytest.approx(0.4, abs=1e-15) for t in (1, 2, 3))


def test_average_missing_entry():
    with pytest.raises(MissingEntryError):
        average_accuracy(matrix([[0.9, None], [None, 0.6]]), 2)


def test_forgetting_examples():
    assert forgetting(matrix([[0.9, None], [0.7, 0.5]]), 2) == pytest.approx(0.2, abs=1e-15)
    rising = matrix([[0.5, None, None], [0.6, 0.5, None], [0.7, 0.6, 0.5]])
    assert forgetting(rising, 3) <= 0
    flat = matrix([[0.5, None, None], [0.5, 0.3, None], [0.5, 0.3, 0.9]])
    assert forgetting(flat, 3) == 0.0
    with pytest.raises(ValueError):
        forgetting(flat, 1)


def test_forgetting_single_column():
    acc = matrix([[0.9, None, None], [0.95, None, None], [0.6, None, None]])
    assert forgetting(acc, 3) == pytest.approx(0.95 - 0.6, abs=1e-15)


def test_forward_transfer_table_values():
    # accuracies from the published comparison table, in percent
    gqa = matrix([[None] * 3 + [None]] * 3 + [[None, None, None, 60.52 / 100]], [None, None, None, 59.19 / 100])
    assert 100 * forward_transfer(gqa, gqa.direct_reference, 4) == pytest.approx(1.33, abs=1e-9)
    vizwiz = matrix([[62.79 / 100]], [64.58 / 100])
    assert 100 * forward_transfer(vizwiz, vizwiz.direct_reference, 1) == pytest.approx(-1.79, abs=1e-9)


def test_forward_transfer_zero_and_missing():
    acc = matrix([[0.8]], [0.8])
    assert forward_transfer(acc, acc.direct_reference, 1) == 0.0
    with pytest.raises(MissingEntryError):
        forward_transfer(acc, None, 1)
    with pytest.raises(MissingEntryError):
        forward_transfer(matrix([[0.8]], [None]), [None], 1)


def test_matrix_contracts():
    acc = AccuracyMatrix.empty(3)
    with pytest.raises(ValueError):
        acc.set(1, 2, 0.5)
    with pytest.raises(ValueError):
        acc.set(2, 1, 1.5)
    acc.set(2, 1, 0.25)
    assert acc.get(2, 1) == 0.25
    with pytest.raises(MissingEntryError):
        acc.get(3, 3)


def oracle(rows, ref):
    """Straight-from-formula metrics on a fully populated lower-triangular list of lists."""
    T = len(rows)
    avg = {t: sum(rows[t - 1][:t]) / t for t in range(1, T + 1)}
    fgt = {}
    for t in range(2, T + 1):
        total = 0.0
        for i in range(1, t):
            best = max(rows[j - 1][i - 1] for j in range(i, t))
            total += best - rows[t - 1][i - 1]
        fgt[t] = total / (t - 1)
    fwd = {t: rows[t - 1][t - 1] - ref[t - 1] for t in range(1, T + 1)}
    return avg, fgt, fwd


def test_metrics_agree_with_formula_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        T = int(rng.integers(1, 8))
        rows = [[float(rng.uniform()) if i <= t else None for i in range(T)] for t in range(T)]
        ref = [float(x) for x in rng.uniform(size=T)]
        rep = compute_report(matrix(rows, ref))
        avg, fgt, fwd = oracle(rows, ref)
        for mine, theirs in ((rep.average, avg), (rep.forgetting, fgt), (rep.forward, fwd)):
            assert set(mine) == set(theirs)
            for k in theirs:
                assert abs(mine[k] - theirs[k]) <= 1e-12


def test_report_skips_absent_forward_transfer():
    rep = compute_report(matrix([[0.5, None], [0.4, 0.6]]))
    assert rep.forward == {}
    again = MetricsReport.from_dict(rep.to_dict())
    assert again.average == rep.average and again.forgetting == rep.forgetting


def test_rank_experiment_table():
    rng = np.random.default_rng(1)
    emb = rng.standard_normal((50, 6))
    table = rank_experiment({"Initial": {1: emb}, "Other": {1: emb[:, :1] @ rng.standard_normal((1, 6))}})
    assert table[1]["Initial"] == 6 and table[1]["Other"] == 1
    assert rank_experiment({"Initial": {1: emb}}, 1.0)[1]["Initial"] == 6
