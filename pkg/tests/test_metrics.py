import numpy as np
import pytest

from finesparse.attention import BlockMask
from finesparse.masks import topk_select
from finesparse.metrics import (
    VarianceReport,
    intra_block_variance,
    realized_sparsity,
    recall_curve,
)


def test_variance_examples(rng):
    assert intra_block_variance(np.ones((8, 3)), 4) == 0.0
    assert intra_block_variance(rng.standard_normal((7, 3)), 1) == 0.0
    x = np.array([[0.0], [2.0], [1.0], [3.0]])
    assert intra_block_variance(x, 2) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        intra_block_variance(x, 0)


def test_variance_short_trailing_block():
    x = np.array([[0.0], [2.0], [5.0]])
    assert intra_block_variance(x, 2) == pytest.approx(0.5)


def test_variance_shift_invariant(rng):
    x = rng.standard_normal((40, 5))
    v = intra_block_variance(x, 8)
    assert intra_block_variance(x + rng.standard_normal(5) * 10, 8) == pytest.approx(v)


def test_variance_report_row():
    assert VarianceReport("raster", 1.5, 2.5, 64).csv_row() == ("raster", 64, 1.5, 2.5)


def test_realized_sparsity():
    assert realized_sparsity(BlockMask.full(16, 4)) == 0.0
    assert realized_sparsity(BlockMask(np.eye(5, dtype=bool), 3)) == pytest.approx(0.8)
    s = np.random.default_rng(0).random((10, 10))
    assert realized_sparsity(topk_select(s, 0.2, 8)) == pytest.approx(0.8)


def test_recall_curve():
    rows = [
        {"step": "1", "recall": "0.5"},
        {"step": 0, "recall": 1.0},
        {"step": 1, "recall": 0.7},
    ]
    got = recall_curve(rows)
    assert got[0] == (0, 1.0, 0.0, 1)
    step, mean, std, count = got[1]
    assert (step, count) == (1, 2)
    assert mean == pytest.approx(0.6) and std == pytest.approx(np.std([0.5, 0.7], ddof=1))


def test_recall_curve_missing_recall():
    with pytest.raises(ValueError):
        recall_curve([{"step": 0, "recall": ""}])
    with pytest.raises(ValueError):
        recall_curve([{"step": 0, "recall": None}])


def test_recall_curve_flat_on_frozen_tokens():
    rows = [{"step": t, "recall": 0.42} for t in range(5) for _ in range(3)]
    assert {m for _, m, _, _ in recall_curve(rows)} == {0.42}
