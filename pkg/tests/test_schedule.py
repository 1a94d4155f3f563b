import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finesparse.attention import attention_recall, attention_scores, full_attention
from finesparse.curve import GridDims, apply_permutation, make_order, raster_order
from finesparse.experiments import expected_updates
from finesparse.masks import ScoringParams, build_mask
from finesparse.schedule import (
    FrozenWorkload,
    MaskCache,
    SparsitySchedule,
    budget_at,
    run_step,
    run_trajectory,
    should_update,
)
from finesparse.synthetic import FieldParams, TrajectoryWorkload, gen_video_field

DIMS = GridDims(2, 4, 8)  # 64 tokens
PARAMS = ScoringParams(8, 2)


def tokens(seed=0, n=64, d=8):
    r = np.random.default_rng(seed)
    return tuple(r.standard_normal((n, d)).astype(np.float32) for _ in range(3))


def test_default_budgets():
    s = SparsitySchedule()
    assert budget_at(s, 5) is None
    assert (budget_at(s, 13), budget_at(s, 26), budget_at(s, 40)) == (0.3, 0.2, 0.1)
    budgets = s.budgets()
    assert budgets.count(None) == 12 and s.first_sparse_step == 12
    sparse = [b for b in budgets if b is not None]
    assert len(sparse) == 38
    assert np.mean(sparse) == pytest.approx(0.2, abs=1e-12)
    # three contiguous non-increasing phases
    assert sparse == sorted(sparse, reverse=True)
    assert sorted(set(sparse), reverse=True) == [0.3, 0.2, 0.1]


def test_budget_out_of_range():
    with pytest.raises(ValueError):
        budget_at(SparsitySchedule(), 50)
    with pytest.raises(ValueError):
        budget_at(SparsitySchedule(), -1)


@pytest.mark.parametrize("kwargs", [
    dict(total_steps=0), dict(update_interval=0), dict(phase_budgets=(0.3, 0.0)),
    dict(phase_budgets=(1.5,)), dict(warmup_fraction=0.5, phase_fraction=0.25),
    dict(warmup_fraction=1.2),
])
def test_schedule_validation(kwargs):
    with pytest.raises(ValueError):
        SparsitySchedule(**kwargs)


@settings(max_examples=80, deadline=None)
@given(t=st.integers(1, 200), w=st.floats(0, 1), nph=st.integers(1, 4), seed=st.integers(0, 99))
def test_phase_tiling_has_no_gaps(t, w, nph, seed):
    r = np.random.default_rng(seed)
    frac = (1 - w) / nph
    s = SparsitySchedule(t, w, tuple(r.uniform(0.05, 1.0, nph)), frac, 3)
    budgets = s.budgets()
    first = s.first_sparse_step
    assert all(b is None for b in budgets[:first])
    assert all(b is not None for b in budgets[first:])


def test_should_update_rules():
    cache = MaskCache(first_sparse_step=3)
    assert should_update(cache, 0, 0, 5, 4)
    cache.put(0, 0, None, 3)
    assert [should_update(cache, 0, 0, t, 1) for t in range(3, 7)] == [True] * 4
    assert [should_update(cache, 0, 0, t, 10) for t in range(3, 13)] == [True] + [False] * 9
    assert [t for t in range(3, 20) if should_update(cache, 0, 0, t, 4)] == [3, 7, 11, 15, 19]


def test_warmup_step_is_dense_code_path():
    q, k, v = tokens()
    sched = SparsitySchedule(4, 0.5, (0.5,), 0.5, 1)
    cache = MaskCache(sched.first_sparse_step)
    res = run_step(q, k, v, DIMS, make_order("hilbert3d", DIMS), PARAMS, sched, cache, 0, 0, 0)
    dense, _ = full_attention(q, k, v)
    assert res.output.tobytes() == dense.tobytes()
    assert res.mask is None and not res.mask_updated and len(cache) == 0


def test_full_budget_restores_dense_output():
    q, k, v = tokens(1)
    sched = SparsitySchedule(2, 0.0, (1.0,), 1.0, 1)
    res = run_step(q, k, v, DIMS, make_order("hilbert3d", DIMS), PARAMS, sched,
                   MaskCache(0), 0, 0, 0)
    dense, _ = full_attention(q, k, v)
    assert res.mask.bits.all()
    assert np.abs(res.output - dense).max() <= 1e-5


def test_cached_mask_gives_fresh_outputs():
    q, k, v = tokens(2)
    _, _, v2 = tokens(3)
    sched = SparsitySchedule(4, 0.0, (0.25,), 1.0, 4)
    perm = make_order("hilbert3d", DIMS)
    cache = MaskCache(0)
    a = run_step(q, k, v, DIMS, perm, PARAMS, sched, cache, 0, 0, 0)
    b = run_step(q, k, v2, DIMS, perm, PARAMS, sched, cache, 0, 0, 1)
    assert a.mask_updated and not b.mask_updated
    assert a.mask.bits.tobytes() == b.mask.bits.tobytes()
    assert not np.allclose(a.output, b.output)


def test_cache_is_per_layer_and_head():
    sched = SparsitySchedule(3, 0.0, (0.25,), 1.0, 3)
    perm = raster_order(DIMS)
    cache = MaskCache(0)
    run_step(*tokens(0), DIMS, perm, PARAMS, sched, cache, 0, 0, 0)
    res = run_step(*tokens(1), DIMS, perm, PARAMS, sched, cache, 0, 1, 1)
    assert res.mask_updated and len(cache) == 2


def test_run_step_geometry_errors():
    sched = SparsitySchedule(2, 0.0, (0.5,), 1.0, 1)
    with pytest.raises(ValueError):
        run_step(*tokens(n=60), DIMS, raster_order(DIMS), PARAMS, sched, MaskCache(0), 0, 0, 0)
    cache = MaskCache(0)
    run_step(*tokens(), DIMS, raster_order(DIMS), PARAMS, sched, cache, 0, 0, 0)
    other = GridDims(1, 4, 8)
    sched2 = SparsitySchedule(2, 0.0, (0.5,), 1.0, 5)
    with pytest.raises(ValueError):
        run_step(*tokens(n=32), other, raster_order(other), PARAMS, sched2, cache, 0, 0, 1)


def test_all_dense_trajectory():
    sched = SparsitySchedule(4, 1.0, (), 0.0, 1)
    rep = run_trajectory(FrozenWorkload(*tokens(), 4), DIMS, "raster", PARAMS, sched)
    assert [r["sparsity"] for r in rep.rows] == [0.0] * 4
    assert [r["recall"] for r in rep.rows] == [1.0] * 4
    assert rep.mask_log == []


def test_default_trajectory_update_rule():
    dims = GridDims(2, 8, 8)
    sched = SparsitySchedule()
    w = TrajectoryWorkload(FieldParams(dims, 8, 2.0, seed=4), 50, 1.0, 0.0, layers=2, heads=2)
    rep = run_trajectory(w, dims, "hilbert3d", ScoringParams(16, 4), sched, keep_outputs=False)
    assert len(rep.rows) == 50 * 4
    got = {(r["step"], r["layer"], r["head"]) for r in rep.rows if r["mask_updated"]}
    assert got == expected_updates(sched, 2, 2)
    assert sorted({s for s, _, _ in got}) == [12, 24, 36, 48]
    assert [(s, l, h) for s, l, h, _ in rep.mask_log] == sorted(got)


def test_masks_constant_between_updates_within_a_phase():
    dims = GridDims(2, 8, 8)
    sched = SparsitySchedule(20, 0.0, (0.25,), 1.0, 8)
    w = TrajectoryWorkload(FieldParams(dims, 8, 2.0, seed=1), 20, 1.0, 0.0)
    perm = make_order("hilbert3d", dims)
    cache = MaskCache(0)
    seen = []
    for t in range(20):
        res = run_step(*w.tokens(t, 0, 0), dims, perm, ScoringParams(16, 4), sched, cache, 0, 0, t)
        seen.append((res.mask_updated, res.mask.bits.tobytes()))
    for t in range(1, 20):
        if not seen[t][0]:
            assert seen[t][1] == seen[t - 1][1]


def test_budget_change_reselects_from_cached_scores():
    q, k, v = tokens(5)
    sched = SparsitySchedule(4, 0.0, (0.5, 0.25), 0.5, 10)
    perm = raster_order(DIMS)
    cache = MaskCache(0)
    a = run_step(q, k, v, DIMS, perm, PARAMS, sched, cache, 0, 0, 1)
    b = run_step(q, k, v, DIMS, perm, PARAMS, sched, cache, 0, 0, 2)
    assert a.mask_updated and not b.mask_updated
    assert b.mask == build_mask(q, k, PARAMS, 0.25)
    assert not (b.mask.bits & ~a.mask.bits).any()
    assert cache.get(0, 0).last_update_step == 1


def test_realized_sparsity_follows_phases():
    dims = GridDims(5, 4, 4)  # 80 tokens, M=10 at B=8
    rep = run_trajectory(FrozenWorkload(*tokens(n=80), 50), dims, "hilbert3d", PARAMS,
                         SparsitySchedule(), keep_outputs=False)
    for r in rep.rows:
        if r["budget"] is not None:
            assert r["sparsity"] == pytest.approx(1 - r["budget"], abs=1e-12)


def test_nested_budgets_on_frozen_tokens():
    q, k, _ = gen_video_field(FieldParams(DIMS, 8, 2.0, seed=9))
    perm = make_order("hilbert3d", DIMS)
    qr, kr = apply_permutation(perm, q), apply_permutation(perm, k)
    a = attention_scores(qr, kr)
    recalls = [attention_recall(a, build_mask(qr, kr, PARAMS, g)) for g in (0.1, 0.2, 0.4, 1.0)]
    assert recalls == sorted(recalls) and recalls[-1] == 1.0


def test_dense_layers_override():
    sched = SparsitySchedule(6, 0.0, (0.25,), 1.0, 2, dense_layers=(0,))
    rep = run_trajectory(FrozenWorkload(*tokens(), 6, layers=2), DIMS, "raster", PARAMS, sched)
    layer0 = [r for r in rep.rows if r["layer"] == 0]
    layer1 = [r for r in rep.rows if r["layer"] == 1]
    assert all(r["sparsity"] == 0 and not r["mask_updated"] for r in layer0)
    assert all(r["sparsity"] > 0 for r in layer1)


def test_workload_exhaustion():
    sched = SparsitySchedule(5, 0.0, (0.5,), 1.0, 1)
    with pytest.raises(ValueError):
        run_trajectory(FrozenWorkload(*tokens(), 3), DIMS, "raster", PARAMS, sched)
    with pytest.raises(IndexError):
        FrozenWorkload(*tokens(), 3).tokens(3, 0, 0)


def test_trajectory_independent_of_threads():
    dims = GridDims(2, 4, 8)
    sched = SparsitySchedule(8, 0.25, (0.5, 0.25), 0.375, 2)
    w = TrajectoryWorkload(FieldParams(dims, 8, 1.0, seed=2), 8, 1.0, 0.1, layers=2, heads=3)
    a = run_trajectory(w, dims, "hilbert3d", PARAMS, sched, threads=1)
    b = run_trajectory(w, dims, "hilbert3d", PARAMS, sched, threads=4)
    assert a.csv_rows() == b.csv_rows()
    assert all(a.outputs[key].tobytes() == b.outputs[key].tobytes() for key in a.outputs)
