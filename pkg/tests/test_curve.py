import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finesparse.curve import (
    ORDERINGS,
    GridDims,
    Permutation,
    apply_permutation,
    block3d_order,
    hilbert2d_order,
    hilbert3d_order,
    invert_permutation,
    load_permutation,
    make_order,
    raster_order,
    save_permutation,
)

dims_st = st.tuples(*(st.integers(1, 12),) * 3).map(lambda t: GridDims(*t))


def cells(dims, perm):
    f, h, w = dims.shape
    idx = perm.forward
    return np.stack([idx // (h * w), (idx // w) % h, idx % w], axis=1)


def unit_steps(xyz):
    return (np.abs(np.diff(xyz, axis=0)).sum(axis=1) == 1).all()


def test_griddims_rejects_empty_axes():
    with pytest.raises(ValueError):
        GridDims(0, 2, 2)
    assert GridDims(2, 3, 4).token_count == 24


@pytest.mark.parametrize(
    "dims, expected",
    [((1, 1, 1), [0]), ((1, 2, 3), [0, 1, 2, 3, 4, 5]), ((2, 1, 2), [0, 1, 2, 3])],
)
def test_raster_examples(dims, expected):
    assert raster_order(GridDims(*dims)).forward.tolist() == expected


def test_hilbert3d_line_is_single_sweep_from_origin(backend):
    assert hilbert3d_order(GridDims(1, 1, 4)).forward.tolist() == [0, 1, 2, 3]


def test_hilbert3d_single_cell(backend):
    assert hilbert3d_order(GridDims(1, 1, 1)).forward.tolist() == [0]


def test_hilbert3d_cube_of_two_unit_steps(backend):
    d = GridDims(2, 2, 2)
    p = hilbert3d_order(d)
    assert p.forward[0] == 0
    assert unit_steps(cells(d, p))


@pytest.mark.parametrize("side", [2, 4, 8, 16])
def test_hilbert3d_power_of_two_cubes_are_adjacent(backend, side):
    d = GridDims(side, side, side)
    assert unit_steps(cells(d, hilbert3d_order(d)))


@pytest.mark.parametrize("side", [2, 4, 8, 16])
def test_hilbert2d_frames_are_adjacent(backend, side):
    d = GridDims(3, side, side)
    xyz = cells(d, hilbert2d_order(d))
    plane = side * side
    for f in range(3):
        frame = xyz[f * plane : (f + 1) * plane]
        assert (frame[:, 0] == f).all()
        assert unit_steps(frame[:, 1:])


def test_hilbert2d_examples(backend):
    assert hilbert2d_order(GridDims(1, 1, 1)).forward.tolist() == [0]
    assert hilbert2d_order(GridDims(3, 1, 1)).forward.tolist() == [0, 1, 2]
    d = GridDims(1, 2, 2)
    assert unit_steps(cells(d, hilbert2d_order(d)))


def test_block3d_single_cube_is_raster():
    assert block3d_order(GridDims(4, 4, 4)).forward.tolist() == list(range(64))
    assert block3d_order(GridDims(1, 1, 1)).forward.tolist() == [0]


def test_block3d_two_tiles():
    fwd = block3d_order(GridDims(1, 4, 8)).forward.tolist()
    left = [y * 8 + x for y in range(4) for x in range(4)]
    right = [y * 8 + x for y in range(4) for x in range(4, 8)]
    assert fwd == left + right


def test_block3d_partial_tiles_use_local_raster():
    d = GridDims(1, 2, 6)
    # tiles: x in [0,4) then [4,6), each only 2 rows tall
    assert block3d_order(d).forward.tolist() == [0, 1, 2, 3, 6, 7, 8, 9, 4, 5, 10, 11]


@settings(max_examples=60, deadline=None)
@given(dims=dims_st, name=st.sampled_from(ORDERINGS))
def test_every_ordering_is_a_bijection(dims, name):
    perm = make_order(name, dims)
    assert np.array_equal(np.sort(perm.forward), np.arange(dims.token_count))


def test_bijection_large_lattice(backend):
    d = GridDims(64, 3, 64)
    for name in ORDERINGS:
        assert np.array_equal(np.sort(make_order(name, d).forward), np.arange(d.token_count))


def test_non_power_of_two_keeps_curve_order(backend):
    # dropping out-of-range cells must preserve the relative order on the padded cube
    full = hilbert3d_order(GridDims(8, 8, 8))
    sub = hilbert3d_order(GridDims(5, 3, 7))
    xyz = cells(GridDims(8, 8, 8), full)
    inside = (xyz[:, 0] < 5) & (xyz[:, 1] < 3) & (xyz[:, 2] < 7)
    kept = xyz[inside]
    expect = (kept[:, 0] * 3 + kept[:, 1]) * 7 + kept[:, 2]
    assert sub.forward.tolist() == expect.tolist()


def test_orderings_are_deterministic():
    d = GridDims(3, 5, 6)
    for name in ORDERINGS:
        assert make_order(name, d) == make_order(name, d)


def test_make_order_rejects_unknown():
    with pytest.raises(ValueError):
        make_order("zigzag", GridDims(1, 1, 1))


def test_apply_examples():
    x = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(apply_permutation(Permutation(np.arange(3)), x), x)
    two = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert apply_permutation(Permutation([1, 0]), two).tolist() == [[3.0, 4.0], [1.0, 2.0]]
    with pytest.raises(ValueError):
        apply_permutation(Permutation([1, 0]), x)


def test_invert_examples():
    assert invert_permutation(Permutation([2, 0, 1])).forward.tolist() == [1, 2, 0]
    ident = Permutation(np.arange(5))
    assert invert_permutation(ident) == ident


@settings(max_examples=50, deadline=None)
@given(st.permutations(list(range(9))))
def test_double_inverse(values):
    p = Permutation(values)
    assert invert_permutation(invert_permutation(p)) == p


@settings(max_examples=40, deadline=None)
@given(dims=dims_st, name=st.sampled_from(ORDERINGS), seed=st.integers(0, 2**32 - 1))
def test_round_trip_is_bit_exact(dims, name, seed):
    x = np.random.default_rng(seed).standard_normal((dims.token_count, 3)).astype(np.float32)
    p = make_order(name, dims)
    back = apply_permutation(invert_permutation(p), apply_permutation(p, x))
    assert back.tobytes() == x.tobytes()


def test_permutation_validation():
    for bad in ([0, 0, 1], [0, 3, 1], [-1, 0]):
        with pytest.raises(ValueError):
            Permutation(bad)


def test_permutation_file_round_trip(tmp_path):
    p = hilbert3d_order(GridDims(2, 3, 4))
    path = tmp_path / "perm.txt"
    save_permutation(p, path)
    text = path.read_text()
    assert text.endswith("\n") and text.count("\n") == 24
    assert load_permutation(path) == p


@pytest.mark.parametrize("text", ["0\n1", "0\n0\n", "0\nx\n", "1\n2\n", "0\n-1\n"])
def test_permutation_file_rejects_malformed(tmp_path, text):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(ValueError):
        load_permutation(path)
