"""Token orderings over a (frames, height, width) lattice.

Every ordering is returned as a :class:`Permutation` whose ``forward`` array
lists raster indices (``(t*h + y)*w + x``) in visit order, so that
``x[perm.forward]`` reorders a raster-flattened token matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _backend
from .formats import atomic_write

ORDERINGS = ("raster", "hilbert2d", "block3d", "hilbert3d")

_LABELS = {
    "raster": "Raster",
    "hilbert2d": "Hilbert2D",
    "block3d": "Block3D",
    "hilbert3d": "Hilbert3D",
}


@dataclass(frozen=True)
class GridDims:
    frames: int
    height: int
    width: int

    def __post_init__(self):
        for name in ("frames", "height", "width"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.token_count >= np.iinfo(np.int64).max:
            raise ValueError("token count exceeds the index range")

    @property
    def token_count(self) -> int:
        return self.frames * self.height * self.width

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.frames, self.height, self.width)

    def coords(self) -> np.ndarray:
        """(N, 3) array of (t, y, x) in raster order."""
        t, y, x = np.meshgrid(
            np.arange(self.frames),
            np.arange(self.height),
            np.arange(self.width),
            indexing="ij",
        )
        return np.stack([t.ravel(), y.ravel(), x.ravel()], axis=1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class Permutation:
    forward: np.ndarray
    label: str = "custom"

    def __post_init__(self):
        fwd = np.ascontiguousarray(self.forward, dtype=np.int64)
        if fwd.ndim != 1:
            raise ValueError("permutation must be one-dimensional")
        check = np.zeros(fwd.size, dtype=bool)
        if fwd.size and (fwd.min() < 0 or fwd.max() >= fwd.size):
            raise ValueError("permutation entries out of range")
        check[fwd] = True
        if not check.all():
            raise ValueError("permutation is not a bijection")
        fwd.flags.writeable = False
        object.__setattr__(self, "forward", fwd)

    def __len__(self) -> int:
        return int(self.forward.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Permutation):
            return NotImplemented
        return np.array_equal(self.forward, other.forward)

    def __hash__(self):
        return hash(self.forward.tobytes())


def _bits_for(extent: int) -> int:
    return max(1, (int(extent) - 1).bit_length())


def _curve_order(coords: np.ndarray, extent: int) -> np.ndarray:
    keys = _backend.hilbert_keys(np.ascontiguousarray(coords), _bits_for(extent))
    return np.argsort(keys, kind="stable")


def raster_order(dims: GridDims) -> Permutation:
    return Permutation(np.arange(dims.token_count), _LABELS["raster"])


def hilbert3d_order(dims: GridDims) -> Permutation:
    """Global 3D Hilbert traversal starting at the lattice origin.

    The curve lives on the smallest power-of-two cube enclosing ``dims``;
    cells outside ``dims`` are skipped without disturbing the curve order.
    Curve axes map to (t, y, x).
    """
    coords = dims.coords()
    return Permutation(_curve_order(coords, max(dims.shape)), _LABELS["hilbert3d"])


def hilbert2d_order(dims: GridDims) -> Permutation:
    """Per-frame 2D Hilbert traversal, frames kept in temporal order."""
    plane = dims.height * dims.width
    yx = dims.coords()[:plane, 1:]
    local = _curve_order(yx, max(dims.height, dims.width))
    fwd = (np.arange(dims.frames)[:, None] * plane + local[None, :]).ravel()
    return Permutation(fwd, _LABELS["hilbert2d"])


def block3d_order(dims: GridDims, cube: int = 4) -> Permutation:
    """Raster over ``cube``-sided tiles, local raster inside each tile.

    Tiles at the lattice boundary may be partial and are walked over their
    actual extent.
    """
    c = dims.coords()
    tile = c // cube
    # lexsort keys: last key is primary
    order = np.lexsort((c[:, 2], c[:, 1], c[:, 0], tile[:, 2], tile[:, 1], tile[:, 0]))
    return Permutation(order, _LABELS["block3d"])


_ORDER_FUNCS = {
    "raster": raster_order,
    "hilbert2d": hilbert2d_order,
    "block3d": block3d_order,
    "hilbert3d": hilbert3d_order,
}


def make_order(name: str, dims: GridDims) -> Permutation:
    try:
        fn = _ORDER_FUNCS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown ordering {name!r}; expected one of {ORDERINGS}") from None
    return fn(dims)


def apply_permutation(perm: Permutation, x: np.ndarray) -> np.ndarray:
    """Row ``i`` of the result is row ``perm.forward[i]`` of ``x``."""
    x = np.asarray(x)
    if x.shape[0] != len(perm):
        raise ValueError(f"permutation length {len(perm)} does not match {x.shape[0]} rows")
    return x[perm.forward]


def invert_permutation(perm: Permutation) -> Permutation:
    inv = np.empty_like(perm.forward)
    inv[perm.forward] = np.arange(len(perm), dtype=np.int64)
    return Permutation(inv, perm.label)


def save_permutation(perm: Permutation, path) -> None:
    """One decimal index per line, newline terminated."""
    atomic_write(path, "".join(f"{i}\n" for i in perm.forward.tolist()).encode("ascii"))


def load_permutation(path, label: str = "custom") -> Permutation:
    text = Path(path).read_text(encoding="ascii")
    if text and not text.endswith("\n"):
        raise ValueError(f"{path}: missing trailing newline")
    lines = text.split("\n")[:-1] if text else []
    values = []
    for lineno, line in enumerate(lines, 1):
        if not line.isdigit():
            raise ValueError(f"{path}:{lineno}: expected a decimal index, got {line!r}")
        values.append(int(line))
    return Permutation(np.array(values, dtype=np.int64), label)
