"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--csv out.csv]

Prints one line per (kernel, size, backend) with the best wall time over
``--repeat`` runs and the speedup of the compiled backend.
"""

from __future__ import annotations

import argparse
import math
import sys
import timeit

import numpy as np

from finesparse._backend import available_backends
from finesparse.formats import write_csv
from finesparse.masks import ScoringParams, build_mask


def _attention_case(n: int, d: int, block: int, budget: float, seed: int = 0):
    rng = np.random.default_rng(seed)
    q, k, v = (rng.standard_normal((n, d)).astype(np.float32) for _ in range(3))
    mask = build_mask(q, k, ScoringParams(block, min(16, block)), budget)
    bits = np.ascontiguousarray(mask.bits, dtype=np.uint8)
    return (q, k, v, bits, block, 1.0 / math.sqrt(d))


def _hilbert_case(side: int):
    axes = np.meshgrid(*(np.arange(side),) * 3, indexing="ij")
    coords = np.ascontiguousarray(np.stack([a.ravel() for a in axes], axis=1), dtype=np.int64)
    return (coords, max(1, (side - 1).bit_length()))


def cases():
    for n in (1024, 4096):
        yield "block_sparse_attention", f"N={n} d=64 B=64 budget=0.2", \
            _attention_case(n, 64, 64, 0.2)
    for side in (16, 64):
        yield "hilbert_keys", f"{side}^3", _hilbert_case(side)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--csv", help="also write results as CSV")
    args = ap.parse_args(argv)

    backends = available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; timing the fallback only", file=sys.stderr)
    rows = []
    for kernel, size, inputs in cases():
        times = {}
        for name, mod in backends.items():
            fn = getattr(mod, kernel)
            times[name] = min(timeit.repeat(lambda: fn(*inputs), number=1, repeat=args.repeat))
        speedup = times["python"] / times["compiled"] if "compiled" in times else None
        for name, t in times.items():
            rows.append((kernel, size, name, t, speedup if name == "compiled" else None))
            extra = f"  x{speedup:.2f}" if name == "compiled" and speedup else ""
            print(f"{kernel:24s} {size:28s} {name:9s} {t * 1e3:10.3f} ms{extra}")
    if args.csv:
        write_csv(args.csv, ("kernel", "size", "backend", "seconds", "speedup"), rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
