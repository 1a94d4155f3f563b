"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def hilbert_keys(coords: np.ndarray, bits: int) -> np.ndarray:
    """Hilbert index of each row of ``coords`` (Skilling's transpose method).

    Vectorised over points; the loops run over bits and axes only.
    """
    n = coords.shape[1]
    if bits * n > 63:
        raise ValueError("index does not fit in 63 bits")
    X = [np.array(coords[:, i], dtype=np.int64) for i in range(n)]
    M = 1 << (bits - 1)
    Q = M
    # inverse undo of the Gray-code rotations
    while Q > 1:
        P = Q - 1
        for i in range(n):
            hi = (X[i] & Q) != 0
            t = np.where(hi, 0, (X[0] ^ X[i]) & P)
            X[0] = np.where(hi, X[0] ^ P, X[0] ^ t)
            if i:
                X[i] = X[i] ^ t
        Q >>= 1
    for i in range(1, n):
        X[i] = X[i] ^ X[i - 1]
    t = np.zeros_like(X[0])
    Q = M
    while Q > 1:
        t = np.where((X[n - 1] & Q) != 0, t ^ (Q - 1), t)
        Q >>= 1
    X = [x ^ t for x in X]
    key = np.zeros(coords.shape[0], dtype=np.int64)
    for b in range(bits - 1, -1, -1):
        for i in range(n):
            key = (key << 1) | ((X[i] >> b) & 1)
    return key


def block_sparse_attention(q, k, v, mask, block_size, scale):
    n = q.shape[0]
    out = np.empty((n, v.shape[1]), dtype=np.float32)
    kd = k.astype(np.float64)
    vd = v.astype(np.float64)
    token_block = np.arange(n) // block_size
    for u in range(mask.shape[0]):
        rows = slice(u * block_size, min((u + 1) * block_size, n))
        keep = mask[u].astype(bool)[token_block]
        logits = (q[rows].astype(np.float64) @ kd[keep].T) * scale
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        out[rows] = (w @ vd[keep]) / w.sum(axis=1, keepdims=True)
    return out
