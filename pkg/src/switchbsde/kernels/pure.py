"""Pure numpy implementations of the two hot kernels.

These are the fallback lane; `switchbsde.kernels` picks the compiled twin
from `_core` when it is importable.  Both lanes are written to perform the
same floating-point operations in the same order, so their outputs are
bit-identical (a property the kernel tests assert).
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_LO = np.uint64(0xFFFFFFFF)


def philox4x32_10(c0, c1, c2, c3, k0, k1):
    """One Philox-4x32 block per lane: 4 output words per counter quadruple.

    Counters and keys are uint32 arrays (broadcastable); returns four uint32
    arrays.  Ten rounds with the standard multipliers and Weyl key schedule.
    """
    x0 = np.asarray(c0, dtype=np.uint32).copy()
    x1 = np.asarray(c1, dtype=np.uint32).copy()
    x2 = np.asarray(c2, dtype=np.uint32).copy()
    x3 = np.asarray(c3, dtype=np.uint32).copy()
    key0 = np.asarray(k0, dtype=np.uint32).copy()
    key1 = np.asarray(k1, dtype=np.uint32).copy()
    for _ in range(10):
        p0 = x0.astype(np.uint64) * _M0
        p1 = x2.astype(np.uint64) * _M1
        hi0 = (p0 >> np.uint64(32)).astype(np.uint32)
        lo0 = (p0 & _LO).astype(np.uint32)
        hi1 = (p1 >> np.uint64(32)).astype(np.uint32)
        lo1 = (p1 & _LO).astype(np.uint32)
        x0, x1, x2, x3 = hi1 ^ x1 ^ key0, lo1, hi0 ^ x3 ^ key1, lo0
        key0 = key0 + _W0
        key1 = key1 + _W1
    return x0, x1, x2, x3


def penalized_root_batch(c, obstacles, coef):
    """Exact roots of y = c_i + coef * sum_j max(b_ij - y, 0), row by row.

    `c` is (N,), `obstacles` is (N, M) with M >= 0, coef >= 0.  The map
    y -> y - coef * sum_j (b_ij - y)^+ is piecewise linear and strictly
    increasing (slope >= 1), so the root is unique; it is found by sorting
    the breakpoints of each row in descending order and scanning segments.
    """
    c = np.asarray(c, dtype=np.float64)
    obstacles = np.asarray(obstacles, dtype=np.float64)
    n, m = obstacles.shape
    if m == 0 or coef == 0.0:
        return c.copy()
    b = np.sort(obstacles, axis=1)[:, ::-1]
    s = np.cumsum(b, axis=1)
    ks = np.arange(1, m + 1, dtype=np.float64)
    cand = (c[:, None] + coef * s) / (1.0 + coef * ks)
    # candidate with k active breakpoints is the root iff it does not dip
    # below the next breakpoint; scanning k upward, the first valid one wins
    valid = np.empty((n, m), dtype=bool)
    if m > 1:
        valid[:, : m - 1] = cand[:, : m - 1] >= b[:, 1:]
    valid[:, m - 1] = True
    first = np.argmax(valid, axis=1)
    rows = np.arange(n)
    y = cand[rows, first]
    top = c >= b[:, 0]
    y[top] = c[top]
    return y
