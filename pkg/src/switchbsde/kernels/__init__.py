"""Hot-kernel backend selection.

Two kernels dominate the inner loops of the backward scheme: the
counter-based random block function (Philox-4x32-10) used to regenerate
Brownian increments, and the exact piecewise-linear root solve of the
semi-implicit penalty step.  A compiled Cython core is used when available;
a numpy implementation is the fallback.  Selection happens once at import:

    SWITCHBSDE_KERNELS=python    force the numpy lane
    SWITCHBSDE_KERNELS=compiled  require the extension (ImportError if absent)

Both lanes produce bit-identical outputs; `benchmarks/bench_kernels.py`
compares their speed.
"""

from __future__ import annotations

import os

import numpy as np

from . import pure

_choice = os.environ.get("SWITCHBSDE_KERNELS", "auto").lower()

if _choice == "python":
    _impl = pure
    BACKEND = "python"
elif _choice == "compiled":
    from . import _core as _impl  # noqa: F401

    BACKEND = "compiled"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = pure
        BACKEND = "python"

philox4x32_10 = _impl.philox4x32_10
penalized_root_batch = _impl.penalized_root_batch

_INV53 = 1.0 / 9007199254740992.0  # 2 ** -53


def _split_seed(seed: int):
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.uint32(seed & 0xFFFFFFFF), np.uint32(seed >> 32)


def _normals_from_blocks(r0, r1, r2, r3):
    """Two N(0,1) draws per Philox block via Box-Muller.

    The transform is shared numpy code so both kernel lanes produce the same
    doubles given the same block words.
    """
    u1 = (((r0.astype(np.uint64) << np.uint64(32)) | r1.astype(np.uint64)) >> np.uint64(11)).astype(
        np.float64
    )
    u2 = (((r2.astype(np.uint64) << np.uint64(32)) | r3.astype(np.uint64)) >> np.uint64(11)).astype(
        np.float64
    )
    u1 = (u1 + 0.5) * _INV53
    u2 = (u2 + 0.5) * _INV53
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = (2.0 * np.pi) * u2
    return radius * np.cos(angle), radius * np.sin(angle)


def counter_gaussians(seed: int, n_paths: int, n_steps: int, dim: int) -> np.ndarray:
    """Standard normal increments keyed by (seed, path, step, lane).

    Returns an (n_paths, n_steps, dim) float64 array.  Each (path, step)
    pair owns its own counter sub-stream, so the result is a pure function
    of the arguments and independent of generation order or chunking.
    """
    blocks_per = (dim + 1) // 2
    total = n_paths * n_steps * blocks_per
    idx = np.arange(total, dtype=np.uint64)
    path = idx // np.uint64(n_steps * blocks_per)
    rem = idx % np.uint64(n_steps * blocks_per)
    step = rem // np.uint64(blocks_per)
    sub = rem % np.uint64(blocks_per)
    k0, k1 = _split_seed(seed)
    r0, r1, r2, r3 = philox4x32_10(
        (path & np.uint64(0xFFFFFFFF)).astype(np.uint32),
        (path >> np.uint64(32)).astype(np.uint32),
        step.astype(np.uint32),
        sub.astype(np.uint32),
        np.full(total, k0, dtype=np.uint32),
        np.full(total, k1, dtype=np.uint32),
    )
    z0, z1 = _normals_from_blocks(r0, r1, r2, r3)
    pairs = np.stack([z0, z1], axis=1).reshape(n_paths, n_steps, blocks_per * 2)
    return np.ascontiguousarray(pairs[:, :, :dim])
