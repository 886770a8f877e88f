"""Counter-based Wiener increments.

The standard normal used at step ``counter`` of stream ``stream`` is a pure
function of ``(seed, stream, counter, width)``: steps are grouped into blocks of
``BLOCK`` and each block draws from its own Philox generator keyed by
``SeedSequence([seed, stream, block])``. Runs therefore reproduce under any
execution order, and a fine Brownian path can be coarsened by summation.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "BLOCK",
    "WienerDriver",
    "normal_block",
    "standard_normals",
    "wiener_increments",
    "brownian_increments",
    "coarsen",
]

BLOCK = 1024
_UINT64 = (1 << 64) - 1


def _check_seed(seed):
    if int(seed) != seed or not 0 <= seed <= _UINT64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return int(seed)


@lru_cache(maxsize=256)
def _cached_block(seed, stream, block, width):
    out = _draw_block(seed, stream, block, width)
    out.flags.writeable = False
    return out


def _draw_block(seed, stream, block, width):
    ss = np.random.SeedSequence([seed, stream, block])
    rng = np.random.Generator(np.random.Philox(ss))
    return rng.standard_normal((BLOCK, width))


def normal_block(seed, stream, block, width):
    """Standard normals for steps ``block*BLOCK .. (block+1)*BLOCK - 1``, shape ``(BLOCK, width)``."""
    return _draw_block(_check_seed(seed), int(stream), int(block), int(width))


def standard_normals(seed, stream, counter, width):
    """Standard normals of one step; cached by block for sequential access."""
    block, offset = divmod(int(counter), BLOCK)
    return _cached_block(_check_seed(seed), int(stream), block, int(width))[offset].copy()


def brownian_increments(seed, stream, n_steps, width, dt, start=0):
    """Increments for ``n_steps`` consecutive steps, shape ``(n_steps, width)``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    seed = _check_seed(seed)
    first, last = start // BLOCK, (start + n_steps - 1) // BLOCK
    z = np.concatenate(
        [_draw_block(seed, int(stream), blk, int(width)) for blk in range(first, last + 1)]
    )
    off = start - first * BLOCK
    return np.sqrt(dt) * z[off:off + n_steps]


def coarsen(increments, factor):
    """Sum consecutive groups of ``factor`` increments: the same path at ``factor * dt``."""
    increments = np.asarray(increments)
    if increments.shape[0] % factor:
        raise ValueError("number of increments must be divisible by factor")
    return increments.reshape((-1, factor) + increments.shape[1:]).sum(axis=1)


@dataclass
class WienerDriver:
    """Position in a reproducible Brownian stream; each call advances ``counter``."""

    seed: int
    stream: int = 0
    counter: int = 0

    def __post_init__(self):
        self.seed = _check_seed(self.seed)

    def normals(self, n_streams):
        z = standard_normals(self.seed, self.stream, self.counter, n_streams)
        self.counter += 1
        return z

    def increments(self, n_streams, dt):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        return np.sqrt(dt) * self.normals(n_streams)


def wiener_increments(driver, n_streams, dt):
    """``n_streams`` independent ``N(0, dt)`` increments for the driver's current step."""
    return driver.increments(n_streams, dt)
