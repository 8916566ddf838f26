"""Counter-based random streams.

Every uniform used by the simulators is a pure function of
``(seed, replication, step, block)``: the seed is the Philox4x32-10 key and
the remaining coordinates form the 128-bit counter.  Replications can
therefore be generated in any order, on any number of workers, and still
reproduce bit-for-bit.
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)
_ROUNDS = 10

# 53-bit uniforms built from two 32-bit words, offset by half an ulp so
# that 0 and 1 are never produced.
_TWO_M53 = 2.0**-53


def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32-10 block function on broadcastable uint32-valued arrays.

    Returns the four output words as uint64 arrays holding 32-bit values.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in (c0, c1, c2, c3))
    k0 = int(k0) & 0xFFFFFFFF
    k1 = int(k1) & 0xFFFFFFFF
    for r in range(_ROUNDS):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _SHIFT32
        lo0 = p0 & _MASK32
        hi1 = p1 >> _SHIFT32
        lo1 = p1 & _MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ np.uint64(k0), lo1, hi0 ^ c3 ^ np.uint64(k1), lo0
        k0 = (k0 + _W0) & 0xFFFFFFFF
        k1 = (k1 + _W1) & 0xFFFFFFFF
    return c0, c1, c2, c3


def split_seed(seed: int) -> tuple[int, int]:
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return seed & 0xFFFFFFFF, seed >> 32


def uniform_blocks(seed: int, reps, steps, blocks: int, block_start: int = 0) -> np.ndarray:
    """Uniforms in (0, 1) for every (replication, step) pair.

    Parameters
    ----------
    seed : int
        Stream key.
    reps : array_like of int
        Replication indices, shape ``(R,)``.
    steps : array_like of int
        Step indices, shape ``(S,)``.
    blocks : int
        Philox blocks per (replication, step); each block yields two uniforms.
    block_start : int
        Index of the first block; rejection samplers use it to draw fresh
        blocks for later attempts.

    Returns
    -------
    ndarray, shape ``(R, S, 2 * blocks)``
    """
    k0, k1 = split_seed(seed)
    reps = np.asarray(reps, dtype=np.uint64).reshape(-1, 1, 1)
    steps = np.asarray(steps, dtype=np.uint64).reshape(1, -1, 1)
    blk = np.arange(block_start, block_start + blocks, dtype=np.uint64).reshape(1, 1, -1)
    shape = np.broadcast_shapes(reps.shape, steps.shape, blk.shape)
    x0, x1, x2, x3 = philox4x32(
        np.broadcast_to(steps, shape),
        np.broadcast_to(blk, shape),
        np.broadcast_to(reps & _MASK32, shape),
        np.broadcast_to(reps >> _SHIFT32, shape),
        k0,
        k1,
    )
    u = np.empty(shape[:2] + (2 * blocks,))
    u[..., 0::2] = _to_unit(x0, x1)
    u[..., 1::2] = _to_unit(x2, x3)
    return u


def _to_unit(hi, lo):
    bits = ((hi >> np.uint64(5)) << np.uint64(26)) | (lo >> np.uint64(6))
    return (bits.astype(np.float64) + 0.5) * _TWO_M53


class CounterStream:
    """A single replication's stream, advanced one counter step per draw.

    The stream object carries the position; kernels never hold RNG state.
    """

    def __init__(self, seed: int, replication: int = 0, start: int = 0):
        self.seed = int(seed)
        self.replication = int(replication)
        self.position = int(start)

    def uniforms(self, count: int, width: int) -> np.ndarray:
        """``count`` rows of ``width`` uniforms, consuming ``count`` counter steps."""
        blocks = (width + 1) // 2
        steps = np.arange(self.position, self.position + count)
        self.position += count
        u = uniform_blocks(self.seed, [self.replication], steps, blocks)[0]
        return u[:, :width]
