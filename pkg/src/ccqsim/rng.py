"""Counter-based Wiener increments.

Each trajectory owns a Philox stream keyed by ``(master_seed, index)``; draw
``s`` of the stream is the noise of step ``s``.  Streams do not depend on how
trajectories are batched or distributed over workers.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def trajectory_generator(master_seed: int, index: int) -> np.random.Generator:
    if master_seed < 0 or index < 0:
        raise ValueError("seed and trajectory index must be non-negative")
    key = ((int(master_seed) & _MASK64) << 64) | (int(index) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


def wiener_increments(master_seed: int, index: int, n_steps: int, dt: float) -> np.ndarray:
    """``dW ~ N(0, dt)`` for steps ``0 .. n_steps-1`` of one trajectory."""
    g = trajectory_generator(master_seed, index)
    return g.standard_normal(n_steps) * np.sqrt(dt)


def wiener_block(master_seed: int, start: int, stop: int, n_steps: int,
                 dt: float) -> np.ndarray:
    """Increments for trajectories ``start .. stop-1`` as an array ``(n, n_steps)``."""
    out = np.empty((stop - start, n_steps))
    for i, idx in enumerate(range(start, stop)):
        out[i] = wiener_increments(master_seed, idx, n_steps, dt)
    return out
