"""Random-stream discipline.

One master seed feeds fixed-size blocks of trials; block ``b`` of stream
``tag`` draws from ``SeedSequence(seed, spawn_key=(*tag, b))``.  A trial's
uniforms therefore depend only on (seed, tag, trial index), never on how
trials are split across workers.  Within a trial, each round owns a row of
``1 + 5n`` uniforms whose slots are reserved per purpose (arrival,
first-proposal pivots, alpha coins, second-proposal pivots, beta coins,
success coins), so two algorithms run with the same seed see the same
arrivals.
"""
from __future__ import annotations

import numpy as np

BLOCK = 4096

TRIALS = (0,)
SIGMA = 1  # tag (SIGMA, t) for the estimation runs of round t


def block_uniforms(seed: int, tag: tuple, block: int, T: int, width: int,
                   size: int = BLOCK) -> np.ndarray:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(tag) + (int(block),))
    rng = np.random.Generator(np.random.PCG64(ss))
    return rng.random((size, T, width))


def trial_uniforms(seed: int, tag: tuple, start: int, stop: int, T: int,
                   width: int) -> np.ndarray:
    """Uniforms for trials ``[start, stop)`` as a ``(stop-start, T, width)`` array."""
    out = np.empty((stop - start, T, width))
    pos = start
    while pos < stop:
        b = pos // BLOCK
        lo = pos - b * BLOCK
        hi = min(BLOCK, stop - b * BLOCK)
        blk = block_uniforms(seed, tag, b, T, width)
        out[pos - start:pos - start + hi - lo] = blk[lo:hi]
        pos = b * BLOCK + hi
    return out


def chunks(trials: int, size: int = BLOCK):
    return [(a, min(a + size, trials)) for a in range(0, trials, size)]
