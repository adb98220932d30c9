"""Per-trial random streams.

Every trial draws from its own Philox4x64 counter-based generator keyed by
``SeedSequence(seed, spawn_key=(stream, trial))``.  Results therefore depend
only on ``(seed, stream, trial)`` and never on how trials are batched or
scheduled across workers.
"""
import numpy as np

PLAIN_STREAM = 0
TILTED_STREAM = 1
PROBE_STREAM = 2


def trial_generator(seed, trial, stream=PLAIN_STREAM):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(trial)))
    return np.random.Generator(np.random.Philox(ss))


class NormalBlocks:
    """Hand out standard normals for a set of trials, one block of steps at a time."""

    def __init__(self, seed, trials, dim, block=512, stream=PLAIN_STREAM):
        self.dim = dim
        self.block = block
        self.gens = [trial_generator(seed, t, stream) for t in trials]

    def next_block(self, active):
        """Array ``(len(active), block, dim)`` of fresh normals for the active trial slots."""
        out = np.empty((len(active), self.block, self.dim))
        for row, slot in enumerate(active):
            out[row] = self.gens[slot].standard_normal((self.block, self.dim))
        return out
