"""Counter-based randomness keyed by (seed, purpose, frame, level).

Streaming draws noise through keys instead of a shared sequential state, so
the same frame gets the same noise whatever order window frames are
processed in, and differently shaped sampling loops (plain rolling vs
ladder) produce bit-identical streams from one seed.
"""

from __future__ import annotations

import numpy as np

# purpose tags; distinct tags give independent streams for the same (frame, level)
TAG_FORWARD = 1    # forward corruption (bootstrap noising)
TAG_POSTERIOR = 2  # reverse-step posterior noise
TAG_FRESH = 3      # fresh pure-noise frames entering the window tail
TAG_CONTEXT = 4    # re-noising emitted frames into the context buffer
TAG_ORACLE = 5     # posterior-sampling draws inside the analytic denoiser

_MASK48 = (1 << 48) - 1


class KeyedRng:
    """Deterministic per-(frame, level) Gaussian draws on top of Philox."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def _generator(self, tag: int, frame: int, level: int) -> np.random.Generator:
        k0 = (np.uint64(self.seed & (1 << 56) - 1) << np.uint64(8)) | np.uint64(tag & 0xFF)
        k1 = (np.uint64(frame & _MASK48) << np.uint64(16)) | np.uint64(level & 0xFFFF)
        return np.random.Generator(np.random.Philox(key=np.array([k0, k1], dtype=np.uint64)))

    def normal(self, tag: int, frame: int, level: int, shape) -> np.ndarray:
        return self._generator(tag, frame, level).standard_normal(shape)

    def normal_frames(self, tag: int, frames, levels, dim: int) -> np.ndarray:
        """One independent draw of size dim per (frame, level) pair."""
        frames = np.asarray(frames)
        levels = np.broadcast_to(np.asarray(levels), frames.shape)
        out = np.empty((len(frames), dim))
        for i, (f, t) in enumerate(zip(frames, levels)):
            out[i] = self.normal(tag, int(f), int(t), dim)
        return out
