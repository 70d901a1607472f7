"""Streaming sampler: idle-pose bootstrap, the rolling denoise-emit loop,
ladder-accelerated block denoising, and on-the-fly smoothing of block
boundaries.

The window holds N frames whose noise levels rise toward the future.  Each
iteration runs the denoiser once over [context, window] and steps every
frame down; when the head frame (or head block, with a ladder) reaches level
zero it is emitted, re-noised to level 1 into the context buffer, and a
fresh pure-noise frame enters the tail.  The first N emissions descend from
the idle-pose bootstrap and are discarded; their denoiser calls are reported
separately from the steady state.

With a ladder of size l, one call cleans l frames, so steady-state denoiser
calls per emitted frame drop from s_r to s_r / l (the ladder requires
s_r = 1, hence exactly 1/l).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .diffusion import NoisedWindow, forward_noise_window, step_window
from .errors import ConfigError, StreamError
from .model import DenoiserInput
from .rng import TAG_CONTEXT, TAG_FORWARD, TAG_FRESH, TAG_POSTERIOR, KeyedRng
from .schedule import NoiseSchedule, ladder_levels, reduce_steps, rolling_levels


@dataclass
class OfsConfig:
    enabled: bool = False
    tau: float = 0.9

    def __post_init__(self):
        if not (-1.0 <= self.tau <= 1.0):
            raise ConfigError(f"tau must lie in [-1, 1], got {self.tau}")


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-9 or nb < 1e-9:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def ofs_smooth(block: np.ndarray, prev: np.ndarray, tau: float) -> np.ndarray:
    """Smooth a freshly emitted block against the previous emission.

    Index the frames [prev, block[0], ..., block[l-1]] from 0; for
    k = 1..l//2, when the frames at offsets 2k-2 and 2k point in nearly the
    same direction (cosine >= tau) the frame between them is replaced by
    their average.  Candidates sit at odd offsets and their neighbours at
    even ones, so replacements never feed later comparisons.  Near-zero-norm
    neighbours are left alone to avoid normalization blowups.
    """
    block = np.asarray(block, dtype=float)
    l = len(block)
    ext = np.concatenate([np.asarray(prev, dtype=float)[None, :], block], axis=0)
    for k in range(1, l // 2 + 1):
        a, b = ext[2 * k - 2], ext[2 * k]
        if min(np.linalg.norm(a), np.linalg.norm(b)) < 1e-9:
            continue
        if cosine_similarity(a, b) >= tau:
            ext[2 * k - 1] = (a + b) / 2.0
    return ext[1:]


@dataclass
class StreamReport:
    """Counting and timing facts for one streaming run."""

    frames: int
    l: int
    T_r: int
    s_r: int
    mode: str
    bootstrap_calls: int
    steady_calls: int
    latencies: np.ndarray = field(repr=False)
    total_time: float = 0.0

    @property
    def calls_per_frame(self) -> float:
        return self.steady_calls / self.frames if self.frames else 0.0

    @property
    def fps(self) -> float:
        return self.frames / self.total_time if self.total_time > 0 else 0.0

    def latency_quantile(self, q: float) -> float:
        return float(np.quantile(self.latencies, q)) if len(self.latencies) else 0.0


class RollingStreamer:
    """One streaming run's state and operations.

    Owns the window, the context buffer, and the keyed randomness; a single
    logical worker drives it.  The conditioning source is a callable
    idx -> vector; indices before the stream start are zero-filled
    internally, and an exhausted source (None return) aborts the stream
    naming the failing index.
    """

    def __init__(self, denoiser, sched: NoiseSchedule, N: int, n_cont: int,
                 idle: np.ndarray, cond_source, cond_dim: int, style: int = 0,
                 T_r: int | None = None, l: int = 1, mode: str = "ddpm",
                 ofs: OfsConfig | None = None, seed: int = 0,
                 context_noise_level: int = 1):
        if mode not in ("ddpm", "ddim"):
            raise ConfigError(f"mode must be ddpm or ddim, got {mode!r}")
        self.denoiser = denoiser
        T_r = sched.T if T_r is None else T_r
        self.reduced = reduce_steps(sched, T_r, N)
        self.rview = self.reduced.view()
        self.lmap = self.reduced.level_map
        self.sched = sched
        self.N = N
        self.n_cont = n_cont
        self.l = l
        self.mode = mode
        self.ofs = ofs or OfsConfig()
        self.style = style
        self.cond_dim = cond_dim
        self.context_noise_level = context_noise_level
        if l > 1:
            if N % l != 0:
                raise ConfigError(f"ladder size l={l} does not divide N={N}")
            if self.reduced.s_r != 1:
                raise ConfigError(
                    f"ladder sampling requires one denoise step per shift (T_r == N), "
                    f"got T_r={T_r}, N={N}")
            self.pattern = ladder_levels(N, l, 1).levels
        else:
            self.pattern = rolling_levels(T_r, N, self.reduced.s_r).levels
        self.idle = np.asarray(idle, dtype=float)
        self.dim = len(self.idle)
        self.keyed = KeyedRng(seed)
        self._cond_source = cond_source
        self._cond_cache: dict[int, np.ndarray] = {}

        # bootstrap: idle poses noised along the initial level ramp,
        # clean idle context, head at absolute position -N
        self.j = -N
        eps = self.keyed.normal_frames(TAG_FORWARD, np.arange(-N, 0),
                                       self.lmap[self.pattern], self.dim)
        self.window = forward_noise_window(
            np.tile(self.idle, (N, 1)), self.lmap[self.pattern], sched, eps=eps)
        # window levels live in reduced space from here on
        self.window = NoisedWindow(frames=self.window.frames, levels=self.pattern.copy())
        self.context = np.tile(self.idle, (n_cont, 1))
        self.emitted = 0
        self.calls = 0
        self.bootstrap_calls = 0
        self._last_emitted = self.idle.copy()
        self._frame_calls: dict[int, int] = {}
        self.collect_lifecycle = False  # opt-in; keeps steady-state memory O(N)
        self.lifecycle_log: list[tuple[int, int]] = []

    # -- conditioning ------------------------------------------------------

    def _cond(self, idx: int) -> np.ndarray:
        if idx < 0:
            return np.zeros(self.cond_dim)
        if idx not in self._cond_cache:
            vec = self._cond_source(idx)
            if vec is None:
                raise StreamError(f"conditioning underrun at index {idx}")
            self._cond_cache[idx] = np.asarray(vec, dtype=float)
        return self._cond_cache[idx]

    def _cond_slice(self) -> np.ndarray:
        out = np.stack([self._cond(i) for i in range(self.j - self.n_cont, self.j + self.N)])
        stale = [i for i in self._cond_cache if i < self.j - self.n_cont]
        for i in stale:
            del self._cond_cache[i]
        return out

    # -- core operations ---------------------------------------------------

    def denoiser_input(self) -> DenoiserInput:
        return DenoiserInput(context=self.context, window=self.window.frames,
                             levels=self.lmap[self.window.levels],
                             cond=self._cond_slice(), style=self.style,
                             context_level=self.context_noise_level)

    def _denoise(self) -> np.ndarray:
        positions = np.arange(self.j, self.j + self.N)
        if hasattr(self.denoiser, "positions"):
            self.denoiser.positions = positions
        xhat = self.denoiser.denoise(self.denoiser_input())
        self.calls += 1
        if self.emitted < self.N:
            self.bootstrap_calls += 1
        for p in positions:
            self._frame_calls[p] = self._frame_calls.get(int(p), 0) + 1
        return xhat

    def step_once(self, jump: int = 1) -> None:
        """One denoiser call, then step every window frame down `jump`
        reduced levels."""
        if np.any(self.window.levels < jump):
            raise ConfigError(f"levels {self.window.levels.tolist()} cannot drop by {jump}")
        xhat = self._denoise()
        to_base = self.lmap[self.window.levels - jump]
        eps = None
        if self.mode == "ddpm":
            eps = self.keyed.normal_frames(TAG_POSTERIOR, np.arange(self.j, self.j + self.N),
                                           to_base, self.dim)
        self.window = step_window(self.window, xhat, self.rview, jump=jump,
                                  deterministic=(self.mode == "ddim"), eps=eps)

    def roll(self) -> np.ndarray:
        """Emit the clean head block, refresh context, admit fresh noise.

        Returns the emitted frames ((l, dim)).  Emitted frames are re-noised
        to level 1 of the base schedule before entering the context buffer,
        and the window tail gains l pure-noise frames at the top level, which
        restores the steady per-frame level pattern exactly.
        """
        l = self.l
        if np.any(self.window.levels[:l] != 0):
            raise ConfigError(f"head block not clean: levels {self.window.levels[:l].tolist()}")
        block = self.window.frames[:l].copy()
        if self.ofs.enabled and l > 1:
            block = ofs_smooth(block, self._last_emitted, self.ofs.tau)
        positions = np.arange(self.j, self.j + l)
        if self.context_noise_level == 1:
            eps = self.keyed.normal_frames(TAG_CONTEXT, positions, 1, self.dim)
            ctx_new = (np.sqrt(self.sched.alpha_bar[1]) * block
                       + np.sqrt(1.0 - self.sched.alpha_bar[1]) * eps)
        else:
            ctx_new = block
        self.context = np.concatenate([self.context, ctx_new])[-self.n_cont:]
        fresh_pos = np.arange(self.j + self.N, self.j + self.N + l)
        fresh = self.keyed.normal_frames(TAG_FRESH, fresh_pos, self.sched.T, self.dim)
        frames = np.concatenate([self.window.frames[l:], fresh])
        self.window = NoisedWindow(frames=frames, levels=self.pattern.copy())
        for p in positions:
            count = self._frame_calls.pop(int(p))
            if self.collect_lifecycle:
                self.lifecycle_log.append((int(p), count))
        self._last_emitted = block[-1].copy()
        self.j += l
        self.emitted += l
        return block

    def run(self, n_frames: int, consumer=None) -> StreamReport:
        """Emit n_frames past the bootstrap pre-roll.

        The consumer (if given) is called once per emitted frame, in order;
        pre-roll frames never reach it.  Memory stays at O(N + n_cont)
        frames no matter how long the stream runs.
        """
        latencies = []
        start = time.perf_counter()
        steady_start = None
        while self.emitted < self.N + n_frames:
            t0 = time.perf_counter()
            if self.l == 1:
                for _ in range(self.reduced.s_r):
                    self.step_once(jump=1)
            else:
                self.step_once(jump=self.l)
            block = self.roll()
            dt = (time.perf_counter() - t0) / len(block)
            for i, frame in enumerate(block):
                pos = self.j - len(block) + i
                if pos < 0:
                    continue
                if steady_start is None:
                    steady_start = t0
                if pos < n_frames:
                    latencies.append(dt)
                    if consumer is not None:
                        consumer(frame)
        total = time.perf_counter() - (steady_start if steady_start is not None else start)
        return StreamReport(frames=n_frames, l=self.l, T_r=self.reduced.T_r,
                            s_r=self.reduced.s_r, mode=self.mode,
                            bootstrap_calls=self.bootstrap_calls,
                            steady_calls=self.calls - self.bootstrap_calls,
                            latencies=np.array(latencies), total_time=total)


def _collect(streamer: RollingStreamer, n_frames: int):
    out = np.empty((n_frames, streamer.dim))
    count = [0]

    def consumer(frame):
        out[count[0]] = frame
        count[0] += 1

    report = streamer.run(n_frames, consumer)
    return out, report


def stream(denoiser, sched: NoiseSchedule, N: int, n_cont: int, idle,
           cond_source, cond_dim: int, n_frames: int, T_r: int | None = None,
           mode: str = "ddpm", style: int = 0, seed: int = 0,
           context_noise_level: int = 1):
    """Plain rolling stream (one frame per window shift).

    Returns (frames (n_frames, dim), StreamReport).
    """
    streamer = RollingStreamer(denoiser, sched, N, n_cont, idle, cond_source,
                               cond_dim, style=style, T_r=T_r, l=1, mode=mode,
                               seed=seed, context_noise_level=context_noise_level)
    return _collect(streamer, n_frames)


def stream_rdla(denoiser, sched: NoiseSchedule, N: int, n_cont: int, idle,
                cond_source, cond_dim: int, n_frames: int, l: int,
                mode: str = "ddpm", ofs: OfsConfig | None = None, style: int = 0,
                seed: int = 0, context_noise_level: int = 1):
    """Ladder-accelerated stream: one call cleans an l-frame block.

    Requires the one-step-per-shift regime (the reduced step count equals
    N); with l = 1 this is exactly `stream`.
    """
    streamer = RollingStreamer(denoiser, sched, N, n_cont, idle, cond_source,
                               cond_dim, style=style, T_r=N, l=l, mode=mode,
                               ofs=ofs, seed=seed,
                               context_noise_level=context_noise_level)
    return _collect(streamer, n_frames)


def make_cond_source(cond: np.ndarray):
    """Conditioning source over a fixed array; None past the end."""
    cond = np.asarray(cond, dtype=float)

    def source(idx: int):
        return cond[idx] if idx < len(cond) else None

    return source


def zero_cond_source(cond_dim: int):
    def source(idx: int):
        return np.zeros(cond_dim)

    return source
