"""Noise-level arithmetic: variance schedules, rolling and ladder level
patterns, reduced-step remapping, and loss weighting.

Levels are discrete: 0 means clean data, T means (nearly) pure noise.  A
rolling window of N frames spaces its per-frame levels by the step s = T/N,
so one full descent of the head frame takes s denoiser calls.  A ladder with
block size l flattens the per-frame pattern into blocks of l equal levels so
one call can clean l frames at once.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# default variance endpoints: beta1 pinned by the required level-1 context
# noise variance (sigma2[1] == beta1), betaT the conventional ceiling
DEFAULT_BETA1 = 4e-5
DEFAULT_BETAT = 2e-2


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-level variance tables.

    beta/alpha are indexed 1..T (stored in arrays of length T+1 with a
    zero-th padding entry so indices match the level numbering);
    alpha_bar[0..T] is the running product with alpha_bar[0] = 1.
    """

    T: int
    beta: np.ndarray        # beta[0] unused padding; beta[t] for t in 1..T
    alpha: np.ndarray       # alpha[t] = 1 - beta[t]
    alpha_bar: np.ndarray   # alpha_bar[t] = prod_{u<=t} alpha[u]; alpha_bar[0] = 1

    def __post_init__(self):
        if np.any(np.diff(self.alpha_bar) >= 0):
            raise ConfigError("alpha_bar must be strictly decreasing")

    @property
    def sigma2(self) -> np.ndarray:
        """Marginal noise variance 1 - alpha_bar[t] per level."""
        return 1.0 - self.alpha_bar

    def snr(self, t) -> np.ndarray:
        """Signal-to-noise ratio alpha_bar[t] / (1 - alpha_bar[t])."""
        ab = self.alpha_bar[t]
        return ab / (1.0 - ab)


def build_schedule(T: int, beta1: float = DEFAULT_BETA1, betaT: float = DEFAULT_BETAT,
                   shape: str = "linear") -> NoiseSchedule:
    """Build the variance tables for T discrete noise levels.

    beta rises linearly from beta1 to betaT.  sigma2[1] == beta1 by
    construction, which is how the level-1 context-noise variance is
    configured.  A production-size schedule should end nearly signal-free
    (alpha_bar[T] < 1e-4); tiny toy schedules may not, so that check only
    warns.
    """
    if T < 2:
        raise ConfigError(f"need at least 2 levels, got T={T}")
    if not (0.0 < beta1 <= betaT < 1.0):
        raise ConfigError(f"betas must satisfy 0 < beta1 <= betaT < 1, got ({beta1}, {betaT})")
    if shape != "linear":
        raise ConfigError(f"unsupported schedule shape {shape!r}")

    beta = np.zeros(T + 1)
    beta[1:] = np.linspace(beta1, betaT, T)
    alpha = 1.0 - beta
    alpha_bar = np.ones(T + 1)
    alpha_bar[1:] = np.cumprod(alpha[1:])
    if alpha_bar[T] >= 1e-4:
        warnings.warn(
            f"alpha_bar[T]={alpha_bar[T]:.3g} >= 1e-4: level T is not signal-free; "
            "fine for toy schedules, not for generation",
            stacklevel=2,
        )
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


@dataclass(frozen=True)
class RollingLevels:
    """Per-frame levels of a rolling window: levels[n] = t0 + n*s."""

    T: int
    N: int
    t0: int
    levels: np.ndarray = field(repr=False)

    @property
    def s(self) -> int:
        return self.T // self.N


def rolling_levels(T: int, N: int, t0: int) -> RollingLevels:
    """Assign window frame n the level t0 + n*s with s = T/N.

    The window length must divide T so the per-frame level gap is uniform;
    the head phase t0 cycles s, s-1, ..., 1 between emissions.
    """
    if N < 1 or T % N != 0:
        raise ConfigError(f"window must divide the level count: T={T} mod N={N} != 0")
    s = T // N
    if not (1 <= t0 <= s):
        raise ConfigError(f"phase t0={t0} outside [1, {s}]")
    levels = t0 + np.arange(N) * s
    return RollingLevels(T=T, N=N, t0=t0, levels=levels)


@dataclass(frozen=True)
class LadderLevels:
    """Block-constant window levels for block size l.

    Block k (frames k*l .. (k+1)*l - 1) carries the level t0l + (k+1)*l - 1,
    i.e. the last level of that block under the one-frame-per-level pattern.
    With t0l = 1 the top block sits exactly at level N, so sampling still
    starts from zero signal-to-noise ratio.
    """

    N: int
    l: int
    t0l: int
    block_levels: np.ndarray = field(repr=False)
    levels: np.ndarray = field(repr=False)   # per frame, length N


def ladder_levels(N: int, l: int, t0l: int = 1) -> LadderLevels:
    if l < 1 or N % l != 0:
        raise ConfigError(f"block size must divide the window: N={N} mod l={l} != 0")
    if not (1 <= t0l <= l):
        raise ConfigError(f"ladder phase t0l={t0l} outside [1, {l}]")
    k = np.arange(N // l)
    block_levels = t0l + (k + 1) * l - 1
    levels = np.repeat(block_levels, l)
    return LadderLevels(N=N, l=l, t0l=t0l, block_levels=block_levels, levels=levels)


def ladder_phase_levels(N: int, l: int, phase: int) -> np.ndarray:
    """Per-frame levels of an in-range ladder phase, block k at k*l + phase.

    The canonical ladder formula only stays within [1, N] at its first
    phase; every other phase pushes the top block past the level count.
    These are the equivalent in-bounds phases, the states a unit-step
    descent would pass through between two ladder iterations: phase = l is
    exactly ladder_levels(N, l, 1), and phase = 1 sits one step above the
    fully-clean bottom block.  Training samples phase uniformly so the
    model sees the whole family.
    """
    if l < 1 or N % l != 0:
        raise ConfigError(f"block size must divide the window: N={N} mod l={l} != 0")
    if not (1 <= phase <= l):
        raise ConfigError(f"ladder phase {phase} outside [1, {l}]")
    return np.repeat(np.arange(N // l) * l + phase, l)


@dataclass(frozen=True)
class ReducedSchedule:
    """Evenly strided subset of a schedule's levels for cheaper sampling.

    level_map sends reduced levels {0..T_r} onto base levels {0..T} with
    both endpoints kept.  view() exposes the subsampled tables as a
    schedule of their own, so every sampling kernel works unchanged in
    reduced-level space.
    """

    base: NoiseSchedule
    T_r: int
    N: int
    level_map: np.ndarray = field(repr=False)

    @property
    def s_r(self) -> int:
        return self.T_r // self.N

    def view(self) -> NoiseSchedule:
        alpha_bar = self.base.alpha_bar[self.level_map]
        alpha = np.ones(self.T_r + 1)
        alpha[1:] = alpha_bar[1:] / alpha_bar[:-1]
        beta = 1.0 - alpha
        beta[0] = 0.0
        return NoiseSchedule(T=self.T_r, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def reduce_steps(sched: NoiseSchedule, T_r: int, N: int) -> ReducedSchedule:
    if N < 1 or T_r % N != 0:
        raise ConfigError(f"reduced steps must divide evenly: T_r={T_r} mod N={N} != 0")
    if T_r > sched.T:
        raise ConfigError(f"T_r={T_r} exceeds T={sched.T}")
    level_map = np.rint(np.arange(T_r + 1) * (sched.T / T_r)).astype(int)
    level_map[0], level_map[-1] = 0, sched.T
    if np.any(np.diff(level_map) <= 0):
        raise ConfigError(f"reduced level map is not strictly increasing for T_r={T_r}")
    return ReducedSchedule(base=sched, T_r=T_r, N=N, level_map=level_map)


@dataclass(frozen=True)
class LossWeighting:
    """Per-level training-loss weight a(t).

    uniform: a(t) = 1 everywhere (the default objective).
    clamped_snr: a(t) = clamp(alpha_bar[t] / (1 - alpha_bar[t]), lambda_min,
    lambda_max), i.e. the signal-to-noise ratio clamped to a band.
    """

    mode: str = "uniform"
    lambda_min: float = 0.001
    lambda_max: float = 1.0

    def __post_init__(self):
        if self.mode not in ("uniform", "clamped_snr"):
            raise ConfigError(f"unknown weighting mode {self.mode!r}")
        if self.mode == "clamped_snr" and self.lambda_min > self.lambda_max:
            raise ConfigError("lambda_min must not exceed lambda_max")


def loss_weight(w: LossWeighting, sched: NoiseSchedule, t) -> np.ndarray | float:
    """Evaluate the weighting at level(s) t; t may be a scalar or array."""
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > sched.T):
        raise ConfigError(f"level out of range [1, {sched.T}]")
    if w.mode == "uniform":
        out = np.ones(t.shape)
    else:
        out = np.clip(sched.snr(t), w.lambda_min, w.lambda_max)
    return out if out.ndim else float(out)
