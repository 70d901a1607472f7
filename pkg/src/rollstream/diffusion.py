"""Gaussian diffusion kernels.

Forward corruption at a level t draws sqrt(alpha_bar[t]) * x0 +
sqrt(1 - alpha_bar[t]) * eps.  The reverse step conditions on the current
noisy frame and a clean-signal estimate xhat and moves to any lower level in
one jump; with t_to = t_from - 1 it is the textbook single-step posterior,
and larger jumps use the same Gaussian conditioning through the ratio
r = alpha_bar[t_from] / alpha_bar[t_to].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .schedule import NoiseSchedule


@dataclass
class NoisedWindow:
    """A window of frames with their per-frame noise levels."""

    frames: np.ndarray   # (N, dim)
    levels: np.ndarray   # (N,) ints
    epsilon_cache: np.ndarray | None = None  # optional draws kept for tests

    def __post_init__(self):
        if len(self.frames) != len(self.levels):
            raise ConfigError(
                f"frames/levels length mismatch: {len(self.frames)} vs {len(self.levels)}")


def _check_level(t, T):
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t > T):
        raise ConfigError(f"level out of range [0, {T}]")


def forward_noise(x0: np.ndarray, t: int, sched: NoiseSchedule,
                  rng: np.random.Generator | None = None,
                  eps: np.ndarray | None = None) -> np.ndarray:
    """Corrupt x0 to level t.  t = 0 returns x0 unchanged."""
    _check_level(t, sched.T)
    x0 = np.asarray(x0, dtype=float)
    if t == 0:
        return x0.copy()
    if eps is None:
        eps = rng.standard_normal(x0.shape)
    ab = sched.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def forward_noise_window(x0s: np.ndarray, levels, sched: NoiseSchedule,
                         rng: np.random.Generator | None = None,
                         eps: np.ndarray | None = None) -> NoisedWindow:
    """Corrupt each frame independently at its own level."""
    x0s = np.asarray(x0s, dtype=float)
    levels = np.asarray(levels)
    if len(x0s) != len(levels):
        raise ConfigError(f"length mismatch: {len(x0s)} frames, {len(levels)} levels")
    _check_level(levels, sched.T)
    if eps is None:
        eps = rng.standard_normal(x0s.shape)
    ab = sched.alpha_bar[levels][:, None]
    frames = np.sqrt(ab) * x0s + np.sqrt(1.0 - ab) * eps
    frames[levels == 0] = x0s[levels == 0]
    return NoisedWindow(frames=frames, levels=levels.copy(), epsilon_cache=eps)


def posterior_coeffs(sched: NoiseSchedule, t_from, t_to):
    """(xhat coefficient, x_t coefficient, variance) of the reverse Gaussian.

    mean = A * xhat + B * x_t with
      r = alpha_bar[t_from] / alpha_bar[t_to]
      A = sqrt(alpha_bar[t_to]) * (1 - r) / (1 - alpha_bar[t_from])
      B = sqrt(r) * (1 - alpha_bar[t_to]) / (1 - alpha_bar[t_from])
      var = (1 - r) * (1 - alpha_bar[t_to]) / (1 - alpha_bar[t_from])
    """
    ab_f = sched.alpha_bar[t_from]
    ab_t = sched.alpha_bar[t_to]
    r = ab_f / ab_t
    denom = 1.0 - ab_f
    A = np.sqrt(ab_t) * (1.0 - r) / denom
    B = np.sqrt(r) * (1.0 - ab_t) / denom
    var = (1.0 - r) * (1.0 - ab_t) / denom
    return A, B, var


def posterior_step(xt: np.ndarray, xhat: np.ndarray, t_from: int, t_to: int,
                   sched: NoiseSchedule, rng: np.random.Generator | None = None,
                   deterministic: bool = False,
                   eps: np.ndarray | None = None) -> np.ndarray:
    """One reverse move t_from -> t_to (any jump size).

    Stochastic mode samples the Gaussian conditioned on (xt, xhat);
    deterministic mode recovers the noise direction from (xt, xhat) and
    re-corrupts xhat with it, with no fresh randomness.  t_to = 0 returns
    xhat exactly in both modes.
    """
    if not (0 <= t_to < t_from <= sched.T):
        raise ConfigError(f"need 0 <= t_to < t_from <= {sched.T}, got ({t_from}, {t_to})")
    xt = np.asarray(xt, dtype=float)
    xhat = np.asarray(xhat, dtype=float)
    if t_to == 0:
        return xhat.copy()
    if deterministic:
        ab_f = sched.alpha_bar[t_from]
        ab_t = sched.alpha_bar[t_to]
        eps_hat = (xt - np.sqrt(ab_f) * xhat) / np.sqrt(1.0 - ab_f)
        return np.sqrt(ab_t) * xhat + np.sqrt(1.0 - ab_t) * eps_hat
    A, B, var = posterior_coeffs(sched, t_from, t_to)
    if eps is None:
        eps = rng.standard_normal(xt.shape)
    return A * xhat + B * xt + np.sqrt(var) * eps


def step_window(w: NoisedWindow, xhat: np.ndarray, sched: NoiseSchedule,
                rng: np.random.Generator | None = None, jump: int = 1,
                deterministic: bool = False,
                eps: np.ndarray | None = None) -> NoisedWindow:
    """Step every frame of the window down by `jump` levels at once."""
    if jump < 1:
        raise ConfigError(f"jump must be >= 1, got {jump}")
    levels = w.levels
    to = levels - jump
    if np.any(to < 0):
        raise ConfigError(f"jump {jump} would push levels {levels.tolist()} below 0")
    xhat = np.asarray(xhat, dtype=float)
    frames = np.empty_like(w.frames)

    active = to > 0
    if np.any(active):
        if deterministic:
            ab_f = sched.alpha_bar[levels[active]][:, None]
            ab_t = sched.alpha_bar[to[active]][:, None]
            eps_hat = (w.frames[active] - np.sqrt(ab_f) * xhat[active]) / np.sqrt(1.0 - ab_f)
            frames[active] = np.sqrt(ab_t) * xhat[active] + np.sqrt(1.0 - ab_t) * eps_hat
        else:
            A, B, var = posterior_coeffs(sched, levels[active], to[active])
            if eps is None:
                eps = rng.standard_normal(w.frames.shape)
            frames[active] = (A[:, None] * xhat[active] + B[:, None] * w.frames[active]
                              + np.sqrt(var)[:, None] * eps[active])
    frames[~active] = xhat[~active]
    return NoisedWindow(frames=frames, levels=to)
