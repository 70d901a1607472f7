"""Synthetic sequence corpora, the on-disk sequence format, and engine
configuration loading."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import BadMagicError, ConfigError, TruncatedFileError, VersionError
from .schedule import LossWeighting

SEQ_MAGIC = b"RSTM"
SEQ_VERSION = 1
_HEADER = "<4sIQIIid"  # magic, version, L, dim, c, style, fps


@dataclass
class SequenceStore:
    """One stored sequence: pose frames, conditioning stream, style id, fps."""

    frames: np.ndarray   # (L, dim) float32
    cond: np.ndarray     # (L, c) float32
    style: int = 0
    fps: float = 20.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        self.cond = np.asarray(self.cond, dtype=np.float32)
        if self.frames.ndim != 2 or self.cond.ndim != 2:
            raise ConfigError("frames and cond must be 2-D (L, features)")
        if len(self.frames) != len(self.cond):
            raise ConfigError(
                f"frames ({len(self.frames)}) and cond ({len(self.cond)}) lengths differ")

    @property
    def L(self) -> int:
        return len(self.frames)

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def c(self) -> int:
        return self.cond.shape[1]


def save_sequence(store: SequenceStore, path) -> None:
    header = struct.pack(_HEADER, SEQ_MAGIC, SEQ_VERSION, store.L,
                         store.dim, store.c, store.style, store.fps)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(store.frames, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(store.cond, dtype="<f4").tobytes())


def load_sequence(path) -> SequenceStore:
    with open(path, "rb") as f:
        raw = f.read()
    head = struct.calcsize(_HEADER)
    if len(raw) < 4:
        raise BadMagicError(f"{path}: file too short to hold the magic bytes")
    if raw[:4] != SEQ_MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {SEQ_MAGIC!r}")
    if len(raw) < head:
        raise TruncatedFileError(f"{path}: header needs {head} bytes, file has {len(raw)}")
    _, version, L, dim, c, style, fps = struct.unpack_from(_HEADER, raw)
    if version != SEQ_VERSION:
        raise VersionError(f"{path}: version {version} unsupported (expected {SEQ_VERSION})")
    expected = head + 4 * L * (dim + c)
    if len(raw) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, file has {len(raw)}")
    frames = np.frombuffer(raw, dtype="<f4", count=L * dim, offset=head).reshape(L, dim)
    cond = np.frombuffer(raw, dtype="<f4", count=L * c, offset=head + 4 * L * dim).reshape(L, c)
    return SequenceStore(frames=frames.copy(), cond=cond.copy(), style=style, fps=fps)


def export_csv(store: SequenceStore, path) -> None:
    """Plain-text dump for eyeballing; one row per frame."""
    cols = [f"x{d}" for d in range(store.dim)] + [f"u{j}" for j in range(store.c)]
    data = np.concatenate([store.frames, store.cond], axis=1)
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for row in data:
            f.write(",".join(f"{v:.8g}" for v in row) + "\n")


# ---------------------------------------------------------------------------
# synthetic corpora

OBS_NOISE_STD = 0.02
STYLE_OFFSET_SCALE = 0.5


def gen_toy_corpus(num_sequences: int, L: int = 2000, dim: int = 12, c: int = 4,
                   styles: int = 3, seed: int = 0, fps: float = 20.0) -> list[SequenceStore]:
    """Deterministic toy gesture-like corpus.

    Conditioning channels are sinusoid mixtures with random phases under a
    slow amplitude envelope; poses are a second-order low-pass of a linear
    map of the conditioning, plus a per-style constant offset and small
    observation noise.  Style offsets are orthogonal with norm
    STYLE_OFFSET_SCALE, far above the observation noise, so style is
    recoverable from pose means.
    """
    if min(num_sequences, L, dim, c, styles) < 1:
        raise ConfigError("corpus sizes must be positive")
    if styles > dim:
        raise ConfigError(f"need styles <= dim for orthogonal offsets, got {styles} > {dim}")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    style_offsets = STYLE_OFFSET_SCALE * q[:styles]

    # each pose dim leans on one conditioning channel, with a light mixture
    mix = 0.15 * rng.standard_normal((c, dim))
    mix[np.arange(dim) % c, np.arange(dim)] += 1.0

    t = np.arange(L)
    out = []
    for i in range(num_sequences):
        style = i % styles
        freqs = rng.uniform(0.01, 0.12, size=(3, c))
        phases = rng.uniform(0, 2 * np.pi, size=(3, c))
        amps = rng.uniform(0.4, 1.0, size=(3, c))
        u = sum(amps[k] * np.sin(2 * np.pi * freqs[k] * t[:, None] + phases[k])
                for k in range(3))
        env_f = rng.uniform(0.002, 0.008)
        env = 0.6 + 0.4 * np.sin(2 * np.pi * env_f * t + rng.uniform(0, 2 * np.pi))
        u = u * env[:, None]

        drive = u @ mix
        rho = 0.8  # two-pole critically damped low-pass
        x = lfilter([(1 - rho) ** 2], [1.0, -2 * rho, rho * rho], drive, axis=0)
        x = x / max(np.std(x), 1e-9)
        x = x + style_offsets[style] + OBS_NOISE_STD * rng.standard_normal((L, dim))
        out.append(SequenceStore(frames=x, cond=u, style=style, fps=fps))
    return out


def gen_ar1_corpus(phi: float, sigma_x: float, L: int, seed: int = 0,
                   dim: int = 1, fps: float = 20.0) -> SequenceStore:
    """Stationary AR(1) draws, one independent chain per feature dim.

    Marginal variance is sigma_x^2 / (1 - phi^2).  Conditioning is a single
    zero channel (the process is unconditioned).
    """
    if not abs(phi) < 1:
        raise ConfigError(f"AR(1) coefficient must satisfy |phi| < 1, got {phi}")
    rng = np.random.default_rng(seed)
    v = sigma_x ** 2 / (1.0 - phi ** 2)
    x = np.empty((L, dim))
    x[0] = np.sqrt(v) * rng.standard_normal(dim)
    shocks = sigma_x * rng.standard_normal((L, dim))
    for k in range(1, L):
        x[k] = phi * x[k - 1] + shocks[k]
    return SequenceStore(frames=x, cond=np.zeros((L, 1)), style=0, fps=fps)


def idle_pose(store: SequenceStore, style_offsets: np.ndarray | None = None) -> np.ndarray:
    """Rest pose for a sequence's style: its long-run mean."""
    return store.frames.mean(axis=0).astype(float)


# ---------------------------------------------------------------------------
# engine configuration


@dataclass
class EngineConfig:
    """Every schedule / training / streaming knob, validated together."""

    T: int = 1000
    N: int = 100
    n_cont: int = 8
    beta1: float = 4e-5
    betaT: float = 2e-2
    T_r: int = 1000
    ladder_l: int = 1
    weighting: str = "uniform"
    lambda_min: float = 0.001
    lambda_max: float = 1.0
    lambda_inertial: float = 0.1
    context_noise_level: int = 1    # 0 disables context noising (ablation)
    epochs: int = 200
    steps_per_epoch: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 0.005
    dropout: float = 0.2
    hidden_width: int = 256
    time_embed_dim: int = 32
    ofs_enabled: bool = False
    ofs_tau: float = 0.9
    sample_mode: str = "ddpm"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.T % self.N != 0:
            raise ConfigError(f"T mod N != 0 (T={self.T}, N={self.N})")
        if self.T_r % self.N != 0:
            raise ConfigError(f"T_r mod N != 0 (T_r={self.T_r}, N={self.N})")
        if self.T_r > self.T:
            raise ConfigError(f"T_r={self.T_r} exceeds T={self.T}")
        if self.N % self.ladder_l != 0:
            raise ConfigError(f"N mod l != 0 (N={self.N}, l={self.ladder_l})")
        if self.ladder_l > 1 and self.T_r != self.N:
            raise ConfigError(
                f"ladder l={self.ladder_l} requires the one-step-per-shift regime T_r == N "
                f"(T_r={self.T_r}, N={self.N})")
        if not (0 < self.beta1 <= self.betaT < 1):
            raise ConfigError(f"betas must satisfy 0 < beta1 <= betaT < 1 "
                              f"(beta1={self.beta1}, betaT={self.betaT})")
        if self.n_cont < 1:
            raise ConfigError(f"n_cont must be >= 1, got {self.n_cont}")
        if self.lambda_inertial < 0:
            raise ConfigError(f"lambda_inertial must be >= 0, got {self.lambda_inertial}")
        if self.context_noise_level not in (0, 1):
            raise ConfigError(f"context_noise_level must be 0 or 1, got {self.context_noise_level}")
        if not (0 <= self.dropout < 1):
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not (-1.0 <= self.ofs_tau <= 1.0):
            raise ConfigError(f"ofs_tau must lie in [-1, 1], got {self.ofs_tau}")
        if self.weighting not in ("uniform", "clamped_snr"):
            raise ConfigError(f"weighting must be uniform or clamped_snr, got {self.weighting!r}")
        if self.sample_mode not in ("ddpm", "ddim"):
            raise ConfigError(f"sample_mode must be ddpm or ddim, got {self.sample_mode!r}")

    def loss_weighting(self) -> LossWeighting:
        return LossWeighting(self.weighting, self.lambda_min, self.lambda_max)


_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False,
               "yes": True, "no": False}


def _parse_value(kind, text: str, path, lineno: int):
    try:
        if kind is bool:
            word = text.strip().lower()
            if word not in _BOOL_WORDS:
                raise ValueError(f"not a boolean: {text!r}")
            return _BOOL_WORDS[word]
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text.strip()
    except ValueError as e:
        raise ConfigError(f"{path}:{lineno}: {e}") from e


def load_config(path) -> EngineConfig:
    """Parse the plain-text `key = value` config format.

    Blank lines and `#` comments are ignored; unknown keys are rejected;
    cross-field constraints are validated after all keys are read.
    """
    kinds = {f.name: type(getattr(EngineConfig, f.name)) for f in fields(EngineConfig)}
    values = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected `key = value`, got {line!r}")
        key, _, val = stripped.partition("=")
        key = key.strip()
        if key not in kinds:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(kinds[key], val, path, lineno)
    return EngineConfig(**values)


def save_config(cfg: EngineConfig, path) -> None:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(EngineConfig)]
    Path(path).write_text("\n".join(lines) + "\n")
