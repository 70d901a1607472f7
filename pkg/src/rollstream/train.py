"""Rolling-window training: window sampling, the squared-error objective,
the inertial (adjacent-residual) objective for ladder fine-tuning, and the
epoch loop with progressive ladder growth."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .data import EngineConfig, SequenceStore
from .diffusion import forward_noise, forward_noise_window
from .errors import ConfigError, TrainingError
from .model import Adam, DenoiserInput, MlpDenoiser
from .schedule import (LossWeighting, NoiseSchedule, ladder_phase_levels,
                       loss_weight, reduce_steps, rolling_levels)


def sample_training_window(seq: SequenceStore, N: int, n_cont: int, s: int,
                           rng: np.random.Generator):
    """Draw a window start j and head phase t0 for one training example.

    j is uniform on {n_cont, ..., L - N} so the context slice always exists;
    t0 is uniform on {1, ..., s}.  Returns (window frames, context frames,
    conditioning slice of length n_cont + N, j, t0), all clean.
    """
    L = seq.L
    if L < N + n_cont:
        raise ConfigError(f"sequence length {L} < N + n_cont = {N + n_cont}")
    j = int(rng.integers(n_cont, L - N + 1))
    t0 = int(rng.integers(1, s + 1))
    x0 = seq.frames[j:j + N].astype(float)
    ctx = seq.frames[j - n_cont:j].astype(float)
    cond = seq.cond[j - n_cont:j + N].astype(float)
    return x0, ctx, cond, j, t0


def base_loss(xhat: np.ndarray, x0: np.ndarray, levels, weighting: LossWeighting,
              sched: NoiseSchedule | None = None) -> float:
    """Sum over frames of a(t_n) * ||x0_n - xhat_n||^2."""
    xhat = np.asarray(xhat, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if xhat.shape != x0.shape:
        raise ConfigError(f"shape mismatch: {xhat.shape} vs {x0.shape}")
    if weighting.mode == "uniform":
        w = np.ones(len(x0))
    else:
        if sched is None:
            raise ConfigError("clamped_snr weighting needs the schedule")
        w = loss_weight(weighting, sched, np.asarray(levels))
    sq = ((x0 - xhat) ** 2).sum(axis=1)
    return float(np.dot(w, sq))


def base_loss_grad(xhat, x0, levels, weighting: LossWeighting,
                   sched: NoiseSchedule | None = None) -> np.ndarray:
    if weighting.mode == "uniform":
        w = np.ones(len(x0))
    else:
        w = loss_weight(weighting, sched, np.asarray(levels))
    return -2.0 * w[:, None] * (np.asarray(x0, float) - np.asarray(xhat, float))


def inertial_loss(xhat: np.ndarray, x0: np.ndarray, lam: float) -> float:
    """Squared-error sum minus 2*lam times the adjacent-residual inner
    products.  Correlated neighbouring residuals are rewarded, which damps
    frame-to-frame jitter; lam = 0 recovers the plain objective exactly
    (bit for bit: the base term reuses base_loss's summation)."""
    xhat = np.asarray(xhat, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    base = base_loss(xhat, x0, None, LossWeighting("uniform"))
    r = x0 - xhat
    cross = float((r[:-1] * r[1:]).sum())
    return base - 2.0 * lam * cross


def inertial_loss_grad(xhat, x0, lam: float) -> np.ndarray:
    r = np.asarray(x0, float) - np.asarray(xhat, float)
    g = -2.0 * r
    coupling = np.zeros_like(r)
    coupling[:-1] += r[1:]
    coupling[1:] += r[:-1]
    return g + 2.0 * lam * coupling


@dataclass
class TrainResult:
    step_losses: np.ndarray
    epoch_losses: np.ndarray
    wall_time: float


def _training_levels(cfg: EngineConfig, sched: NoiseSchedule, rng: np.random.Generator):
    """Per-frame base-schedule levels for one training window."""
    if cfg.ladder_l == 1:
        s = sched.T // cfg.N
        t0 = int(rng.integers(1, s + 1))
        levels = rolling_levels(sched.T, cfg.N, t0).levels
        if __debug__:
            n = np.arange(cfg.N)
            assert np.all((levels > s * n) & (levels <= s * (n + 1)))
        return levels, t0
    reduced = reduce_steps(sched, cfg.N, cfg.N)
    t0l = int(rng.integers(1, cfg.ladder_l + 1))
    levels = ladder_phase_levels(cfg.N, cfg.ladder_l, t0l)
    return reduced.level_map[levels], t0l


def train_epochs(model: MlpDenoiser, dataset: list[SequenceStore], cfg: EngineConfig,
                 sched: NoiseSchedule, log=None) -> TrainResult:
    """Run cfg.epochs epochs of cfg.steps_per_epoch optimizer steps.

    Each step samples cfg.batch_size windows independently, noises context
    frames at level cfg.context_noise_level and window frames at rolling (or
    ladder) levels, and takes one adaptive-moment step on the objective:
    the weighted squared error for l = 1, the inertial objective for ladder
    stages.  Deterministic given (seed, dataset, config).
    """
    if not dataset:
        raise ConfigError("dataset is empty")
    if model.window != cfg.N or model.n_cont != cfg.n_cont:
        raise ConfigError(
            f"model built for (N={model.window}, n_cont={model.n_cont}) but config says "
            f"(N={cfg.N}, n_cont={cfg.n_cont})")
    if cfg.context_noise_level == 0:
        warnings.warn("context noising disabled (context_noise_level = 0); "
                      "the default applies minimal level-1 noise", stacklevel=2)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model, lr=cfg.learning_rate)
    weighting = cfg.loss_weighting()
    s = sched.T // cfg.N
    start = time.perf_counter()
    step_losses = []
    epoch_losses = []
    out_dim = cfg.N * model.dim
    for epoch in range(cfg.epochs):
        epoch_sum = 0.0
        for _ in range(cfg.steps_per_epoch):
            feats = np.empty((cfg.batch_size, model.input_size()))
            x0s = np.empty((cfg.batch_size, cfg.N, model.dim))
            level_rows = np.empty((cfg.batch_size, cfg.N), dtype=int)
            for b in range(cfg.batch_size):
                seq = dataset[int(rng.integers(len(dataset)))]
                x0, ctx, cond, _, _ = sample_training_window(seq, cfg.N, cfg.n_cont, s, rng)
                levels, _ = _training_levels(cfg, sched, rng)
                noisy = forward_noise_window(x0, levels, sched, rng)
                # the level-0 ablation still draws (and discards) the context
                # noise so both arms of the comparison see identical batches
                ctx_noised = forward_noise_window(
                    ctx, np.ones(cfg.n_cont, dtype=int), sched, rng).frames
                ctx_in = ctx_noised if cfg.context_noise_level == 1 else ctx
                inp = DenoiserInput(context=ctx_in, window=noisy.frames, levels=levels,
                                    cond=cond, style=seq.style,
                                    context_level=cfg.context_noise_level)
                feats[b] = model.features(inp)
                x0s[b] = x0
                level_rows[b] = levels

            out, cache = model.forward_batch(feats, dropout=cfg.dropout, rng=rng)
            xhat = out.reshape(cfg.batch_size, cfg.N, model.dim)
            dout = np.empty_like(xhat)
            loss = 0.0
            for b in range(cfg.batch_size):
                if cfg.ladder_l == 1:
                    loss += base_loss(xhat[b], x0s[b], level_rows[b], weighting, sched)
                    dout[b] = base_loss_grad(xhat[b], x0s[b], level_rows[b], weighting, sched)
                else:
                    loss += inertial_loss(xhat[b], x0s[b], cfg.lambda_inertial)
                    dout[b] = inertial_loss_grad(xhat[b], x0s[b], cfg.lambda_inertial)
            loss /= cfg.batch_size
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at step {opt.step + 1} (epoch {epoch + 1})")
            dW, db = model.backward_batch(cache, dout.reshape(cfg.batch_size, out_dim)
                                          / cfg.batch_size)
            if cfg.weight_decay > 0.0:
                for g, w in zip(dW, model.weights):
                    g += cfg.weight_decay * w
            opt.update(model, dW, db)
            step_losses.append(loss)
            epoch_sum += loss
            if log is not None:
                log(opt.step, loss, time.perf_counter() - start)
        epoch_losses.append(epoch_sum / cfg.steps_per_epoch)
    return TrainResult(step_losses=np.array(step_losses),
                       epoch_losses=np.array(epoch_losses),
                       wall_time=time.perf_counter() - start)


def evaluate_loss(denoiser, dataset: list[SequenceStore], cfg: EngineConfig,
                  sched: NoiseSchedule, n_windows: int = 200,
                  seed: int = 1234) -> float:
    """Mean training objective of an arbitrary denoiser, no updates."""
    rng = np.random.default_rng(seed)
    weighting = cfg.loss_weighting()
    s = sched.T // cfg.N
    total = 0.0
    for _ in range(n_windows):
        seq = dataset[int(rng.integers(len(dataset)))]
        x0, ctx, cond, _, _ = sample_training_window(seq, cfg.N, cfg.n_cont, s, rng)
        levels, _ = _training_levels(cfg, sched, rng)
        noisy = forward_noise_window(x0, levels, sched, rng)
        if cfg.context_noise_level == 1:
            ctx = forward_noise_window(ctx, np.ones(cfg.n_cont, dtype=int), sched, rng).frames
        inp = DenoiserInput(context=ctx, window=noisy.frames, levels=levels,
                            cond=cond, style=seq.style, context_level=cfg.context_noise_level)
        xhat = denoiser.denoise(inp)
        total += base_loss(xhat, x0, levels, weighting, sched)
    return total / n_windows


def progressive_finetune(model: MlpDenoiser, dataset: list[SequenceStore],
                         cfg: EngineConfig, sched: NoiseSchedule,
                         ladder_seq=(2, 4), stage_contexts=None,
                         stage_epochs=None, log=None):
    """Fine-tune through increasing ladder sizes, e.g. l = 2 then 4.

    Stage i trains with block-constant noising and the inertial objective,
    starting from the previous stage's weights; the context may widen per
    stage (new input weights start at zero so the function is unchanged at
    the handoff).  Returns [(l, model, TrainResult), ...].
    """
    if stage_contexts is not None and len(stage_contexts) != len(ladder_seq):
        raise ConfigError("stage_contexts must match ladder_seq in length")
    stages = []
    current = model
    for i, l in enumerate(ladder_seq):
        if cfg.N % l != 0:
            raise ConfigError(f"ladder size {l} does not divide N={cfg.N}")
        n_cont = stage_contexts[i] if stage_contexts is not None else current.n_cont
        current = current.widen_context(n_cont)
        stage_cfg = replace(cfg, ladder_l=l, T_r=cfg.N, n_cont=n_cont,
                            epochs=(stage_epochs[i] if stage_epochs else cfg.epochs))
        result = train_epochs(current, dataset, stage_cfg, sched, log=log)
        stages.append((l, current, result))
    return stages
