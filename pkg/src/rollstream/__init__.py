"""Streaming rolling-diffusion engine.

A rolling window of N frames carries noise levels that rise toward the
future; each denoiser call steps every frame down one level, emitting a
clean frame per window shift.  A ladder of block size l flattens the levels
into blocks so one call cleans l frames at once, cutting denoiser calls per
frame to 1/l.
"""

from .data import (EngineConfig, SequenceStore, gen_ar1_corpus, gen_toy_corpus,
                   load_config, load_sequence, save_sequence)
from .diffusion import (NoisedWindow, forward_noise, forward_noise_window,
                        posterior_step, step_window)
from .metrics import (FeatureDistribution, diversity, fit_distribution,
                      frechet_distance, mse_static_kinetic)
from .model import (Adam, Ar1OracleDenoiser, DenoiserInput, MlpDenoiser,
                    PaddedDenoiser, load_checkpoint, save_checkpoint, time_embed)
from .schedule import (LadderLevels, LossWeighting, NoiseSchedule, ReducedSchedule,
                       RollingLevels, build_schedule, ladder_levels, loss_weight,
                       reduce_steps, rolling_levels)
from .stream import (OfsConfig, RollingStreamer, StreamReport, make_cond_source,
                     ofs_smooth, stream, stream_rdla, zero_cond_source)
from .train import (TrainResult, base_loss, evaluate_loss, inertial_loss,
                    progressive_finetune, sample_training_window, train_epochs)

__version__ = "0.1.0"

__all__ = [
    "Adam", "Ar1OracleDenoiser", "DenoiserInput", "EngineConfig",
    "FeatureDistribution", "LadderLevels", "LossWeighting", "MlpDenoiser",
    "NoiseSchedule", "NoisedWindow", "OfsConfig", "PaddedDenoiser",
    "ReducedSchedule", "RollingLevels", "RollingStreamer", "SequenceStore",
    "StreamReport", "TrainResult", "base_loss", "build_schedule", "diversity",
    "evaluate_loss", "fit_distribution", "forward_noise", "forward_noise_window",
    "frechet_distance", "gen_ar1_corpus", "gen_toy_corpus", "inertial_loss",
    "ladder_levels", "load_checkpoint", "load_config", "load_sequence",
    "loss_weight", "make_cond_source", "mse_static_kinetic", "ofs_smooth",
    "posterior_step", "progressive_finetune", "reduce_steps", "rolling_levels",
    "sample_training_window", "save_checkpoint", "save_sequence", "step_window",
    "stream", "stream_rdla", "time_embed", "train_epochs", "zero_cond_source",
]
