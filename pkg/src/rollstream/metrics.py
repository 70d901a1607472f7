"""Motion-quality metrics: Gaussian Fréchet distances, pairwise diversity,
and static/kinetic mean squared error.

Geometric variants look at raw pose frames; kinetic variants look at
consecutive frame differences, so they score motion dynamics rather than
held poses.  All metrics here operate on raw pose feature vectors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

GEOMETRIC = "geometric"
KINETIC = "kinetic"


def _features(frames: np.ndarray, kind: str) -> np.ndarray:
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 2 or len(frames) < 2:
        raise ConfigError(f"need at least 2 frames in a 2-D array, got shape {frames.shape}")
    if kind == GEOMETRIC:
        return frames
    if kind == KINETIC:
        return np.diff(frames, axis=0)
    raise ConfigError(f"kind must be {GEOMETRIC!r} or {KINETIC!r}, got {kind!r}")


@dataclass
class FeatureDistribution:
    mean: np.ndarray
    cov: np.ndarray
    count: int
    kind: str


def fit_distribution(frames: np.ndarray, kind: str = GEOMETRIC) -> FeatureDistribution:
    """Sample mean and covariance of the frames (or their differences)."""
    feats = _features(frames, kind)
    n, d = feats.shape
    if n < d + 1:
        warnings.warn(f"only {n} samples for a {d}-dim covariance; estimate is rank-deficient",
                      stacklevel=2)
    mean = feats.mean(axis=0)
    centered = feats - mean
    cov = centered.T @ centered / max(n - 1, 1)
    return FeatureDistribution(mean=mean, cov=cov, count=n, kind=kind)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues in [-1e-8, 0) are treated as roundoff and clipped to zero;
    anything more negative is a hard error.
    """
    sym = (mat + mat.T) / 2.0
    w, U = np.linalg.eigh(sym)
    if np.any(w < -1e-8):
        raise ConfigError(f"matrix square root failed: eigenvalue {w.min():.3g} < -1e-8")
    w = np.clip(w, 0.0, None)
    return (U * np.sqrt(w)) @ U.T


def frechet_distance(a: FeatureDistribution, b: FeatureDistribution) -> float:
    """||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    The cross term uses tr((S_a S_b)^{1/2}) = tr((sqrt(S_a) S_b sqrt(S_a))^{1/2}),
    keeping every decomposition symmetric and deterministic.
    """
    if a.mean.shape != b.mean.shape:
        raise ConfigError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    if a.kind != b.kind:
        raise ConfigError(f"kind mismatch: {a.kind} vs {b.kind}")
    diff = a.mean - b.mean
    root_a = _psd_sqrt(a.cov)
    cross = _psd_sqrt(root_a @ b.cov @ root_a)
    return float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross))


def diversity(frames: np.ndarray, kind: str = GEOMETRIC,
              pair_count: int | None = None,
              rng: np.random.Generator | None = None) -> float:
    """Mean pairwise L2 distance between frames (or frame differences).

    pair_count = None enumerates every unordered pair exactly (order
    independent); otherwise that many random pairs are sampled from the
    supplied generator.
    """
    feats = _features(frames, kind)
    n = len(feats)
    if pair_count is None:
        total = 0.0
        for i in range(n - 1):
            total += np.linalg.norm(feats[i + 1:] - feats[i], axis=1).sum()
        return total / (n * (n - 1) / 2)
    if rng is None:
        raise ConfigError("sampled diversity needs a random generator")
    i = rng.integers(0, n, size=pair_count)
    j = rng.integers(0, n - 1, size=pair_count)
    j = np.where(j >= i, j + 1, j)  # j != i, uniform over the rest
    return float(np.linalg.norm(feats[i] - feats[j], axis=1).mean())


def mse_static_kinetic(pred: np.ndarray, ref: np.ndarray) -> tuple[float, float]:
    """(mean per-frame squared error, same for first differences)."""
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if pred.shape != ref.shape:
        raise ConfigError(f"shape mismatch: {pred.shape} vs {ref.shape}")
    mse_s = float(((pred - ref) ** 2).sum(axis=1).mean())
    dp, dr = np.diff(pred, axis=0), np.diff(ref, axis=0)
    mse_k = float(((dp - dr) ** 2).sum(axis=1).mean())
    return mse_s, mse_k
