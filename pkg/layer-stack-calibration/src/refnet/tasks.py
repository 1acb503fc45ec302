"""
Two-dimensional synthetic classification tasks for the reference network,
plus additive-noise feature shift at fixed severity levels.
"""

import logging
import math
from typing import Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.config import default_seed

logger = logging.getLogger(__name__)

# noise standard deviation per severity level 1..5, in units of the feature scale
SHIFT_SEVERITIES: Tuple[float, ...] = (0.08, 0.12, 0.18, 0.26, 0.38)

MIXTURE_RADIUS = 3.0


class SyntheticTask(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["gaussian_mixture", "spiral"] = "spiral"
    n: int = Field(default=5000, ge=1)
    n_classes: int = Field(default=3, ge=2)
    noise: float = Field(default=0.05, ge=0.0)
    seed: int = Field(default_factory=default_seed)

    @model_validator(mode="after")
    def _enough_examples(self) -> "SyntheticTask":
        if self.n < self.n_classes:
            raise ValueError(f"n={self.n} must be at least n_classes={self.n_classes}")
        return self


def balanced_labels(n: int, n_classes: int, rng: np.random.Generator) -> np.ndarray:
    """Class counts differ by at most one, in shuffled order."""
    return rng.permutation(np.arange(n) % n_classes).astype(np.int64)


def _gaussian_mixture(labels: np.ndarray, n_classes: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    angles = 2.0 * math.pi * labels / n_classes
    means = MIXTURE_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return means + noise * rng.normal(size=means.shape)


def _spiral(labels: np.ndarray, n_classes: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    t = rng.random(labels.shape[0])
    radius = 0.1 + 0.9 * t
    theta = 2.0 * math.pi * labels / n_classes + 2.0 * math.pi * t + noise * rng.normal(size=t.shape)
    return np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)


def generate_task(task: SyntheticTask) -> Tuple[np.ndarray, np.ndarray]:
    """Features (n x 2, float64) and balanced labels, deterministic in task.seed."""
    rng = np.random.default_rng(task.seed)
    labels = balanced_labels(task.n, task.n_classes, rng)
    if task.kind == "gaussian_mixture":
        features = _gaussian_mixture(labels, task.n_classes, task.noise, rng)
    else:
        features = _spiral(labels, task.n_classes, task.noise, rng)
    logger.debug(f"Generated {task.kind} task: n={task.n}, K={task.n_classes}, noise={task.noise}")
    return features, labels


def shift_features(features: np.ndarray, severity: int, seed: int = 0) -> np.ndarray:
    """Add Gaussian noise of SHIFT_SEVERITIES[severity - 1] times the feature scale.

    Severity 0 returns an unchanged copy.
    """
    if not 0 <= severity <= len(SHIFT_SEVERITIES):
        raise ValueError(f"severity must lie in 0..{len(SHIFT_SEVERITIES)}, got {severity}")
    features = np.asarray(features, dtype=np.float64)
    if severity == 0:
        return features.copy()
    scale = float(np.std(features))
    rng = np.random.default_rng([seed, severity])
    sigma = SHIFT_SEVERITIES[severity - 1] * scale
    return features + sigma * rng.normal(size=features.shape)
