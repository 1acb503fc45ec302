import os
import logging
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

from .interfaces import AggInit, LossKind

logger = logging.getLogger(__name__)

# Load environment variables from .env file
load_dotenv()

FALLBACK_SEED = 0


def default_seed() -> int:
    """Seed used whenever none is given; LATES_SEED overrides it."""
    raw = os.environ.get("LATES_SEED")
    if raw is None or raw.strip() == "":
        return FALLBACK_SEED
    try:
        return int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer LATES_SEED={raw!r}")
        return FALLBACK_SEED


def default_jobs() -> int:
    raw = os.environ.get("LATES_JOBS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            logger.warning(f"Ignoring non-integer LATES_JOBS={raw!r}")
    return os.cpu_count() or 1


def default_log_level() -> str:
    return os.environ.get("LATES_LOG_LEVEL", "INFO").upper()


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class SplitSpec(_Frozen):
    """Fractions of a dump assigned to the train and holdout splits."""

    train_fraction: float = Field(default=0.9, gt=0.0, le=1.0)
    holdout_fraction: float = Field(default=0.1, ge=0.0, lt=1.0)
    seed: int = Field(default_factory=default_seed)
    stratify: bool = False

    @model_validator(mode="after")
    def _fractions_fit(self) -> "SplitSpec":
        if self.train_fraction + self.holdout_fraction > 1.0 + 1e-12:
            raise ValueError(
                f"train_fraction + holdout_fraction must be <= 1, got "
                f"{self.train_fraction} + {self.holdout_fraction}"
            )
        return self


class PoolSpec(_Frozen):
    kind: str = Field(default="average", pattern="^average$")
    output_dim: PositiveInt


class ProbeTrainConfig(_Frozen):
    """Mini-batch SGD settings for the per-layer linear probes."""

    learning_rate: float = Field(default=0.01, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    epochs: int = Field(default=50, ge=1)
    decay_factor: float = Field(default=0.5, gt=0.0, le=1.0)
    decay_every: PositiveInt = 10
    batch_size: PositiveInt = 128
    pool_dim: PositiveInt = 512
    weight_decay: float = Field(default=0.0, ge=0.0)
    seed: int = Field(default_factory=default_seed)

    def learning_rate_at(self, epoch: int) -> float:
        """Step-decayed rate for a 0-based epoch."""
        return self.learning_rate * self.decay_factor ** (epoch // self.decay_every)


class AggTrainConfig(_Frozen):
    """Projected SGD settings for the stack aggregator.

    batch_size = 0 (the default) means full-batch gradient descent over the
    holdout. init picks the starting point: "identity" is β₀ = (0, ..., 0, 1),
    "temperature" is (0, ..., 0, 1/τ*) with τ* fitted on the same holdout.
    patience, when set, stops once the epoch-end holdout loss has not improved
    for that many epochs.
    """

    learning_rate: float = Field(default=0.005, gt=0.0)
    epochs: int = Field(default=50, ge=0)
    batch_size: int = Field(default=0, ge=0)
    momentum: float = Field(default=0.0, ge=0.0, lt=1.0)
    ridge: float = Field(default=0.0, ge=0.0)
    patience: Optional[PositiveInt] = None
    loss_kind: LossKind = "nll"
    init: AggInit = "identity"
    seed: int = Field(default_factory=default_seed)
