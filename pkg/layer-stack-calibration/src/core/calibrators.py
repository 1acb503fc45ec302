import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .config import AggTrainConfig
from .errors import DataError, DimensionMismatchError
from .fileio import PathLike, atomic_write_text
from .interfaces import Calibrator, CalibratorKind, LossKind
from .stack import (
    AggregatorWeights,
    LogitStack,
    TemperatureModel,
    fit_lates,
    fit_temperature,
    lates_predict,
)

logger = logging.getLogger(__name__)


class CalibratorFile(BaseModel):
    """On-disk JSON description of a fitted calibrator."""
    model_config = ConfigDict(extra="forbid")

    kind: CalibratorKind
    beta: Optional[List[float]] = None
    tau: Optional[float] = Field(default=None, gt=0)
    loss: LossKind = "nll"
    d: int = Field(ge=1)
    K: int = Field(ge=1)

    @model_validator(mode="after")
    def _parameters_match_kind(self) -> "CalibratorFile":
        if self.kind == "lates":
            if self.beta is None or self.tau is not None:
                raise ValueError("a lates calibrator carries beta and no tau")
            if len(self.beta) != self.d:
                raise ValueError(f"beta has {len(self.beta)} entries but d={self.d}")
        else:
            if self.tau is None or self.beta is not None:
                raise ValueError("a temperature calibrator carries tau and no beta")
        return self


class LatesCalibrator(Calibrator):
    kind: CalibratorKind = "lates"

    def __init__(self, weights: AggregatorWeights, n_classes: int):
        self.weights = weights
        self.n_classes = n_classes

    @classmethod
    def fit(cls, stack: LogitStack, labels: np.ndarray, config: Optional[AggTrainConfig] = None) -> "LatesCalibrator":
        return cls(fit_lates(stack, labels, config), stack.n_classes)

    def predict_proba(self, inputs: LogitStack) -> np.ndarray:
        if inputs.n_classes != self.n_classes:
            raise DimensionMismatchError(f"calibrator expects K={self.n_classes}, stack has K={inputs.n_classes}")
        return lates_predict(inputs, self.weights)

    def to_file_model(self) -> Dict[str, Any]:
        return CalibratorFile(
            kind="lates",
            beta=[float(b) for b in self.weights.beta],
            loss=self.weights.loss_kind,
            d=self.weights.d,
            K=self.n_classes,
        ).model_dump(exclude_none=True)


class TemperatureCalibrator(Calibrator):
    kind: CalibratorKind = "temperature"

    def __init__(self, model: TemperatureModel, n_classes: int):
        self.model = model
        self.n_classes = n_classes

    @classmethod
    def fit(cls, stack: LogitStack, labels: np.ndarray, loss_kind: LossKind = "nll") -> "TemperatureCalibrator":
        return cls(fit_temperature(stack.final_logits, labels, loss_kind), stack.n_classes)

    def predict_proba(self, inputs: Union[LogitStack, np.ndarray]) -> np.ndarray:
        logits = inputs.final_logits if isinstance(inputs, LogitStack) else np.asarray(inputs)
        if logits.shape[1] != self.n_classes:
            raise DimensionMismatchError(f"calibrator expects K={self.n_classes}, got {logits.shape[1]} logits")
        return self.model.predict_proba(logits)

    def to_file_model(self) -> Dict[str, Any]:
        return CalibratorFile(
            kind="temperature",
            tau=float(self.model.tau),
            loss=self.model.loss_kind,
            d=1,
            K=self.n_classes,
        ).model_dump(exclude_none=True)


def save_calibrator(calibrator: Calibrator, path: PathLike) -> Path:
    target = atomic_write_text(path, json.dumps(calibrator.to_file_model(), indent=2) + "\n")
    logger.info(f"Saved {calibrator.kind} calibrator to {target}")
    return target


def calibrator_from_file_model(spec: CalibratorFile) -> Calibrator:
    if spec.kind == "lates":
        return LatesCalibrator(AggregatorWeights(beta=np.asarray(spec.beta), loss_kind=spec.loss), spec.K)
    return TemperatureCalibrator(TemperatureModel(tau=spec.tau, loss_kind=spec.loss), spec.K)


def load_calibrator(path: PathLike) -> Calibrator:
    source = Path(path)
    try:
        spec = CalibratorFile.model_validate(json.loads(source.read_text()))
    except (json.JSONDecodeError, ValidationError) as e:
        raise DataError(f"{source}: not a valid calibrator file: {e}") from e
    return calibrator_from_file_model(spec)
