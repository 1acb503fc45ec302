from abc import ABC, abstractmethod
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from typing_extensions import TypedDict

LossKind = Literal["nll", "square"]
AucMode = Literal["correctness", "ovr"]
Sidedness = Literal["two", "one"]
CalibratorKind = Literal["lates", "temperature"]
AggInit = Literal["identity", "temperature"]


class PipelineParams(TypedDict, total=False):
    """Parameters for a full demo run of the calibration pipeline."""
    task: Literal["spiral", "gaussian_mixture"]
    n: int
    n_classes: int
    noise: float
    seed: int
    hidden_widths: List[int]
    refnet_epochs: int
    loss_kind: LossKind
    bins: int
    auc_mode: AucMode
    severities: List[int]
    jobs: int
    holdout_fraction: float
    stratify: bool
    agg_init: AggInit
    agg_epochs: int
    test_n: Optional[int]


class Calibrator(ABC):
    """A post-hoc map from model outputs to calibrated class probabilities."""

    kind: CalibratorKind

    @classmethod
    @abstractmethod
    def fit(cls, inputs: Any, labels: np.ndarray, *args: Any, **kwargs: Any) -> "Calibrator":
        """Fit on holdout inputs and labels and return the fitted calibrator."""
        pass

    @abstractmethod
    def predict_proba(self, inputs: Any) -> np.ndarray:
        """Return an n x K row-stochastic matrix."""
        pass

    @abstractmethod
    def to_file_model(self) -> Dict[str, Any]:
        """Return the JSON-serializable description of the fitted calibrator."""
        pass
