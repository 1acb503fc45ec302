"""
Reference multi-layer perceptron: ReLU hidden layers, cross-entropy with ℓ2
weight decay, mini-batch SGD with momentum and cosine learning-rate decay.
Its hidden activations and logits feed the probe pipeline as an ActivationDump.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator

from ..core.config import default_seed
from ..core.dataio import ActivationDump, LayerBlock
from ..core.errors import DimensionMismatchError, NumericError
from ..core.numerics import log_softmax, one_hot, softmax

logger = logging.getLogger(__name__)


class RefNetSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    layer_widths: Tuple[int, ...] = (2, 32, 32, 32, 3)
    activation: Literal["relu"] = "relu"
    l2: float = Field(default=1e-4, ge=0.0)
    epochs: int = Field(default=200, ge=0)
    learning_rate: float = Field(default=0.05, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    batch_size: PositiveInt = 64
    cosine_decay: bool = True
    seed: int = Field(default_factory=default_seed)

    @field_validator("layer_widths")
    @classmethod
    def _deep_enough(cls, widths: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(widths) < 4:
            raise ValueError(f"need input, at least 2 hidden layers and output; got widths {list(widths)}")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive, got {list(widths)}")
        return widths

    @property
    def n_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_hidden(self) -> int:
        return len(self.layer_widths) - 2

    def learning_rate_at(self, epoch: int) -> float:
        if not self.cosine_decay or self.epochs == 0:
            return self.learning_rate
        return 0.5 * self.learning_rate * (1.0 + math.cos(math.pi * epoch / self.epochs))


@dataclass(frozen=True)
class TrainingTrace:
    epoch_losses: Tuple[float, ...] = ()
    epoch_accuracies: Tuple[float, ...] = ()


@dataclass(eq=False)
class RefNet:
    spec: RefNetSpec
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    trace: TrainingTrace = field(default_factory=TrainingTrace)

    @classmethod
    def initialize(cls, spec: RefNetSpec, rng: Optional[np.random.Generator] = None) -> "RefNet":
        """He-normal weights, zero biases."""
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        widths = spec.layer_widths
        weights = [rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
                   for fan_in, fan_out in zip(widths[:-1], widths[1:])]
        biases = [np.zeros(fan_out) for fan_out in widths[1:]]
        return cls(spec=spec, weights=weights, biases=biases)

    def forward(self, features: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
        """Post-ReLU activations of every hidden layer, and the logits."""
        h = np.asarray(features, dtype=np.float64)
        if h.ndim != 2 or h.shape[1] != self.spec.layer_widths[0]:
            raise DimensionMismatchError(
                f"network expects inputs of width {self.spec.layer_widths[0]}, got shape {h.shape}"
            )
        hidden = []
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            hidden.append(h)
        return hidden, h @ self.weights[-1] + self.biases[-1]

    def logits(self, features: np.ndarray) -> np.ndarray:
        return self.forward(features)[1]

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return softmax(self.logits(features))

    def accuracy(self, features: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(np.argmax(self.logits(features), axis=1) == np.asarray(labels)))


def network_loss_and_grads(
    weights: List[np.ndarray],
    biases: List[np.ndarray],
    features: np.ndarray,
    labels: np.ndarray,
    l2: float,
) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
    """Mean cross-entropy plus (l2/2) Σ‖W‖², with backprop gradients for every layer."""
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    inputs = [x]
    h = x
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        inputs.append(h)
    logits = h @ weights[-1] + biases[-1]

    loss = -float(np.mean(log_softmax(logits)[np.arange(n), labels]))
    loss += 0.5 * l2 * sum(float(np.sum(w * w)) for w in weights)

    delta = (softmax(logits) - one_hot(labels, logits.shape[1])) / n
    grad_w: List[np.ndarray] = [np.empty(0)] * len(weights)
    grad_b: List[np.ndarray] = [np.empty(0)] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        grad_w[i] = inputs[i].T @ delta + l2 * weights[i]
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i].T) * (inputs[i] > 0)
    return loss, grad_w, grad_b


def train_refnet(spec: RefNetSpec, features: np.ndarray, labels: np.ndarray) -> RefNet:
    """SGD with momentum; zero epochs returns the network at initialization."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape[0] != labels.shape[0]:
        raise DimensionMismatchError(f"{labels.shape[0]} labels for {features.shape[0]} feature rows")
    if features.ndim != 2 or features.shape[1] != spec.layer_widths[0]:
        raise DimensionMismatchError(f"features of shape {features.shape} do not match input width {spec.layer_widths[0]}")

    rng = np.random.default_rng(spec.seed)
    net = RefNet.initialize(spec, rng)
    vel_w = [np.zeros_like(w) for w in net.weights]
    vel_b = [np.zeros_like(b) for b in net.biases]
    n = features.shape[0]
    losses: List[float] = []
    accuracies: List[float] = []

    logger.info(f"Training reference network {list(spec.layer_widths)} on {n} examples for {spec.epochs} epochs")
    for epoch in range(spec.epochs):
        lr = spec.learning_rate_at(epoch)
        order = rng.permutation(n)
        for start in range(0, n, spec.batch_size):
            batch = order[start:start + spec.batch_size]
            _, grad_w, grad_b = network_loss_and_grads(net.weights, net.biases, features[batch], labels[batch], spec.l2)
            for i in range(len(net.weights)):
                vel_w[i] = spec.momentum * vel_w[i] + grad_w[i]
                vel_b[i] = spec.momentum * vel_b[i] + grad_b[i]
                net.weights[i] -= lr * vel_w[i]
                net.biases[i] -= lr * vel_b[i]
        loss, _, _ = network_loss_and_grads(net.weights, net.biases, features, labels, spec.l2)
        if not math.isfinite(loss):
            raise NumericError(f"reference network diverged at epoch {epoch} (loss={loss})", epoch=epoch)
        losses.append(loss)
        accuracies.append(net.accuracy(features, labels))
        if epoch % 25 == 0 or epoch == spec.epochs - 1:
            logger.debug(f"Epoch {epoch}: loss {loss:.4f}, train accuracy {accuracies[-1]:.4f}, lr {lr:.5f}")

    net.trace = TrainingTrace(epoch_losses=tuple(losses), epoch_accuracies=tuple(accuracies))
    if accuracies:
        logger.info(f"Reference network done: loss {losses[-1]:.4f}, train accuracy {accuracies[-1]:.4f}")
    return net


def export_activations(net: RefNet, features: np.ndarray, labels: np.ndarray, name: str = "") -> ActivationDump:
    """One block per hidden layer (post-ReLU) followed by the final-logits block."""
    hidden, logits = net.forward(features)
    blocks = [LayerBlock(i, h) for i, h in enumerate(hidden, start=1)]
    blocks.append(LayerBlock(len(hidden) + 1, logits, is_final_logits=True))
    return ActivationDump(n_classes=net.spec.n_classes, layers=tuple(blocks), labels=labels, name=name)
