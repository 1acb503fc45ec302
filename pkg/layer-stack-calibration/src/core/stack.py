"""
The logit stack R(x) and the two calibrators fitted on it: the LATES
aggregator (non-negative per-probe temperatures β learned by projected SGD)
and the single-temperature baseline.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .config import AggTrainConfig
from .dataio import ActivationDump
from .errors import DimensionMismatchError, InvariantError, MissingProbeError, NumericError, UndefinedStatisticError
from .interfaces import LossKind
from .numerics import one_hot, softmax
from .probes import LinearProbe, probe_logits

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
TAU_BOUNDS = (1e-3, 1e3)


@dataclass(frozen=True, eq=False)
class LogitStack:
    """values[i, k, y] is the logit of probe k+1 for class y on example i."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 3:
            raise InvariantError(f"logit stack must be n x d x K, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvariantError("logit stack contains NaN or Inf")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "LogitStack":
        """A d = 1 stack holding only the model's logits."""
        return cls(np.asarray(logits, dtype=np.float64)[:, None, :])

    @property
    def n_examples(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def n_classes(self) -> int:
        return self.values.shape[2]

    @property
    def final_logits(self) -> np.ndarray:
        return self.values[:, -1, :]

    def take(self, indices: Sequence[int]) -> "LogitStack":
        return LogitStack(self.values[np.asarray(indices, dtype=np.int64)])


@dataclass(frozen=True, eq=False)
class AggregatorWeights:
    """β ≥ 0 over the d probes, with the per-epoch holdout loss of the fit."""

    beta: np.ndarray
    loss_kind: LossKind = "nll"
    train_trace: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        beta = np.array(self.beta, dtype=np.float64, copy=True).reshape(-1)
        if beta.size == 0:
            raise InvariantError("beta must have at least one coordinate")
        if np.any(beta < 0) or not np.all(np.isfinite(beta)):
            raise InvariantError(f"beta must be finite and non-negative, got {beta.tolist()}")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def initial(cls, d: int, loss_kind: LossKind = "nll") -> "AggregatorWeights":
        """β₀ = (0, ..., 0, 1): start from the uncalibrated model."""
        beta = np.zeros(d)
        beta[-1] = 1.0
        return cls(beta=beta, loss_kind=loss_kind)

    @classmethod
    def from_temperature(cls, d: int, tau: float, loss_kind: LossKind = "nll") -> "AggregatorWeights":
        beta = np.zeros(d)
        beta[-1] = 1.0 / tau
        return cls(beta=beta, loss_kind=loss_kind)

    @property
    def d(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True)
class TemperatureModel:
    tau: float
    loss_kind: LossKind = "nll"

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise InvariantError(f"temperature must be positive and finite, got {self.tau}")

    def predict_proba(self, logits: np.ndarray) -> np.ndarray:
        # same arithmetic as the aggregator at β = (0, ..., 0, 1/τ)
        return softmax(np.asarray(logits, dtype=np.float64) * (1.0 / self.tau))


def build_logit_stack(probes: Sequence[LinearProbe], dump: ActivationDump) -> LogitStack:
    """Stack every probe's logits in the dump's layer order; shape (n, d, K)."""
    final = dump.final_logits
    if final is None:
        raise InvariantError("dump has no final-logits block; the stack needs the model's own logits last")
    by_layer = {probe.layer_index: probe for probe in probes}
    slices = []
    for block in dump.layers:
        probe = by_layer.get(block.layer_index)
        if probe is None:
            raise MissingProbeError(f"no probe for layer {block.layer_index}")
        if probe.n_classes != dump.n_classes:
            raise DimensionMismatchError(
                f"probe for layer {block.layer_index} emits {probe.n_classes} classes, dump has K={dump.n_classes}"
            )
        if block.is_final_logits and not probe.is_identity:
            raise InvariantError(f"layer {block.layer_index} holds the final logits and needs the identity probe")
        slices.append(probe_logits(probe, block))
    return LogitStack(np.stack(slices, axis=1))


def _check_beta(stack: LogitStack, beta: np.ndarray) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if beta.shape[0] != stack.d:
        raise DimensionMismatchError(f"beta has {beta.shape[0]} coordinates, stack has d={stack.d}")
    return beta


def aggregate_logits(stack: LogitStack, beta: np.ndarray) -> np.ndarray:
    """R(x) β for every example: Σ_k β_k values[:, k, :]."""
    beta = _check_beta(stack, beta)
    return np.einsum("ndk,d->nk", stack.values, beta)


def lates_predict(stack: LogitStack, beta) -> np.ndarray:
    """softmax(R(x) β) row by row."""
    if isinstance(beta, AggregatorWeights):
        beta = beta.beta
    return softmax(aggregate_logits(stack, beta))


def loss_value(probs: np.ndarray, labels: np.ndarray, kind: LossKind = "nll") -> float:
    """Mean per-example loss: nll = -log p_y, square = Σ_y (p_y - onehot_y)²."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    if kind == "nll":
        p_true = probs[np.arange(n), labels]
        clipped = p_true < PROB_FLOOR
        if np.any(clipped):
            logger.warning(f"{int(clipped.sum())} true-class probabilities below {PROB_FLOOR} clipped in NLL")
        return float(-np.mean(np.log(np.maximum(p_true, PROB_FLOOR))))
    if kind == "square":
        diff = probs - one_hot(labels, probs.shape[1])
        return float(np.mean(np.sum(diff * diff, axis=1)))
    raise ValueError(f"unknown loss kind {kind!r}")


def _logit_residual(probs: np.ndarray, labels: np.ndarray, kind: LossKind) -> np.ndarray:
    """Per-example derivative of the loss w.r.t. the aggregated logits."""
    target = one_hot(labels, probs.shape[1])
    if kind == "nll":
        return probs - target
    if kind == "square":
        g = 2.0 * (probs - target)
        return probs * (g - np.sum(g * probs, axis=1, keepdims=True))
    raise ValueError(f"unknown loss kind {kind!r}")


def aggregator_gradient(
    stack: LogitStack,
    beta: np.ndarray,
    labels: np.ndarray,
    kind: LossKind = "nll",
    ridge: float = 0.0,
) -> np.ndarray:
    """Exact gradient of mean loss(softmax(R β), y) + (ridge/2)‖β‖² w.r.t. β."""
    beta = _check_beta(stack, beta)
    labels = np.asarray(labels, dtype=np.int64)
    probs = softmax(np.einsum("ndk,d->nk", stack.values, beta))
    residual = _logit_residual(probs, labels, kind)
    grad = np.einsum("nk,ndk->d", residual, stack.values) / labels.shape[0]
    return grad + ridge * beta


def aggregator_objective(stack: LogitStack, beta: np.ndarray, labels: np.ndarray,
                         kind: LossKind = "nll", ridge: float = 0.0) -> float:
    beta = _check_beta(stack, beta)
    return loss_value(lates_predict(stack, beta), labels, kind) + 0.5 * ridge * float(beta @ beta)


def project_nonnegative(beta: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the non-negative orthant."""
    return np.maximum(beta, 0.0)


def fit_lates(
    stack: LogitStack,
    labels: np.ndarray,
    config: Optional[AggTrainConfig] = None,
) -> AggregatorWeights:
    """Projected SGD on β from β₀ = (0, ..., 0, 1), clamping to β ≥ 0 after every step.

    With config.init = "temperature" the start is (0, ..., 0, 1/τ*) for the
    temperature τ* fitted on the same holdout, so the result never scores
    worse than temperature scaling there. The final iterate is returned
    unless its holdout objective is worse than the starting point's, in
    which case the best iterate seen (possibly the start) is used.
    """
    config = config or AggTrainConfig()
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != stack.n_examples:
        raise DimensionMismatchError(f"{labels.shape[0]} labels for a stack of {stack.n_examples} examples")
    n = stack.n_examples
    kind = config.loss_kind
    if config.init == "temperature":
        tau = fit_temperature(stack.final_logits, labels, kind).tau
        beta = AggregatorWeights.from_temperature(stack.d, tau, kind).beta.copy()
    else:
        beta = AggregatorWeights.initial(stack.d, kind).beta.copy()
    velocity = np.zeros_like(beta)
    rng = np.random.default_rng(config.seed)
    batch_size = config.batch_size if 0 < config.batch_size < n else n

    def objective(b: np.ndarray) -> float:
        return aggregator_objective(stack, b, labels, kind, config.ridge)

    start_loss = objective(beta)
    trace: List[float] = []
    best_beta, best_loss = beta.copy(), start_loss
    stale = 0
    logger.info(
        f"Fitting LATES aggregator: n={n}, d={stack.d}, K={stack.n_classes}, loss={kind}, "
        f"lr={config.learning_rate}, epochs={config.epochs}, batch={batch_size}, init={config.init}"
    )
    for epoch in range(config.epochs):
        order = rng.permutation(n) if batch_size < n else np.arange(n)
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            grad = aggregator_gradient(stack.take(batch), beta, labels[batch], kind, config.ridge)
            velocity = config.momentum * velocity + grad
            beta = project_nonnegative(beta - config.learning_rate * velocity)
            assert beta.min() >= 0.0
        epoch_loss = objective(beta)
        if not math.isfinite(epoch_loss):
            raise NumericError(
                f"aggregator loss became non-finite at epoch {epoch} with beta={beta.tolist()}", epoch=epoch
            )
        trace.append(epoch_loss)
        if epoch_loss < best_loss - 1e-12:
            best_beta, best_loss, stale = beta.copy(), epoch_loss, 0
        else:
            stale += 1
        if config.patience is not None and stale >= config.patience:
            logger.info(f"Early stopping after epoch {epoch}: no improvement for {stale} epochs")
            break

    if trace and trace[-1] > start_loss:
        logger.warning(
            f"Final aggregator loss {trace[-1]:.6g} exceeds the starting loss {start_loss:.6g}; "
            f"using the best iterate (loss {best_loss:.6g})"
        )
        beta = best_beta
    logger.info(f"LATES fit done: beta={np.round(beta, 4).tolist()}, loss {start_loss:.5f} -> {objective(beta):.5f}")
    return AggregatorWeights(beta=beta, loss_kind=kind, train_trace=tuple(trace))


def _golden_section(fn: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10,
                    max_iter: int = 200) -> float:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fn(d)
    return (a + b) / 2.0


def fit_temperature(
    logits: np.ndarray,
    labels: np.ndarray,
    loss_kind: LossKind = "nll",
    bounds: Tuple[float, float] = TAU_BOUNDS,
    grid_size: int = 61,
) -> TemperatureModel:
    """τ minimizing the holdout loss of softmax(logits / τ) over τ in bounds.

    A log-spaced grid brackets the minimum, then golden-section search in
    log τ refines it. The result never scores worse than τ = 1 or either bound.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.shape[0] < 1:
        raise DimensionMismatchError("temperature scaling needs at least one example")
    if logits.shape[0] != labels.shape[0]:
        raise DimensionMismatchError(f"{labels.shape[0]} labels for {logits.shape[0]} logit rows")
    lo, hi = math.log(bounds[0]), math.log(bounds[1])

    def loss_at(log_tau: float) -> float:
        return loss_value(softmax(logits / math.exp(log_tau)), labels, loss_kind)

    grid = np.linspace(lo, hi, grid_size)
    scores = np.array([loss_at(u) for u in grid])
    best = int(np.argmin(scores))
    left, right = grid[max(best - 1, 0)], grid[min(best + 1, grid_size - 1)]
    refined = _golden_section(loss_at, left, right)

    candidates = [refined, 0.0, lo, hi, float(grid[best])]
    chosen = min(candidates, key=lambda u: (loss_at(u), abs(u - refined)))
    tau = float(math.exp(chosen))
    if chosen in (lo, hi):
        tau = bounds[0] if chosen == lo else bounds[1]
    logger.info(f"Temperature scaling: tau={tau:.6g}, {loss_kind} {loss_at(0.0):.5f} -> {loss_at(chosen):.5f}")
    return TemperatureModel(tau=tau, loss_kind=loss_kind)


def layer_contributions(beta) -> np.ndarray:
    """β / Σβ, the share of each layer in the aggregated vote."""
    if isinstance(beta, AggregatorWeights):
        beta = beta.beta
    beta = np.asarray(beta, dtype=np.float64)
    total = beta.sum()
    if not total > 0:
        raise UndefinedStatisticError("layer contributions are undefined for an all-zero beta")
    return beta / total
