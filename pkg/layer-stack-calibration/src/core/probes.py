"""
Linear probes: one multinomial linear classifier per intermediate layer,
trained with mini-batch SGD + momentum and step decay, plus the identity
probe that passes the model's own logits through unchanged.
"""

import io
import struct
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import PoolSpec, ProbeTrainConfig
from .dataio import ActivationDump, LayerBlock
from .errors import DimensionMismatchError, DumpFormatError, InvariantError, NumericError, TruncatedPayloadError
from .fileio import PathLike, atomic_write_bytes, open_container, seal
from .numerics import log_softmax

logger = logging.getLogger(__name__)

BUNDLE_MAGIC = b"LPRB"
BUNDLE_VERSION = 1

_PROBE_HEADER = struct.Struct("<IBIII")  # layer_index, is_identity, pool_dim (0 = none), K, input_dim


@dataclass(frozen=True)
class ProbeTrace:
    epoch_losses: Tuple[float, ...] = ()
    warnings: Tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class LinearProbe:
    """Maps a layer's (optionally pooled) activations x to logits W x + b."""

    layer_index: int
    weights: np.ndarray
    bias: np.ndarray
    pool_spec: Optional[PoolSpec] = None
    is_identity: bool = False
    trace: ProbeTrace = field(default_factory=ProbeTrace)

    @classmethod
    def identity(cls, layer_index: int, n_classes: int) -> "LinearProbe":
        return cls(
            layer_index=layer_index,
            weights=np.eye(n_classes, dtype=np.float64),
            bias=np.zeros(n_classes, dtype=np.float64),
            is_identity=True,
        )

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1]

    def same_parameters(self, other: "LinearProbe") -> bool:
        return (
            self.layer_index == other.layer_index
            and self.is_identity == other.is_identity
            and self.pool_spec == other.pool_spec
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.bias, other.bias)
        )


def _window_starts(f: int, output_dim: int) -> np.ndarray:
    # window j covers [ceil(j f / m), ceil((j+1) f / m))
    j = np.arange(output_dim, dtype=np.int64)
    return -((-j * f) // output_dim)


def average_pool(features: np.ndarray, spec: PoolSpec) -> np.ndarray:
    """Mean over contiguous windows of the last axis, output_dim windows in total.

    Windows have ceil(f / output_dim) or fewer elements, the shorter ones
    falling where the ceiling boundaries put them, e.g. [1, 2, 3] -> [1.5, 3].
    """
    x = np.asarray(features, dtype=np.float64)
    f = x.shape[-1]
    m = spec.output_dim
    if m < 1 or m > f:
        raise DimensionMismatchError(f"pool output_dim must lie in [1, {f}], got {m}")
    if m == f:
        return x.copy()
    starts = _window_starts(f, m)
    counts = np.diff(np.r_[starts, f])
    return np.add.reduceat(x, starts, axis=-1) / counts


def pool_spec_for(feature_dim: int, config: ProbeTrainConfig) -> Optional[PoolSpec]:
    if feature_dim <= config.pool_dim:
        return None
    return PoolSpec(output_dim=config.pool_dim)


def probe_loss_and_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    weight_decay: float = 0.0,
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy of softmax(X W^T + b) and its gradient w.r.t. (W, b)."""
    n = features.shape[0]
    logits = features @ weights.T + bias
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean() + 0.5 * weight_decay * np.sum(weights * weights)
    residual = np.exp(logp)
    residual[np.arange(n), labels] -= 1.0
    residual /= n
    grad_w = residual.T @ features + weight_decay * weights
    grad_b = residual.sum(axis=0)
    return float(loss), grad_w, grad_b


def _standardize(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    return (x - mean) / scale, mean, scale


def train_probe(
    layer: LayerBlock,
    labels: np.ndarray,
    n_classes: int,
    config: Optional[ProbeTrainConfig] = None,
) -> LinearProbe:
    """Fit a multinomial linear probe on one layer's activations.

    Features are pooled, then standardized for the optimization; the
    standardization is folded back into (W, b) so the returned probe acts on
    pooled raw activations. Final parameters are rounded to float32, the
    precision of the probe-bundle format.
    """
    config = config or ProbeTrainConfig()
    if layer.is_final_logits:
        raise InvariantError("the final-logits layer takes the identity probe, not a trained one")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != layer.n_examples:
        raise DimensionMismatchError(f"{labels.shape[0]} labels for {layer.n_examples} rows in layer {layer.layer_index}")

    pool = pool_spec_for(layer.feature_dim, config)
    x = layer.data.astype(np.float64)
    if pool is not None:
        x = average_pool(x, pool)
    z, mean, scale = _standardize(x)

    warnings: List[str] = []
    present = np.unique(labels)
    if present.size < 2:
        message = f"layer {layer.layer_index}: only class {present.tolist()} present; probe fits the class prior"
        warnings.append(message)
        logger.warning(message)

    n, f = z.shape
    rng = np.random.default_rng([config.seed, layer.layer_index])
    w = np.zeros((n_classes, f))
    b = np.zeros(n_classes)
    vel_w = np.zeros_like(w)
    vel_b = np.zeros_like(b)
    losses: List[float] = []

    logger.info(f"Training probe for layer {layer.layer_index} ({n} examples, {f} features, K={n_classes})")
    for epoch in range(config.epochs):
        lr = config.learning_rate_at(epoch)
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            _, grad_w, grad_b = probe_loss_and_grad(w, b, z[batch], labels[batch], config.weight_decay)
            vel_w = config.momentum * vel_w + grad_w
            vel_b = config.momentum * vel_b + grad_b
            w -= lr * vel_w
            b -= lr * vel_b
        epoch_loss, _, _ = probe_loss_and_grad(w, b, z, labels, config.weight_decay)
        if not np.isfinite(epoch_loss):
            raise NumericError(
                f"probe for layer {layer.layer_index} diverged at epoch {epoch} (loss={epoch_loss})", epoch=epoch
            )
        losses.append(epoch_loss)

    weights = w / scale
    bias = b - weights @ mean
    logger.debug(f"Probe {layer.layer_index} final training loss {losses[-1] if losses else float('nan'):.6f}")
    return LinearProbe(
        layer_index=layer.layer_index,
        weights=weights.astype(np.float32).astype(np.float64),
        bias=bias.astype(np.float32).astype(np.float64),
        pool_spec=pool,
        trace=ProbeTrace(epoch_losses=tuple(losses), warnings=tuple(warnings)),
    )


def probe_logits(probe: LinearProbe, layer: LayerBlock) -> np.ndarray:
    """n x K logits of probe on layer; the identity probe returns the layer values unchanged."""
    if probe.is_identity:
        if layer.feature_dim != probe.n_classes:
            raise DimensionMismatchError(
                f"identity probe expects {probe.n_classes} logits, layer {layer.layer_index} has {layer.feature_dim}"
            )
        return layer.data.astype(np.float64)
    x = layer.data.astype(np.float64)
    if probe.pool_spec is not None:
        if probe.pool_spec.output_dim > layer.feature_dim:
            raise DimensionMismatchError(
                f"probe pools to {probe.pool_spec.output_dim} but layer {layer.layer_index} has {layer.feature_dim} features"
            )
        x = average_pool(x, probe.pool_spec)
    if x.shape[1] != probe.input_dim:
        raise DimensionMismatchError(
            f"probe for layer {probe.layer_index} expects {probe.input_dim} inputs, got {x.shape[1]}"
        )
    return x @ probe.weights.T + probe.bias


def train_probes(
    dump: ActivationDump,
    config: Optional[ProbeTrainConfig] = None,
    jobs: int = 1,
) -> List[LinearProbe]:
    """One probe per layer in layer order, identity for the final logits.

    Probes are independent; with jobs > 1 they train on a thread pool and the
    results are merged in layer order.
    """
    config = config or ProbeTrainConfig()

    def fit(block: LayerBlock) -> LinearProbe:
        if block.is_final_logits:
            return LinearProbe.identity(block.layer_index, dump.n_classes)
        return train_probe(block, dump.labels, dump.n_classes, config)

    if jobs <= 1 or len(dump.layers) <= 1:
        return [fit(block) for block in dump.layers]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fit, dump.layers))


def probe_accuracy_curve(probes: Sequence[LinearProbe], dump: ActivationDump) -> List[float]:
    """Argmax accuracy of each probe on its layer, in layer order."""
    if len(probes) != len(dump.layers):
        raise DimensionMismatchError(f"{len(probes)} probes for {len(dump.layers)} layers")
    by_layer = {probe.layer_index: probe for probe in probes}
    curve = []
    for block in dump.layers:
        probe = by_layer.get(block.layer_index)
        if probe is None:
            raise DimensionMismatchError(f"no probe for layer {block.layer_index}")
        predictions = np.argmax(probe_logits(probe, block), axis=1)
        curve.append(float(np.mean(predictions == dump.labels)))
    return curve


def probe_nll(probe: LinearProbe, layer: LayerBlock, labels: np.ndarray) -> float:
    logp = log_softmax(probe_logits(probe, layer))
    return float(-logp[np.arange(labels.shape[0]), labels].mean())


def encode_bundle(probes: Iterable[LinearProbe]) -> bytes:
    probes = list(probes)
    buffer = io.BytesIO()
    buffer.write(BUNDLE_MAGIC)
    buffer.write(struct.pack("<II", BUNDLE_VERSION, len(probes)))
    for probe in probes:
        pool_dim = probe.pool_spec.output_dim if probe.pool_spec is not None else 0
        buffer.write(_PROBE_HEADER.pack(
            probe.layer_index, int(probe.is_identity), pool_dim, probe.n_classes, probe.input_dim
        ))
        buffer.write(np.ascontiguousarray(probe.weights, dtype="<f4").tobytes())
        buffer.write(np.ascontiguousarray(probe.bias, dtype="<f4").tobytes())
    return seal(buffer.getvalue())


def decode_bundle(raw: bytes, what: str = "probe bundle") -> List[LinearProbe]:
    reader = open_container(raw, BUNDLE_MAGIC, BUNDLE_VERSION, what)
    (count,) = reader.unpack(struct.Struct("<I"))
    probes = []
    for _ in range(count):
        layer_index, is_identity, pool_dim, n_classes, input_dim = reader.unpack(_PROBE_HEADER)
        weights = reader.array("<f4", n_classes * input_dim).reshape(n_classes, input_dim).astype(np.float64)
        bias = reader.array("<f4", n_classes).astype(np.float64)
        probes.append(LinearProbe(
            layer_index=layer_index,
            weights=weights,
            bias=bias,
            pool_spec=PoolSpec(output_dim=pool_dim) if pool_dim else None,
            is_identity=bool(is_identity),
        ))
    if reader.remaining < 4:
        raise TruncatedPayloadError(f"{what}: truncated payload, checksum footer incomplete")
    if reader.remaining > 4:
        raise DumpFormatError(f"{what}: {reader.remaining - 4} unexpected bytes before the checksum footer")
    return probes


def write_probe_bundle(probes: Sequence[LinearProbe], path: PathLike) -> Path:
    target = atomic_write_bytes(path, encode_bundle(probes))
    logger.info(f"Wrote {len(probes)} probes to {target}")
    return target


def read_probe_bundle(path: PathLike) -> List[LinearProbe]:
    source = Path(path)
    return decode_bundle(source.read_bytes(), what=str(source))
