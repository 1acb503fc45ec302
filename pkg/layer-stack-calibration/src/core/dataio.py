"""
Activation dumps: per-layer activation matrices plus labels for one data split,
their bit-exact on-disk layout, sibling manifests and train/holdout splitting.

Layout (little-endian):
    magic "LATS" | u32 version | u32 n_layers | u32 n_examples | u32 n_classes
    per layer:  u32 layer_index | u32 feature_dim | u8 is_final_logits
                f32 data, row-major n_examples x feature_dim
    u32 labels x n_examples
    u32 CRC32 of every preceding byte
"""

import io
import json
import math
import struct
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .config import SplitSpec
from .errors import DumpFormatError, EmptySplitError, InvariantError, TruncatedPayloadError
from .fileio import PathLike, atomic_write_bytes, atomic_write_text, open_container, seal

logger = logging.getLogger(__name__)

DUMP_MAGIC = b"LATS"
DUMP_VERSION = 1

_COUNTS = struct.Struct("<III")
_LAYER_HEADER = struct.Struct("<IIB")


@dataclass(frozen=True, eq=False)
class LayerBlock:
    """Activations of one layer (or the model's own logits) for every example."""

    layer_index: int
    data: np.ndarray
    is_final_logits: bool = False

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, order="C", copy=True)
        if data.ndim != 2:
            raise InvariantError(f"layer {self.layer_index}: data must be 2-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvariantError(f"layer {self.layer_index}: data contains NaN or Inf")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n_examples(self) -> int:
        return self.data.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.data.shape[1]

    def take(self, indices: np.ndarray) -> "LayerBlock":
        return LayerBlock(self.layer_index, self.data[indices], self.is_final_logits)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LayerBlock):
            return NotImplemented
        return (
            self.layer_index == other.layer_index
            and self.is_final_logits == other.is_final_logits
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class ActivationDump:
    """Per-layer activations and labels of one split; immutable once built."""

    n_classes: int
    layers: Tuple[LayerBlock, ...]
    labels: np.ndarray
    name: str = field(default="", compare=False)

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "layers", tuple(self.layers))
        self.validate()

    @property
    def n_examples(self) -> int:
        return self.labels.shape[0]

    @property
    def final_logits(self) -> Optional[LayerBlock]:
        if self.layers and self.layers[-1].is_final_logits:
            return self.layers[-1]
        return None

    def validate(self) -> None:
        K = self.n_classes
        if K < 1:
            raise InvariantError(f"n_classes must be positive, got {K}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= K):
            raise InvariantError(f"labels must lie in [0, {K}), got range [{self.labels.min()}, {self.labels.max()}]")
        for position, block in enumerate(self.layers, start=1):
            if block.layer_index != position:
                raise InvariantError(
                    f"layer at position {position} carries layer_index {block.layer_index}; indices must run 1..d"
                )
            if block.n_examples != self.n_examples:
                raise InvariantError(
                    f"layer {block.layer_index} has {block.n_examples} rows, expected {self.n_examples}"
                )
            if block.is_final_logits:
                if position != len(self.layers):
                    raise InvariantError("the final-logits block must be the last layer")
                if block.feature_dim != K:
                    raise InvariantError(f"final-logits block has {block.feature_dim} columns, expected K={K}")

    def take(self, indices: Sequence[int], name: str = "") -> "ActivationDump":
        idx = np.asarray(indices, dtype=np.int64)
        return ActivationDump(
            n_classes=self.n_classes,
            layers=tuple(block.take(idx) for block in self.layers),
            labels=self.labels[idx],
            name=name or self.name,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ActivationDump):
            return NotImplemented
        return (
            self.n_classes == other.n_classes
            and self.layers == other.layers
            and np.array_equal(self.labels, other.labels)
        )


class DumpManifest(BaseModel):
    """Free-form provenance written next to a dump; never needed to read it."""
    model_name: str = ""
    split_name: str = ""
    n_examples: int = Field(ge=0)
    n_classes: int = Field(ge=1)
    layer_dims: List[int] = Field(default_factory=list)
    extras: Dict[str, Any] = Field(default_factory=dict)


def encode_dump(dump: ActivationDump) -> bytes:
    dump.validate()
    buffer = io.BytesIO()
    buffer.write(DUMP_MAGIC)
    buffer.write(struct.pack("<I", DUMP_VERSION))
    buffer.write(_COUNTS.pack(len(dump.layers), dump.n_examples, dump.n_classes))
    for block in dump.layers:
        buffer.write(_LAYER_HEADER.pack(block.layer_index, block.feature_dim, int(block.is_final_logits)))
        buffer.write(np.ascontiguousarray(block.data, dtype="<f4").tobytes())
    buffer.write(np.ascontiguousarray(dump.labels, dtype="<u4").tobytes())
    return seal(buffer.getvalue())


def decode_dump(raw: bytes, what: str = "dump") -> ActivationDump:
    reader = open_container(raw, DUMP_MAGIC, DUMP_VERSION, what)
    n_layers, n_examples, n_classes = reader.unpack(_COUNTS)
    layers = []
    for _ in range(n_layers):
        layer_index, feature_dim, is_final = reader.unpack(_LAYER_HEADER)
        if is_final not in (0, 1):
            raise DumpFormatError(f"{what}: layer {layer_index} has invalid final-logits flag {is_final}")
        data = reader.array("<f4", n_examples * feature_dim).reshape(n_examples, feature_dim)
        layers.append((layer_index, data, bool(is_final)))
    labels = reader.array("<u4", n_examples)
    if reader.remaining < 4:
        raise TruncatedPayloadError(f"{what}: truncated payload, checksum footer incomplete")
    if reader.remaining > 4:
        raise DumpFormatError(f"{what}: {reader.remaining - 4} unexpected bytes before the checksum footer")
    return ActivationDump(
        n_classes=n_classes,
        layers=tuple(LayerBlock(i, d, f) for i, d, f in layers),
        labels=labels.astype(np.int64),
    )


def write_dump(dump: ActivationDump, path: PathLike) -> Path:
    """Validate then atomically write dump; identical dumps give identical bytes."""
    payload = encode_dump(dump)
    target = atomic_write_bytes(path, payload)
    logger.info(
        f"Wrote dump {target} ({dump.n_examples} examples, {len(dump.layers)} layers, K={dump.n_classes})"
    )
    return target


def read_dump(path: PathLike) -> ActivationDump:
    source = Path(path)
    raw = source.read_bytes()
    dump = decode_dump(raw, what=str(source))
    object.__setattr__(dump, "name", source.stem)
    logger.debug(f"Read dump {source}: {dump.n_examples} examples, {len(dump.layers)} layers")
    return dump


def manifest_path(path: PathLike) -> Path:
    p = Path(path)
    return p.with_name(f"{p.stem}.manifest.json")


def write_manifest(dump: ActivationDump, path: PathLike, model_name: str = "", split_name: str = "",
                   **extras: Any) -> Path:
    manifest = DumpManifest(
        model_name=model_name,
        split_name=split_name,
        n_examples=dump.n_examples,
        n_classes=dump.n_classes,
        layer_dims=[block.feature_dim for block in dump.layers],
        extras=extras,
    )
    return atomic_write_text(manifest_path(path), manifest.model_dump_json(indent=2) + "\n")


def read_manifest(path: PathLike) -> Optional[DumpManifest]:
    target = manifest_path(path)
    if not target.exists():
        return None
    return DumpManifest.model_validate(json.loads(target.read_text()))


def _split_size(fraction: float, n: int) -> int:
    return int(math.floor(fraction * n + 0.5))


def _partition(indices: np.ndarray, spec: SplitSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    n = indices.shape[0]
    shuffled = indices[rng.permutation(n)]
    n_holdout = _split_size(spec.holdout_fraction, n)
    n_train = min(_split_size(spec.train_fraction, n), n - n_holdout)
    return shuffled[n_holdout:n_holdout + n_train], shuffled[:n_holdout]


def split_indices(labels: np.ndarray, n_classes: int, spec: SplitSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Sorted (train, holdout) example indices for a split of len(labels) examples.

    Sizes are round(fraction * n), rounding halves up; with stratify set the
    rounding happens per class.
    """
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(spec.seed)
    if spec.stratify:
        train_parts, holdout_parts = [], []
        for c in range(n_classes):
            members = np.flatnonzero(labels == c)
            if members.size == 0:
                continue
            tr, ho = _partition(members, spec, rng)
            train_parts.append(tr)
            holdout_parts.append(ho)
        train_idx = np.concatenate(train_parts) if train_parts else np.empty(0, dtype=np.int64)
        holdout_idx = np.concatenate(holdout_parts) if holdout_parts else np.empty(0, dtype=np.int64)
    else:
        train_idx, holdout_idx = _partition(np.arange(labels.shape[0]), spec, rng)

    if train_idx.size == 0 or holdout_idx.size == 0:
        raise EmptySplitError(
            f"split of {labels.shape[0]} examples with train_fraction={spec.train_fraction}, "
            f"holdout_fraction={spec.holdout_fraction} leaves an empty split "
            f"({train_idx.size} train, {holdout_idx.size} holdout)"
        )
    return np.sort(train_idx), np.sort(holdout_idx)


def split_holdout(dump: ActivationDump, spec: SplitSpec) -> Tuple[ActivationDump, ActivationDump]:
    """Split dump into disjoint (train, holdout) dumps, deterministic in spec.seed.

    Example order within each split follows the original dump.
    """
    train_idx, holdout_idx = split_indices(dump.labels, dump.n_classes, spec)
    train = dump.take(train_idx, name=f"{dump.name}-train" if dump.name else "train")
    holdout = dump.take(holdout_idx, name=f"{dump.name}-holdout" if dump.name else "holdout")
    logger.info(f"Split {dump.n_examples} examples into {train.n_examples} train / {holdout.n_examples} holdout")
    return train, holdout
