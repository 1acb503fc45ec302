import math

import numpy as np
import pytest
from pydantic import ValidationError

from lates.core.config import PoolSpec, ProbeTrainConfig
from lates.core.dataio import ActivationDump, LayerBlock
from lates.core.errors import ChecksumMismatchError, DimensionMismatchError, InvariantError
from lates.core.probes import (
    LinearProbe,
    average_pool,
    decode_bundle,
    encode_bundle,
    probe_accuracy_curve,
    probe_logits,
    probe_loss_and_grad,
    probe_nll,
    read_probe_bundle,
    train_probe,
    train_probes,
    write_probe_bundle,
)

from conftest import make_dump


def test_average_pool_even_windows():
    np.testing.assert_allclose(average_pool(np.array([1.0, 2.0, 3.0, 4.0]), PoolSpec(output_dim=2)), [1.5, 3.5])


def test_average_pool_short_last_window():
    np.testing.assert_allclose(average_pool(np.array([1.0, 2.0, 3.0]), PoolSpec(output_dim=2)), [1.5, 3.0])


def test_average_pool_window_layout():
    x = np.arange(10, dtype=np.float64)
    np.testing.assert_allclose(average_pool(x, PoolSpec(output_dim=4)), [1.0, 3.5, 6.0, 8.5])
    assert average_pool(x, PoolSpec(output_dim=6)).shape == (6,)
    assert average_pool(np.ones((5, 10)), PoolSpec(output_dim=6)).shape == (5, 6)


def test_average_pool_full_width_is_identity(rng):
    x = rng.normal(size=(4, 7))
    np.testing.assert_array_equal(average_pool(x, PoolSpec(output_dim=7)), x)


def test_average_pool_rejects_wider_output():
    with pytest.raises(DimensionMismatchError):
        average_pool(np.ones(3), PoolSpec(output_dim=4))
    with pytest.raises(ValidationError):
        PoolSpec(output_dim=0)


def test_learning_rate_schedule():
    config = ProbeTrainConfig()
    assert config.learning_rate_at(0) == pytest.approx(0.01)
    assert config.learning_rate_at(25) == pytest.approx(0.0025)


def test_config_rejects_bad_values():
    with pytest.raises(ValidationError):
        ProbeTrainConfig(learning_rate=0.0)
    with pytest.raises(ValidationError):
        ProbeTrainConfig(momentum=1.0)
    with pytest.raises(ValidationError):
        ProbeTrainConfig(epochs=0)


def test_separable_blobs_reach_full_accuracy():
    rng = np.random.default_rng(1)
    labels = np.arange(100) % 2
    centers = np.array([[-3.0, -3.0], [3.0, 3.0]])
    layer = LayerBlock(1, centers[labels] + 0.3 * rng.normal(size=(100, 2)))
    probe = train_probe(layer, labels, 2, ProbeTrainConfig(seed=0))
    predictions = np.argmax(probe_logits(probe, layer), axis=1)
    assert np.mean(predictions == labels) == 1.0


def test_constant_features_learn_the_class_prior():
    n = 2000
    labels = (np.arange(n) % 10 < 7).astype(int)  # 70% class 1
    layer = LayerBlock(1, np.ones((n, 3)))
    probe = train_probe(layer, labels, 2, ProbeTrainConfig(seed=0))
    prior = np.bincount(labels) / n
    entropy = -float(np.sum(prior * np.log(prior)))
    assert probe_nll(probe, layer, labels) == pytest.approx(entropy, abs=1e-3)


def test_training_loss_trends_down(small_dump):
    probe = train_probe(small_dump.layers[0], small_dump.labels, 3, ProbeTrainConfig(seed=0, epochs=30))
    losses = np.array(probe.trace.epoch_losses)
    assert len(losses) == 30
    assert losses[-5:].mean() < losses[:5].mean()


def test_single_class_flags_warning():
    layer = LayerBlock(1, np.random.default_rng(0).normal(size=(20, 3)))
    probe = train_probe(layer, np.zeros(20, dtype=int), 3, ProbeTrainConfig(epochs=2))
    assert probe.trace.warnings


def test_final_logits_layer_is_not_trained():
    with pytest.raises(InvariantError):
        train_probe(LayerBlock(1, [[1.0, 0.0]], is_final_logits=True), np.array([0]), 2)


def test_identity_probe_returns_logits_exactly():
    layer = LayerBlock(1, [[1.0, 2.0], [3.0, 4.0]], is_final_logits=True)
    out = probe_logits(LinearProbe.identity(1, 2), layer)
    np.testing.assert_array_equal(out, [[1.0, 2.0], [3.0, 4.0]])


def test_zero_weights_return_bias():
    probe = LinearProbe(layer_index=1, weights=np.zeros((3, 2)), bias=np.array([0.1, -0.2, 0.3]))
    out = probe_logits(probe, LayerBlock(1, np.random.default_rng(0).normal(size=(5, 2))))
    np.testing.assert_allclose(out, np.tile([0.1, -0.2, 0.3], (5, 1)))


def test_identity_weights_pass_features():
    probe = LinearProbe(layer_index=1, weights=np.eye(2), bias=np.zeros(2))
    np.testing.assert_allclose(probe_logits(probe, LayerBlock(1, [[0.5, -0.5]])), [[0.5, -0.5]])


def test_dimension_mismatch_detected():
    probe = LinearProbe(layer_index=1, weights=np.eye(2), bias=np.zeros(2))
    with pytest.raises(DimensionMismatchError):
        probe_logits(probe, LayerBlock(1, [[0.5, -0.5, 1.0]]))


@pytest.mark.parametrize("seed", range(20))
def test_probe_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n, f, K = int(rng.integers(2, 12)), int(rng.integers(1, 6)), int(rng.integers(2, 5))
    x = rng.normal(size=(n, f))
    y = rng.integers(0, K, size=n)
    w = rng.normal(size=(K, f))
    b = rng.normal(size=K)
    wd = float(rng.uniform(0, 0.1))
    _, grad_w, grad_b = probe_loss_and_grad(w, b, x, y, wd)

    h = 1e-6
    numeric_w = np.zeros_like(w)
    for idx in np.ndindex(*w.shape):
        step = np.zeros_like(w)
        step[idx] = h
        numeric_w[idx] = (probe_loss_and_grad(w + step, b, x, y, wd)[0] - probe_loss_and_grad(w - step, b, x, y, wd)[0]) / (2 * h)
    numeric_b = np.array([
        (probe_loss_and_grad(w, b + h * e, x, y, wd)[0] - probe_loss_and_grad(w, b - h * e, x, y, wd)[0]) / (2 * h)
        for e in np.eye(K)
    ])
    analytic = np.concatenate([grad_w.ravel(), grad_b])
    numeric = np.concatenate([numeric_w.ravel(), numeric_b])
    assert np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12) < 1e-5


def test_training_is_deterministic(small_dump):
    config = ProbeTrainConfig(seed=5, epochs=5)
    a = train_probe(small_dump.layers[1], small_dump.labels, 3, config)
    b = train_probe(small_dump.layers[1], small_dump.labels, 3, config)
    assert a.same_parameters(b)


def test_probes_are_independent_of_other_layers(small_dump):
    config = ProbeTrainConfig(seed=2, epochs=5)
    joint = train_probes(small_dump, config, jobs=3)
    alone = train_probe(small_dump.layers[1], small_dump.labels, 3, config)
    assert joint[1].same_parameters(alone)
    assert joint[-1].is_identity
    assert [p.layer_index for p in joint] == [1, 2, 3]


def test_parallel_and_serial_training_agree(small_dump):
    config = ProbeTrainConfig(seed=2, epochs=3)
    serial = train_probes(small_dump, config, jobs=1)
    parallel = train_probes(small_dump, config, jobs=4)
    assert all(a.same_parameters(b) for a, b in zip(serial, parallel))


def test_wide_layers_are_pooled():
    dump = make_dump(n=30, dims=(10,), n_classes=2)
    probes = train_probes(dump, ProbeTrainConfig(pool_dim=4, epochs=2))
    assert probes[0].pool_spec == PoolSpec(output_dim=4)
    assert probes[0].input_dim == 4
    assert probe_logits(probes[0], dump.layers[0]).shape == (30, 2)


def test_accuracy_curve_with_perfect_logits():
    labels = np.array([0, 1, 1, 0])
    logits = np.eye(2)[labels] * 5.0
    dump = ActivationDump(n_classes=2, layers=(LayerBlock(1, logits, is_final_logits=True),), labels=labels)
    assert probe_accuracy_curve([LinearProbe.identity(1, 2)], dump) == [1.0]


def test_accuracy_curve_near_chance_on_random_labels():
    n = 2000
    rng = np.random.default_rng(3)

    def random_dump(seed: int) -> ActivationDump:
        r = np.random.default_rng(seed)
        return ActivationDump(
            n_classes=2,
            layers=(LayerBlock(1, r.normal(size=(n, 5))), LayerBlock(2, r.normal(size=(n, 5)))),
            labels=r.integers(0, 2, size=n),
        )

    probes = train_probes(random_dump(int(rng.integers(1000))), ProbeTrainConfig(epochs=5))
    curve = probe_accuracy_curve(probes, random_dump(99))
    sigma = math.sqrt(0.25 / n)
    assert all(abs(acc - 0.5) <= 3 * sigma for acc in curve)


def test_bundle_round_trip(tmp_path):
    dump = make_dump(n=30, dims=(10, 3), n_classes=2)
    probes = train_probes(dump, ProbeTrainConfig(pool_dim=4, epochs=2))
    path = write_probe_bundle(probes, tmp_path / "probes.lprb")
    loaded = read_probe_bundle(path)
    assert len(loaded) == len(probes)
    assert all(a.same_parameters(b) for a, b in zip(probes, loaded))
    np.testing.assert_array_equal(probe_logits(loaded[0], dump.layers[0]), probe_logits(probes[0], dump.layers[0]))


def test_bundle_corruption_detected():
    raw = bytearray(encode_bundle([LinearProbe.identity(1, 3)]))
    raw[-6] ^= 0x10
    with pytest.raises(ChecksumMismatchError):
        decode_bundle(bytes(raw))


def test_bundle_header_corruption_is_a_checksum_error():
    raw = bytearray(encode_bundle([LinearProbe.identity(1, 3)]))
    raw[8] ^= 0x02
    with pytest.raises(ChecksumMismatchError):
        decode_bundle(bytes(raw))
