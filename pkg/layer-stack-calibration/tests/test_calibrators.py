import json

import numpy as np
import pytest

from lates.core.calibrators import (
    CalibratorFile,
    LatesCalibrator,
    TemperatureCalibrator,
    load_calibrator,
    save_calibrator,
)
from lates.core.config import AggTrainConfig
from lates.core.errors import DataError, DimensionMismatchError
from lates.core.interfaces import Calibrator
from lates.core.numerics import softmax
from lates.core.stack import AggregatorWeights, LogitStack, TemperatureModel

from conftest import make_stack


def test_lates_calibrator_round_trip(tmp_path):
    stack, labels = make_stack(n=60)
    calibrator = LatesCalibrator.fit(stack, labels, AggTrainConfig(seed=0, epochs=5))
    path = save_calibrator(calibrator, tmp_path / "lates.json")

    on_disk = json.loads(path.read_text())
    assert on_disk["kind"] == "lates"
    assert on_disk["d"] == 3 and on_disk["K"] == 4
    assert "tau" not in on_disk

    loaded = load_calibrator(path)
    assert isinstance(loaded, LatesCalibrator)
    np.testing.assert_array_equal(loaded.predict_proba(stack), calibrator.predict_proba(stack))


def test_temperature_calibrator_round_trip(tmp_path):
    stack, labels = make_stack(n=60)
    calibrator = TemperatureCalibrator.fit(stack, labels)
    path = save_calibrator(calibrator, tmp_path / "temperature.json")

    on_disk = json.loads(path.read_text())
    assert on_disk == {"kind": "temperature", "tau": calibrator.model.tau, "loss": "nll", "d": 1, "K": 4}
    loaded = load_calibrator(path)
    np.testing.assert_array_equal(loaded.predict_proba(stack), calibrator.predict_proba(stack))


def test_temperature_calibrator_accepts_bare_logits():
    stack, _ = make_stack()
    calibrator = TemperatureCalibrator(TemperatureModel(tau=2.0), 4)
    expected = softmax(stack.final_logits / 2.0)
    np.testing.assert_allclose(calibrator.predict_proba(stack), expected)
    np.testing.assert_allclose(calibrator.predict_proba(stack.final_logits), expected)


def test_class_count_checked():
    stack = LogitStack(np.zeros((2, 1, 3)))
    with pytest.raises(DimensionMismatchError):
        LatesCalibrator(AggregatorWeights.initial(1), 4).predict_proba(stack)
    with pytest.raises(DimensionMismatchError):
        TemperatureCalibrator(TemperatureModel(tau=1.0), 4).predict_proba(stack)


@pytest.mark.parametrize(
    "payload",
    [
        {"kind": "lates", "tau": 1.0, "loss": "nll", "d": 1, "K": 2},
        {"kind": "lates", "beta": [1.0, 2.0], "loss": "nll", "d": 3, "K": 2},
        {"kind": "temperature", "beta": [1.0], "loss": "nll", "d": 1, "K": 2},
        {"kind": "temperature", "tau": -1.0, "loss": "nll", "d": 1, "K": 2},
        {"kind": "matrix", "tau": 1.0, "loss": "nll", "d": 1, "K": 2},
        {"kind": "temperature", "tau": 1.0, "loss": "nll", "d": 1, "K": 2, "bias": 0.0},
    ],
)
def test_malformed_calibrator_files_rejected(tmp_path, payload):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(payload))
    with pytest.raises(DataError):
        load_calibrator(path)


def test_not_json_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(DataError):
        load_calibrator(path)


def test_file_model_validates_directly():
    spec = CalibratorFile(kind="lates", beta=[0.0, 1.5], loss="square", d=2, K=3)
    assert spec.model_dump(exclude_none=True) == {"kind": "lates", "beta": [0.0, 1.5], "loss": "square", "d": 2, "K": 3}


def test_calibrator_without_fit_is_abstract():
    class Unfitted(Calibrator):
        kind = "temperature"

        def predict_proba(self, inputs):
            return softmax(inputs)

        def to_file_model(self):
            return {}

    with pytest.raises(TypeError):
        Unfitted()
    assert {"fit", "predict_proba", "to_file_model"} <= Calibrator.__abstractmethods__


def test_warm_started_lates_calibrator_matches_temperature_at_zero_epochs():
    stack, labels = make_stack(n=80, scale=3.0)
    lates = LatesCalibrator.fit(stack, labels, AggTrainConfig(init="temperature", epochs=0, seed=0))
    temperature = TemperatureCalibrator.fit(stack, labels)
    np.testing.assert_array_equal(lates.predict_proba(stack), temperature.predict_proba(stack))
