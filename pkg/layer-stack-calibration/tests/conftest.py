import importlib.util
import os
import re
import sys
import zlib
from pathlib import Path

import hypothesis
import numpy as np
import pytest

SRC = Path(__file__).resolve().parent.parent / "src"
FIXTURES = Path(__file__).resolve().parent / "fixtures"

# the package maps src/ to `lates`; load it from the checkout when not installed
try:
    import lates  # noqa: F401
except ImportError:
    spec = importlib.util.spec_from_file_location("lates", SRC / "__init__.py", submodule_search_locations=[str(SRC)])
    module = importlib.util.module_from_spec(spec)
    sys.modules["lates"] = module
    spec.loader.exec_module(module)

from lates.core.dataio import ActivationDump, LayerBlock  # noqa: E402
from lates.core.stack import LogitStack  # noqa: E402

hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=100, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "fast"))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs taking more than a few seconds")


def read_hex_fixture(name: str) -> bytes:
    """Hex bytes with '#' comments stripped, sealed with their CRC32 footer."""
    text = (FIXTURES / name).read_text()
    digits = "".join(re.sub(r"#.*", "", line) for line in text.splitlines())
    payload = bytes.fromhex(digits)
    return payload + (zlib.crc32(payload) & 0xFFFFFFFF).to_bytes(4, "little")


def make_dump(n: int = 40, dims=(6, 5), n_classes: int = 3, seed: int = 0, with_logits: bool = True) -> ActivationDump:
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % n_classes
    layers = []
    for i, f in enumerate(dims, start=1):
        # class-dependent shift so probes have something to learn
        data = rng.normal(size=(n, f)) + 0.5 * i * np.eye(n_classes, f)[labels]
        layers.append(LayerBlock(i, data))
    if with_logits:
        logits = 2.0 * np.eye(n_classes)[labels] + rng.normal(size=(n, n_classes))
        layers.append(LayerBlock(len(dims) + 1, logits, is_final_logits=True))
    return ActivationDump(n_classes=n_classes, layers=tuple(layers), labels=labels)


def make_stack(n: int = 30, d: int = 3, n_classes: int = 4, seed: int = 0, scale: float = 2.0):
    rng = np.random.default_rng(seed)
    return LogitStack(scale * rng.normal(size=(n, d, n_classes))), rng.integers(0, n_classes, size=n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_dump_bytes() -> bytes:
    return read_hex_fixture("tiny_dump.hex")


@pytest.fixture
def small_dump() -> ActivationDump:
    return make_dump()
