"""Shared fixtures: seeded generators, tiny architectures and synthetic CIFAR-10 files."""

import pytest

from hexresnet.cifar import make_synthetic_batches
from hexresnet.config import ArchConfig, ShortcutMode
from hexresnet.tensor import make_rng

SMALL_RECORDS = 40


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def tiny_arch():
    return ArchConfig(depth=8, shortcut_mode=ShortcutMode.HEX_PROJECTION, image_size=32)


@pytest.fixture
def synthetic_dir(tmp_path):
    """Six well-formed batch files with SMALL_RECORDS records each."""
    return make_synthetic_batches(tmp_path / "cifar", make_rng(7), records_per_file=SMALL_RECORDS)
