import pytest

from aidr.dataset import generate_synthetic_dataset
from aidr.teacher import attach_rationales, generate_pcot, mock_teacher


@pytest.fixture(scope="session")
def small_manifest():
    return generate_synthetic_dataset(total=40, seed=11, split="random")


@pytest.fixture(scope="session")
def taught_manifest(small_manifest):
    record = generate_pcot(small_manifest, mock_teacher(small_manifest), concurrency_limit=2,
                           clock=lambda: "t0")
    manifest, warnings = attach_rationales(small_manifest, record)
    assert not warnings
    return manifest
