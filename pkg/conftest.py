"""
Shared fixtures: a tiny run config, its dataset, and trained checkpoints
"""

from pathlib import Path

import pytest

from nestattn.core.config import load_run_config
from nestattn.core.models import MechanismKind
from nestattn.data.dataset import build_dataset_from_config
from nestattn.denoiser.pipeline import train_adapter, train_host

ROOT = Path(__file__).resolve().parent
SMOKE_CONFIG = ROOT / "configs" / "smoke.toml"


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow empirical checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long empirical check, skipped unless --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def smoke_config_path():
    """Path of the tiny config used by the CLI tests"""
    return SMOKE_CONFIG


@pytest.fixture(scope="session")
def smoke_config():
    """Tiny run config (one block, a few steps)"""
    return load_run_config(SMOKE_CONFIG)


@pytest.fixture(scope="session")
def smoke_samples(smoke_config):
    """Training triplets rendered from the smoke config"""
    return build_dataset_from_config(smoke_config.data, max_tokens=smoke_config.model.max_tokens)


@pytest.fixture(scope="session")
def host_bundle(smoke_config, smoke_samples):
    """Stage-A host trained for the smoke budget"""
    bundle, _ = train_host(smoke_config, smoke_samples)
    return bundle


@pytest.fixture(scope="session")
def mechanism_bundles(smoke_config, smoke_samples, host_bundle):
    """Stage-B bundles, trained lazily per mechanism on the shared host"""
    trained = {}

    def get(mechanism: MechanismKind):
        mechanism = MechanismKind(mechanism)
        if mechanism not in trained:
            config = smoke_config.with_overrides(personalization={"mechanism": mechanism.value})
            trained[mechanism], _ = train_adapter(config, host_bundle, smoke_samples)
        return trained[mechanism]

    return get


@pytest.fixture(scope="session")
def nested_bundle(mechanism_bundles):
    """Nested-attention adapter on the smoke host"""
    return mechanism_bundles(MechanismKind.NESTED)
