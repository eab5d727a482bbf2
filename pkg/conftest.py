"""Shared fixtures for the LSTM-CCTC test suite."""
import os

import numpy as np
import pytest

from src.features.grid import FeatureGrid
from src.features.synth import Scene, SceneSpec, generate_scene
from src.network.lstm import FrameLogProbs
from src.proposals.boxes import Box


def pytest_collection_modifyitems(config, items):
    if os.getenv("LSTM_CCTC_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set LSTM_CCTC_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch, tmp_path):
    """Keep a developer's .env and LSTM_CCTC_* variables out of the tests."""
    for name in list(os.environ):
        if name.startswith("LSTM_CCTC_") and name != "LSTM_CCTC_RUN_SLOW":
            monkeypatch.delenv(name, raising=False)
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_logp(rng):
    def make(T):
        return FrameLogProbs.from_logits(rng.normal(0.0, 1.5, (T, 2)))
    return make


@pytest.fixture
def tiny_spec():
    return SceneSpec(n=4, k=3, object_count_range=(1, 2), object_side_range=(1, 2),
                     signal_channels=(0,), noise_sigma=0.0, seed=5)


@pytest.fixture
def tiny_scenes(tiny_spec):
    return [generate_scene(tiny_spec, i) for i in range(4)]


@pytest.fixture
def single_object_scene():
    values = np.zeros((4, 4, 2))
    values[1:3, 1:3, 0] = 1.0
    return Scene(FeatureGrid(values), [Box(1, 1, 2, 2)], 1, scene_id="train-0000000")
