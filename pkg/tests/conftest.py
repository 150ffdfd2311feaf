"""Shared fixtures: tiny specs for unit tests, session-scoped corpus and
trained weights for the heavy end-to-end and acceptance tests."""

import time

import numpy as np
import pytest

from lisaliency.config import RunConfig, load_run_config
from lisaliency.dataset import generate_dataset, load_arrays, load_labeled_dir
from lisaliency.network import load_network_spec, parse_network_spec
from lisaliency.training import TrainConfig, train

REPO_CONFIG = "configs/reference.cfg"
REPO_SPEC = "configs/mini_vgg.spec"

CORPUS_SEED = 42
CORPUS_COUNTS = {"train": 512, "test": 256, "adversarial": 256}

TINY_SPEC_TEXT = """
input = 3x8x8
classes = a, b, c, d

layer conv name=c1 out=4 kernel=3 stride=1 pad=1
layer relu
layer maxpool window=2 stride=2
layer conv name=c2 out=6 kernel=3 stride=1 pad=1
layer relu
layer maxpool window=2 stride=2
layer flatten
layer fc name=f1 out=10
layer relu
layer fc name=f2 out=4
layer softmax
"""


@pytest.fixture(scope="session")
def reference_config() -> RunConfig:
    return load_run_config(REPO_CONFIG)


@pytest.fixture(scope="session")
def mini_vgg_spec():
    return load_network_spec(REPO_SPEC)


@pytest.fixture(scope="session")
def tiny_spec():
    return parse_network_spec(TINY_SPEC_TEXT)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    generate_dataset(root, CORPUS_SEED, CORPUS_COUNTS)
    return root


@pytest.fixture(scope="session")
def train_arrays(corpus_dir, reference_config, mini_vgg_spec):
    pre = reference_config.preprocess_config(mini_vgg_spec)
    return load_arrays(corpus_dir / "train", pre)


@pytest.fixture(scope="session")
def test_arrays(corpus_dir, reference_config, mini_vgg_spec):
    pre = reference_config.preprocess_config(mini_vgg_spec)
    return load_arrays(corpus_dir / "test", pre)


@pytest.fixture(scope="session")
def test_samples(corpus_dir):
    return load_labeled_dir(corpus_dir / "test")


@pytest.fixture(scope="session")
def adversarial_samples(corpus_dir):
    return load_labeled_dir(corpus_dir / "adversarial")


@pytest.fixture(scope="session")
def trained(mini_vgg_spec, reference_config, train_arrays):
    """Reference training run; returns (weights, loss_curve, wall_seconds)."""
    cfg = reference_config
    images, labels = train_arrays
    tcfg = TrainConfig(cfg.train_lr, cfg.train_epochs, cfg.train_batch, cfg.seed)
    start = time.monotonic()
    weights, curve = train(mini_vgg_spec, images, labels, tcfg)
    elapsed = time.monotonic() - start
    return weights, curve, elapsed
