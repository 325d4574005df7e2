#
# License: See LICENSE.md file
#

import io
import os
from pathlib import Path

import numpy as np

np.set_printoptions(threshold=2**32)
np.set_printoptions(linewidth=np.inf)

import pytest
from filelock import FileLock

import perturbosr
from perturbosr.core.network import NetworkSpec, TrainConfig, init_network, load_model, save_model, train
from perturbosr.data import make_open_split, synth_blobs

extra_test_artifact_dir = Path("test_artifacts/")
os.makedirs(extra_test_artifact_dir, exist_ok=True)

TINY_HIDDEN = (16, )
TINY_TRAIN = TrainConfig(epochs=60, batch_size=32, learning_rate=1e-2, seed=5)


@pytest.fixture(scope="session")
def tiny_dataset():
    return synth_blobs(3, 2, 40, 4, overlap=0.0, seed=1)


@pytest.fixture(scope="session")
def tiny_split(tiny_dataset):
    ds, unknown_ids = tiny_dataset
    return make_open_split(ds, seed=1, unknown_class_ids=unknown_ids)


@pytest.fixture(scope="session")
def untrained_model():
    return init_network(NetworkSpec(4, [8, 6], 3), seed=11)


@pytest.fixture(scope="session")
def trained_model_file(tiny_split):
    # Trained once and shared by every xdist worker
    path = extra_test_artifact_dir / Path("tiny_model.ckpt")
    with FileLock(path.with_suffix(".lock")) as lock:
        if not os.path.isfile(path):
            spec = NetworkSpec(tiny_split.train.feature_dim, TINY_HIDDEN, tiny_split.num_known)
            model = train(init_network(spec, seed=2), tiny_split.train.features, tiny_split.train.labels, TINY_TRAIN)
            save_model(model, str(path))
    return str(path)


@pytest.fixture(scope="session")
def trained_model(trained_model_file):
    return load_model(trained_model_file)


@pytest.fixture
def log_capture():
    stream = io.StringIO()
    perturbosr.logging.log_stream(stream)
    perturbosr.logging.log_level("DEBUG")
    yield stream
    perturbosr.logging.log_stream(None)
    perturbosr.logging.log_level("WARNING")


BLOB_HIDDEN = (128, 64)
BLOB_TRAIN = TrainConfig(epochs=50, batch_size=256, learning_rate=1e-3, seed=0)


@pytest.fixture(scope="session")
def blob_split():
    # 3 known and 3 unknown well-separated classes, 200 samples each
    ds, unknown_ids = synth_blobs(3, 3, 200, 8, overlap=0.0, seed=0)
    return make_open_split(ds, seed=0, unknown_class_ids=unknown_ids)


@pytest.fixture(scope="session")
def blob_model(blob_split):
    path = extra_test_artifact_dir / Path("blob_model.ckpt")
    with FileLock(path.with_suffix(".lock")) as lock:
        if not os.path.isfile(path):
            spec = NetworkSpec(blob_split.train.feature_dim, BLOB_HIDDEN, blob_split.num_known)
            model = train(init_network(spec, seed=0), blob_split.train.features, blob_split.train.labels, BLOB_TRAIN)
            save_model(model, str(path))
    return load_model(str(path))
