import numpy as np
import pytest

from helpers import CRITERIA
from pnpecg import datasets, gmm

TRAIN_SEED = 104


@pytest.fixture(scope="session")
def record():
    return datasets.synthetic_record(60, seed=TRAIN_SEED)


@pytest.fixture(scope="session")
def train_test(record):
    return datasets.train_test_split(record)


@pytest.fixture(scope="session")
def trained(train_test):
    """K=10, P=30 model on the 10 800-sample training part, plus its fit report."""
    train, _ = train_test
    return gmm.fit_em(gmm.extract_training_patches(train, 30), gmm.EmConfig(n_components=10, seed=0))


@pytest.fixture(scope="session")
def trained_model(trained):
    return trained[0]


@pytest.fixture(scope="session")
def held_out(train_test):
    return train_test[1].samples


@pytest.fixture(scope="session")
def model_file(trained_model, tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "gmm.json"
    gmm.save_model(trained_model, path)
    return path


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
