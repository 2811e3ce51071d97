import numpy as np
import pytest

from perfbnn import ensemble, hpo, synthetic
from perfbnn.dataset import write_dataset

SMALL_HP = hpo.Hyperparams(depth=1, epochs=500, base_lr=0.03, neurons_per_layer=10, laplace_scale=0.1)


@pytest.fixture(scope="session")
def pairwise_data():
    rng = np.random.default_rng(11)
    system = synthetic.pairwise_system()
    return system.sample(60, rng), system.sample(120, rng)


@pytest.fixture(scope="session")
def small_ensemble(pairwise_data):
    train, _ = pairwise_data
    return ensemble.train_ensemble(train, SMALL_HP, seed=5, predictive_samples=60)


@pytest.fixture(scope="session")
def csv_files(tmp_path_factory, pairwise_data):
    root = tmp_path_factory.mktemp("csv")
    train, test = pairwise_data
    write_dataset(train, root / "train.csv")
    write_dataset(test, root / "test.csv")
    return root


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
