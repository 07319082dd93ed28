import numpy as np
import pytest

from mixattack.data import encode_dataset, fit_standardization, generate_synthetic, train_test_split
from mixattack.mahalanobis import fit_covariance
from mixattack.model import TrainConfig, train


class Toy:
    """Small trained setup shared by the attack and baseline tests."""

    def __init__(self, seed=0):
        self.ds, self.schema = generate_synthetic(d_n=4, cat_sizes=(3, 4, 3), n_samples=600, seed=seed)
        self.layout = self.schema.layout
        tr, te = train_test_split(self.ds, 0.8, seed)
        self.stats = fit_standardization(tr)
        self.X_train = encode_dataset(tr, self.stats)
        self.X_test = encode_dataset(te, self.stats)
        self.y_train, self.y_test = tr.labels, te.labels
        self.model, self.report = train(self.X_train, self.y_train, TrainConfig(epochs=15, seed=seed),
                                        self.X_test, self.y_test)
        self.cov = fit_covariance(self.X_train)


@pytest.fixture(scope="session")
def toy():
    return Toy()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line for an acceptance criterion and return the verdict."""
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
