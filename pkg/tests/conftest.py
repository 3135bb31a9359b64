import numpy as np
import pytest

from anls_lab.model import ReluNetwork, TrainingSet


def random_data(rng, m, lo=-1.0, hi=1.0):
    while True:
        xs = np.sort(rng.uniform(lo, hi, m))
        if np.all(np.diff(xs) > 0):
            return TrainingSet(xs, rng.normal(size=m))


def random_net(rng, n, lo=-1.2, hi=1.2):
    b = np.sort(rng.uniform(lo, hi, n))
    return ReluNetwork(b, rng.normal(size=n))


def rel_err(a, b, floor=1e-12):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def five_points():
    # {((k - 3) / 2, (1 - (-1)^k) / 2)}, k = 1..5
    k = np.arange(1, 6)
    return TrainingSet((k - 3) / 2.0, (1 - (-1.0) ** k) / 2.0)
