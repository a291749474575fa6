import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fastmks import Dataset, Kernel
from fastmks.data import gaussian_mixture, random_sequences, uniform_cube

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")

VECTOR_KERNELS = ["linear", "polynomial", "cosine", "gaussian"]


def feature_distance(kernel, x, y):
    """Induced distance computed from three independent pair evaluations."""
    kxx, kyy, kxy = kernel(x, x), kernel(y, y), kernel(x, y)
    return float(np.sqrt(max(kxx + kyy - 2.0 * kxy, 0.0)))


@pytest.fixture(scope="session")
def small_vectors():
    return Dataset.from_vectors(uniform_cube(300, 4, seed=5))


@pytest.fixture(scope="session")
def clustered():
    return Dataset.from_vectors(gaussian_mixture(1000, 5, seed=3))


@pytest.fixture(scope="session")
def sequences():
    return Dataset.from_strings(random_sequences(300, length=40, seed=4))


@pytest.fixture(params=VECTOR_KERNELS)
def vector_kernel(request):
    return Kernel(request.param)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


@pytest.fixture
def acceptance(request):
    """Records one summary line per acceptance criterion."""
    return request.config.stash[ACCEPTANCE_KEY]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        terminalreporter.write_line(lines[number])
