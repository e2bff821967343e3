import numpy as np
import pytest

from hpppf.pointcloud import OrientedPointCloud, PointCloud


def random_oriented(n, seed, spread=1.0):
    gen = np.random.default_rng(seed)
    pts = gen.normal(size=(n, 3)) * spread
    nrm = gen.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return OrientedPointCloud(PointCloud(pts), nrm)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def lshape_template():
    from hpppf.robustness import shape_template
    return shape_template("lshape", 300, 0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
