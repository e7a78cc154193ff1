import time

import numpy as np
import pytest

from ddmres import TriMesh2D, flow_aligned_strip_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def strip_mesh():
    return flow_aligned_strip_mesh(4, 4, seed=0)


@pytest.fixture
def stacked_pair():
    """Two flow-aligned triangles on the unit square, flow (0, 1)."""
    verts = [(0, 0), (1, 0), (1, 1), (0, 1)]
    return TriMesh2D(verts, [(0, 1, 2), (0, 2, 3)], [(0.0, 1.0), (0.0, 1.0)])


class Stopwatch:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


@pytest.fixture
def stopwatch():
    return Stopwatch()
