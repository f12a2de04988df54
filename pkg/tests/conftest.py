import numpy as np
import pytest

from meshmae.data import prepare_sample
from meshmae.remesh import RemeshConfig, remesh_pipeline
from meshmae.synth import make_shape

from helpers import ACCEPTANCE


def build_samples(families, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    out = []
    for i, fam in enumerate(families):
        tm = remesh_pipeline(make_shape(fam, rng, noise), RemeshConfig(seed=seed * 1000 + i))
        out.append(prepare_sample(tm, f"{fam}{i}", i % 3))
    return out


@pytest.fixture(scope="session")
def samples():
    """Four small remeshed shapes, shared across tests (read-only)."""
    return build_samples(["sphere", "box", "cylinder", "torus"])


@pytest.fixture(scope="session")
def sample(samples):
    return samples[0]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, 11):
        terminalreporter.write_line(ACCEPTANCE.get(k, f"criterion {k:2d}: NOT RUN"))
