import math

import numpy as np
import pytest

from iml.geometry import DomainSpec, GridField, make_lattice


def bump_fn(center, radius):
    c = np.asarray(center, dtype=float)

    def f(x):
        z = np.sum(((x - c) / radius) ** 2, axis=-1)
        return np.where(z < 1, math.e * np.exp(-1.0 / np.maximum(1.0 - z, 1e-300)), 0.0)

    return f


@pytest.fixture
def unit_interval():
    return DomainSpec.interval(0.0, 1.0)


@pytest.fixture
def unit_disk():
    return DomainSpec.disk([0.0, 0.0], 1.0)


@pytest.fixture
def bump_on_interval(unit_interval):
    def make(h):
        lat = make_lattice(unit_interval, h)
        return GridField.from_function(lat, bump_fn([0.5], 0.3))

    return make


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
