import math

import numpy as np
import pytest

from iml.errors import AdmissibilityError, InputError
from iml.geometry import DomainSpec, GridField, make_lattice
from iml.rate_solver import INF, MeasureTuple
from iml.stable_ext import (StableParams, admissible, fractional_energy, fractional_membership,
                            rate_I_stable, require_admissible, sample_stable_increment,
                            sample_stable_paths)

from conftest import bump_fn

UNIT = DomainSpec.interval(0.0, 1.0)


@pytest.mark.parametrize("d,alpha,p,ok", [(1, 0.8, 2, True), (2, 1.0, 2, False), (1, 1.5, 2, False),
                                          (2, 1.5, 3, True), (3, 1.9, 3, False), (3, 1.9, 2, True), (3, 1.0, 2, False)])
def test_admissibility_table(d, alpha, p, ok):
    sp = StableParams(alpha, d, p)
    assert admissible(sp) is ok
    if not ok:
        with pytest.raises(AdmissibilityError):
            require_admissible(sp)


def test_alpha_outside_range_rejected():
    with pytest.raises(InputError):
        StableParams(2.0, 1, 2)


def test_gaussian_limit_variance():
    x = sample_stable_increment(2.0, 0.1, seed=1, n=100_000)[:, 0]
    se = 0.2 * math.sqrt(2 / x.size)
    assert abs(x.var() - 0.2) < 3 * se


def test_cauchy_quartiles():
    x = sample_stable_increment(1.0, 1.0, seed=2, n=100_000)[:, 0]
    n = x.size
    # quantile standard error 1 / (f(q) sqrt n) with Cauchy density f
    se_med = math.sqrt(0.25 / n) * math.pi
    se_q3 = math.sqrt(0.75 * 0.25 / n) / (1 / (2 * math.pi))
    assert abs(np.median(x)) < 3 * se_med
    assert abs(np.quantile(x, 0.75) - 1.0) < 3 * se_q3


@pytest.mark.parametrize("alpha", [0.5, 1.2, 1.8])
def test_characteristic_function(alpha):
    dt = 0.5
    x = sample_stable_increment(alpha, dt, seed=3, n=100_000, d=2)
    for xi in ([0.5, 0.0], [1.0, 1.0]):
        c = np.cos(x @ np.asarray(xi))
        expect = math.exp(-dt * np.linalg.norm(xi) ** alpha)
        assert abs(c.mean() - expect) < 3 * c.std() / math.sqrt(len(c))


def test_stable_paths_killed_on_half_line():
    paths = sample_stable_paths(DomainSpec.half_space(1), [1.0], 1.0, 1.0, 0.01, 200, seed=5)
    assert paths.killed.any() and not paths.killed.all()
    alive = ~paths.killed
    assert np.all(paths.positions[alive][:, 1:, 0] > 0)


def test_fractional_energy_basic():
    lat = make_lattice(UNIT, 1 / 64)
    psi = GridField.from_function(lat, bump_fn([0.5], 0.3))
    e = fractional_energy(psi, 1.0)
    assert e > 0
    assert fractional_energy(psi.with_values(-psi.values), 1.0) == pytest.approx(e, rel=1e-12)
    assert fractional_energy(psi.with_values(np.zeros(lat.shape)), 1.0) == 0.0


def test_fractional_energy_translation_invariant():
    big = DomainSpec.interval(0.0, 2.0)
    lat = make_lattice(big, 1 / 64)
    a = fractional_energy(GridField.from_function(lat, bump_fn([0.8], 0.3)), 1.0)
    b = fractional_energy(GridField.from_function(lat, bump_fn([1.2], 0.3)), 1.0)
    assert a == pytest.approx(b, rel=1e-10)


def test_bump_stable_indicator_divergent():
    lats = [make_lattice(UNIT, h) for h in (1 / 64, 1 / 128, 1 / 256)]
    bump = fractional_membership(lambda lat: GridField.from_function(lat, bump_fn([0.5], 0.3)), 1.0, lats)
    assert not bump.divergent
    assert abs(bump.energies[-1] - bump.energies[-2]) < 0.02 * bump.energies[-1]
    ind = fractional_membership(
        lambda lat: GridField.from_function(lat, lambda x: (np.abs(x[..., 0] - 0.5) < 0.25) * 1.0), 1.0, lats)
    assert ind.divergent


def sin2(h):
    lat = make_lattice(UNIT, h)
    return GridField.from_function(lat, lambda x: 2 * np.sin(np.pi * x[..., 0]) ** 2)


def test_stable_rate_of_sin_squared():
    sp = StableParams(0.8, 1, 2)
    a = rate_I_stable(MeasureTuple.from_densities([sin2(1 / 64)] * 2), sp)
    b = rate_I_stable(MeasureTuple.from_densities([sin2(1 / 128)] * 2), sp)
    assert math.isfinite(a) and abs(a - b) < 0.03 * b


def test_stable_rate_refusals():
    m = sin2(1 / 64)
    with pytest.raises(AdmissibilityError):
        rate_I_stable(MeasureTuple.from_densities([m] * 2), StableParams(1.0, 1, 2))
    assert rate_I_stable(MeasureTuple(m, (m, m)), StableParams(0.8, 1, 2)) == INF
