import math

import numpy as np
import pytest

from iml.errors import InputError
from iml.geometry import DomainSpec, make_lattice
from iml.heat_kernel import KernelEval, survival_function
from iml.path_sim import (KilledPath, joint_survival_probability, occupation_field,
                          occupation_samples, sample_conditioned_paths, sample_path,
                          survival_curve, survival_probability)


def test_whole_space_never_killed():
    assert survival_probability(DomainSpec.whole_space(2), [0, 0], 1.0, 0.01, 10, 1) == (1.0, 0.0)


def test_survival_matches_kernel_mass(unit_interval):
    n = 200_000
    est, se = survival_probability(unit_interval, 0.5, 1.0, 1e-3, n, seed=3)
    exact = float(survival_function(KernelEval(unit_interval), 1.0, 0.5))
    assert abs(est - exact) < 3 * max(se, math.sqrt(exact * (1 - exact) / n))


def test_bridge_correction_removes_step_bias(unit_interval):
    n = 100_000
    a, sa = survival_probability(unit_interval, 0.3, 0.5, 4e-3, n, seed=11)
    b, sb = survival_probability(unit_interval, 0.3, 0.5, 1e-3, n, seed=12)
    assert abs(a - b) < 3 * math.hypot(sa, sb)


def test_survival_curve_is_nonincreasing(unit_interval):
    est, se, counts = survival_curve(unit_interval, 0.5, [0.1, 0.2, 0.4], 1e-3, 5000, seed=2)
    assert np.all(np.diff(counts) <= 0)


def test_joint_survival_is_product(unit_interval):
    n = 50_000
    joint, se = joint_survival_probability(unit_interval, [0.5, 0.4], 0.3, 1e-3, n, seed=8)
    k = KernelEval(unit_interval)
    exact = float(survival_function(k, 0.3, 0.5) * survival_function(k, 0.3, 0.4))
    assert abs(joint - exact) < 3 * se


def test_same_seed_same_path(unit_interval):
    a = sample_path(unit_interval, 0.5, 0.2, 1e-3, seed=4, index=7)
    b = sample_path(unit_interval, 0.5, 0.2, 1e-3, seed=4, index=7)
    assert np.array_equal(a.positions, b.positions)
    assert a.killed == b.killed


def test_killed_path_invariants(unit_interval):
    p = sample_path(unit_interval, 0.05, 1.0, 1e-3, seed=1)
    assert p.killed
    assert np.all((p.positions > 0) & (p.positions < 1))
    assert p.exit_time_estimate <= p.t
    q = sample_path(DomainSpec.whole_space(1), 0.0, 0.1, 1e-3, seed=1)
    assert not q.killed and q.exit_time_estimate == math.inf


def test_occupation_mass_of_surviving_path():
    lat = make_lattice(DomainSpec.whole_space(1), 0.05, margin=5)
    p = sample_path(DomainSpec.whole_space(1), 0.0, 0.5, 1e-3, seed=9)
    assert occupation_field(p, lat, 0.5).total_mass == pytest.approx(1.0, abs=1e-12)


def test_occupation_mass_of_half_lived_path(unit_interval):
    lat = make_lattice(unit_interval, 0.05)
    n = 100
    pos = np.full((n + 1, 1), 0.5)
    path = KilledPath(pos[: n // 2 + 1], 0.01, 1.0, n // 2, True, 0.505)
    occ = occupation_field(path, lat, 1.0)
    assert occ.total_mass == pytest.approx(0.5, abs=0.01 + 1e-12)


def test_occupation_samples_worker_independent(unit_interval):
    lat = make_lattice(unit_interval, 0.05)
    a = occupation_samples(unit_interval, 0.5, 0.2, 1e-3, lat, 300, seed=5, block_size=100, workers=1)
    b = occupation_samples(unit_interval, 0.5, 0.2, 1e-3, lat, 300, seed=5, block_size=100, workers=3)
    assert np.array_equal(a, b)


def test_conditioned_occupation_approaches_ground_state(unit_interval):
    t, dt, n = 5.0, 1e-3, 10_000
    paths = sample_conditioned_paths(unit_interval, 0.5, t, dt, n, seed=21)
    pos = np.stack([p.positions[:-1, 0] for p in paths])
    hist, edges = np.histogram(pos, bins=50, range=(0, 1), density=True)
    mid = 0.5 * (edges[:-1] + edges[1:])
    target = 2 * np.sin(np.pi * mid) ** 2
    l1 = np.sum(np.abs(hist - target)) * (edges[1] - edges[0])
    assert l1 < 0.05


def test_dt_must_divide_t(unit_interval):
    with pytest.raises(InputError):
        sample_path(unit_interval, 0.5, 0.25, 0.1, seed=0)
