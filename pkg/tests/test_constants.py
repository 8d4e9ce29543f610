import math

import numpy as np
import pytest

from iml.constants import (ConstantsReport, check_admissible, check_superexp, compute_C1,
                           compute_C2, compute_C3)
from iml.errors import AdmissibilityError, InputError
from iml.geometry import DomainSpec, GridField, make_lattice

from conftest import bump_fn


def test_C3_whole_line_closed_form():
    # ∫ (e^{-√2|u|}/√2)^2 du = 1/(2√2)
    expect = (1 / (2 * math.sqrt(2))) ** 0.5
    assert compute_C3(DomainSpec.whole_space(1), 2) == pytest.approx(expect, abs=1e-8)


def test_C3_killing_lowers_value(unit_interval):
    assert compute_C3(unit_interval, 2) <= compute_C3(DomainSpec.whole_space(1), 2)


def test_C3_planar_refinement():
    sq = DomainSpec.box([0.0, 0.0], [1.0, 1.0])
    a = compute_C3(sq, 2, h=0.05)
    b = compute_C3(sq, 2, h=0.025)
    assert math.isfinite(b) and abs(a - b) < 0.01 * b


@pytest.mark.parametrize("d,p", [(1, 2), (2, 2), (3, 2), (2, 3), (1, 4)])
def test_C2_scaling_exponent(d, p):
    deltas = np.array([0.01, 0.02, 0.04, 0.08])
    vals = [compute_C2(DomainSpec.whole_space(d), p, x) for x in deltas]
    slope = np.polyfit(np.log(deltas), np.log(vals), 1)[0]
    assert slope == pytest.approx((d - p * (d - 2)) / (2 * p), rel=0.02)


def test_C2_on_interval_below_line(unit_interval):
    assert compute_C2(unit_interval, 2, 0.1) <= compute_C2(DomainSpec.whole_space(1), 2, 0.1)


def test_C1_decreases_with_eps(unit_interval):
    U = DomainSpec.interval(0.2, 0.8)
    vals = [compute_C1(unit_interval, 2, e, 0.1, U) for e in (0.2, 0.1, 0.05)]
    assert vals[0] > vals[1] > vals[2] > 0


def test_inadmissible_pairs_refused():
    with pytest.raises(AdmissibilityError):
        check_admissible(3, 3)
    with pytest.raises(AdmissibilityError):
        compute_C3(DomainSpec.whole_space(3), 4)
    check_admissible(2, 5)


def test_report_rejects_bad_values(unit_interval):
    with pytest.raises(InputError):
        ConstantsReport(unit_interval, 2, None, c2={0.1: float("nan")})
    rep = ConstantsReport(unit_interval, 2, None, c1={(0.1, 0.1): 0.2}, c2={0.1: 0.1}, c3=0.24)
    assert [r["name"] for r in rep.rows()] == ["C1", "C2", "C3"]


def test_superexp_first_moment(unit_interval):
    lat = make_lattice(unit_interval, 0.01)
    f = GridField.from_function(lat, bump_fn([0.5], 0.3))
    rep = check_superexp(unit_interval, 2, 0.5, f, 0.05, 0.05, k=1)
    assert rep.holds and 0 < rep.lhs <= rep.middle <= rep.rhs


def test_superexp_zero_function(unit_interval):
    lat = make_lattice(unit_interval, 0.01)
    rep = check_superexp(unit_interval, 2, 0.5, GridField(lat, np.zeros(lat.shape)), 0.05, 0.05, k=2)
    assert rep.lhs == 0.0 and rep.holds
