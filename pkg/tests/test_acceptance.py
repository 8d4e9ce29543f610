"""Acceptance criteria 1-8, one PASS/FAIL line each (also repeated in the terminal summary)."""

import csv
import math
import time

import numpy as np
import pytest
from scipy import special

from iml.cli import main as cli_main
from iml.constants import check_superexp, compute_C1, compute_C2, compute_C3
from iml.geometry import DomainSpec, GridField, make_lattice
from iml.heat_kernel import (KernelEval, ck_residual, free_kernel, interval_kernel_eigen,
                             interval_kernel_images, killed_kernel)
from iml.intersection import intersection_pairing_samples
from iml.moment_oracle import MomentPlan, moment_exact
from iml.rate_solver import (MeasureTuple, eigen_tuple, empirical_exit_rate, mollified_product,
                             principal_eigenpair, rate_I, rate_I_eps)
from iml.stable_ext import StableParams, admissible, fractional_membership, sample_stable_increment

from conftest import bump_fn

RESULTS: list[str] = []
UNIT = DomainSpec.interval(0.0, 1.0)


def report(n: int, ok: bool, detail: str):
    line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def _disk_points(rng, n, r_max):
    r = r_max * np.sqrt(rng.uniform(0, 1, n))
    th = rng.uniform(0, 2 * np.pi, n)
    return np.stack([r * np.cos(th), r * np.sin(th)], -1)


def test_1_kernel_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {}
    doms = {"interval": UNIT, "half-space": DomainSpec.half_space(2), "disk": DomainSpec.disk([0, 0], 1.0)}
    for name, dom in doms.items():
        k = KernelEval(dom)
        res = []
        for _ in range(100):
            s, t = rng.uniform(0.01, 1.0, 2)
            if name == "interval":
                x, y = rng.uniform(0.01, 0.99, 2)
            elif name == "half-space":
                x = [rng.uniform(0.01, 2), rng.uniform(-2, 2)]
                y = [rng.uniform(0.01, 2), rng.uniform(-2, 2)]
            else:
                x, y = _disk_points(rng, 2, 0.99)
            res.append(ck_residual(k, s, t, x, y))
        worst[name] = max(res)
    ck_ok = all(v < 1e-6 for v in worst.values())

    violations = 0
    n = 10_000
    t = rng.uniform(1e-3, 2.0, n)
    for name, dom in doms.items():
        k = KernelEval(dom)
        if name == "interval":
            x, y = rng.uniform(0, 1, n), rng.uniform(0, 1, n)
            x, y = np.clip(x, 1e-9, 1 - 1e-9), np.clip(y, 1e-9, 1 - 1e-9)
            free = free_kernel(1, t, x, y)
        elif name == "half-space":
            x = np.stack([rng.uniform(1e-6, 3, n), rng.uniform(-3, 3, n)], -1)
            y = np.stack([rng.uniform(1e-6, 3, n), rng.uniform(-3, 3, n)], -1)
            free = free_kernel(2, t, x, y)
        else:
            x, y = _disk_points(rng, n, 0.999), _disk_points(rng, n, 0.999)
            free = free_kernel(2, t, x, y)
        kk = killed_kernel(k, t, x, y)
        violations += int(np.sum(kk > free * (1 + 1e-12) + 1e-300))

    xs, ys = np.meshgrid(np.linspace(0.01, 0.99, 25), np.linspace(0.01, 0.99, 25))
    series_gap = 0.0
    for tt in (0.01, 0.1, 1.0, 3.0):
        a = interval_kernel_images(tt, xs, ys, 0.0, 1.0)
        b = interval_kernel_eigen(tt, xs, ys, 0.0, 1.0)
        series_gap = max(series_gap, float(np.max(np.abs(a - b))))
    elapsed = time.perf_counter() - t0
    ok = ck_ok and violations == 0 and series_gap < 1e-10 and elapsed < 60
    report(1, ok, f"max CK residual {max(worst.values()):.2e} (interval {worst['interval']:.1e}, "
                  f"half-space {worst['half-space']:.1e}, disk {worst['disk']:.1e}); "
                  f"domination violations {violations}/30000; image vs eigen gap {series_gap:.1e}; "
                  f"{elapsed:.1f}s")


def test_2_moment_oracle_vs_monte_carlo():
    t0 = time.perf_counter()
    lat = make_lattice(UNIT, 0.005)
    f = GridField.from_function(lat, bump_fn([0.5], 0.3))
    ker = KernelEval(UNIT)
    exact = {k: moment_exact(MomentPlan(k, 2, 0.5, f, [[0.5]], ker, eps=0.05)) for k in (1, 2)}
    x = intersection_pairing_samples(UNIT, [0.5, 0.5], 0.5, 1e-4, lat, [0.05], f, 10_000,
                                     seed=20240, workers=4)[:, 0]
    n = len(x)
    mc = {1: (x.mean(), x.std(ddof=1) / math.sqrt(n)),
          2: ((x ** 2).mean(), (x ** 2).std(ddof=1) / math.sqrt(n))}
    z = {k: (mc[k][0] - exact[k]) / mc[k][1] for k in (1, 2)}
    elapsed = time.perf_counter() - t0
    ok = all(abs(v) <= 3 for v in z.values()) and elapsed < 600
    report(2, ok, f"k=1 oracle {exact[1]:.6g} vs MC {mc[1][0]:.6g}±{mc[1][1]:.2g} (z={z[1]:+.2f}); "
                  f"k=2 oracle {exact[2]:.6g} vs MC {mc[2][0]:.6g}±{mc[2][1]:.2g} (z={z[2]:+.2f}); "
                  f"{elapsed:.0f}s")


def test_3_superexponential_machinery():
    t0 = time.perf_counter()
    U = DomainSpec.interval(0.2, 0.8)
    c1 = [compute_C1(UNIT, 2, e, 0.1, U) for e in (0.2, 0.1, 0.05)]
    c1_ok = c1[0] > c1[1] > c1[2]
    deltas = np.array([0.01, 0.02, 0.04, 0.08])
    c2 = [compute_C2(DomainSpec.whole_space(1), 2, dl) for dl in deltas]
    slope = float(np.polyfit(np.log(deltas), np.log(c2), 1)[0])
    slope_ok = abs(slope / 0.75 - 1) < 0.02
    c3 = compute_C3(DomainSpec.whole_space(1), 2)
    c3_ok = abs(c3 - 0.594604) < 1e-4
    lat = make_lattice(UNIT, 0.005)
    f = GridField.from_function(lat, bump_fn([0.5], 0.3))
    rep = check_superexp(UNIT, 2, 0.5, f, 0.05, 0.05, k=2)
    elapsed = time.perf_counter() - t0
    ok = c1_ok and slope_ok and c3_ok and rep.holds and elapsed < 600
    report(3, ok, f"C1(eps,0.1) = {c1[0]:.4g} > {c1[1]:.4g} > {c1[2]:.4g}; C2 slope {slope:.6f} "
                  f"(target 0.75); C3 {c3:.7f}; k=2 LHS {rep.lhs:.3g} <= RHS {rep.rhs:.3g}; {elapsed:.0f}s")


def test_4_variational_layer():
    t0 = time.perf_counter()
    lam = principal_eigenpair(UNIT, h=1 / 512)
    err_i = lam.lambda1 / (math.pi ** 2 / 2) - 1
    disk = principal_eigenpair(DomainSpec.disk([0, 0], 1.0), h=1 / 128)
    j01 = special.jn_zeros(0, 1)[0]
    err_d = disk.lambda1 / (j01 ** 2 / 2) - 1
    rate = rate_I(eigen_tuple(lam, 2))
    err_r = rate / (2 * lam.lambda1) - 1
    elapsed = time.perf_counter() - t0
    ok = abs(err_i) < 1e-4 and abs(err_d) < 1e-3 and abs(err_r) < 1e-3 and elapsed < 120
    report(4, ok, f"interval lambda1 {lam.lambda1:.7f} (rel {err_i:+.1e}); disk {disk.lambda1:.7f} "
                  f"(rel {err_d:+.1e}); rate of eigen tuple / p lambda1 - 1 = {err_r:+.1e}; {elapsed:.1f}s")


def test_5_ldp_trend():
    t0 = time.perf_counter()
    rows = empirical_exit_rate(UNIT, 0.5, 2, [0.5, 1.0, 1.5], 1e-3, 1_000_000, seed=55, workers=4,
                               lambda1=math.pi ** 2 / 2)
    target = 2 * math.pi ** 2 / 2
    gaps = [abs(r.rate - target) for r in rows]
    last = rows[-1]
    elapsed = time.perf_counter() - t0
    ok = (abs(last.rate / target - 1) < 0.10 and gaps[0] > gaps[1] > gaps[2] and elapsed < 300)
    report(5, ok, "rates " + ", ".join(f"t={r.t}: {r.rate:.4f}±{r.stderr:.2g}" for r in rows)
                  + f" vs p*pi^2/2 = {target:.4f}; gaps " + ", ".join(f"{g:.3f}" for g in gaps)
                  + f"; {elapsed:.0f}s")


def test_6_gamma_limit_inequality():
    t0 = time.perf_counter()
    lat = make_lattice(UNIT, 1 / 256)
    m = GridField.from_function(lat, lambda x: 2 * np.sin(np.pi * x[..., 0]) ** 2)
    mt = MeasureTuple.from_densities([m, m])
    base = rate_I(mt)
    cm = lat.cell_measure
    gaps, ineq = [], []
    for eps in (0.2, 0.1, 0.05):
        q = mollified_product(mt, eps)
        gaps.append(cm * float(np.sum(np.abs(q - mt.mu.values))))
        ineq.append(rate_I_eps(MeasureTuple(mt.mu.with_values(q), mt.mus), eps) <= base)
    elapsed = time.perf_counter() - t0
    ok = all(ineq) and gaps[0] > gaps[1] > gaps[2] and elapsed < 60
    report(6, ok, f"rate_I_eps <= rate_I ({base:.5f}) at all eps: {all(ineq)}; L1 gaps "
                  + ", ".join(f"{g:.3e}" for g in gaps) + f"; {elapsed:.1f}s")


def test_7_stable_extension():
    t0 = time.perf_counter()
    table = [((1, 0.8, 2), True), ((2, 1.0, 2), False), ((1, 1.5, 2), False)]
    table_ok = all(admissible(StableParams(a, d, p)) is want for (d, a, p), want in table)
    worst_z = 0.0
    for alpha in (0.5, 1.0, 1.5):
        x = sample_stable_increment(alpha, 0.5, seed=77, n=100_000, stream_key=(int(alpha * 10),))[:, 0]
        c = np.cos(x)
        z = (c.mean() - math.exp(-0.5)) / (c.std(ddof=1) / math.sqrt(len(c)))
        worst_z = max(worst_z, abs(z))
    lats = [make_lattice(UNIT, h) for h in (1 / 64, 1 / 128, 1 / 256)]
    bump = fractional_membership(lambda lat: GridField.from_function(lat, bump_fn([0.5], 0.3)), 1.0, lats)
    bump_rel = abs(bump.energies[-1] / bump.energies[-2] - 1)
    ind = fractional_membership(
        lambda lat: GridField.from_function(lat, lambda x: (np.abs(x[..., 0] - 0.5) < 0.25) * 1.0), 1.0, lats)
    elapsed = time.perf_counter() - t0
    ok = table_ok and worst_z <= 3 and bump_rel < 0.02 and not bump.divergent and ind.divergent and elapsed < 180
    report(7, ok, f"truth table {'exact' if table_ok else 'wrong'}; worst CF z {worst_z:.2f}; bump energy "
                  f"change {bump_rel:.2e}; indicator energies "
                  + ", ".join(f"{e:.2f}" for e in ind.energies) + f" flagged={ind.divergent}; {elapsed:.1f}s")


CONFIG = """
seed = 9
p = 2
t = 0.5
dt = 0.005
eps = 0.1
samples = 3000
x0 = [[0.5]]

[domain]
kind = "interval"
d = 1
params = {{ a = 0.0, b = 1.0 }}

[grid]
h = 0.02

[simulate]
eps_list = [0.2, 0.1]
t_list = [0.25, 0.5]

[ldp]
t_list = [0.25, 0.5]

[stable]
alpha = 0.8
"""


def _numeric_cells(path):
    out = []
    for row in csv.DictReader(open(path)):
        for key, v in row.items():
            try:
                out.append(float(v))
            except ValueError:
                pass
    return np.array(out)


def test_8_engineering_invariants(tmp_path):
    cfg = tmp_path / "exp.toml"
    cfg.write_text(CONFIG.format())
    identical, worst = True, 0.0
    for sub in ("simulate", "ldp-check", "stable"):
        paths = {}
        for tag, workers in (("a", 1), ("b", 1), ("c", 4)):
            out = tmp_path / f"{sub}-{tag}"
            assert cli_main([sub, "--config", str(cfg), "--out", str(out), "--workers", str(workers)]) == 0
            paths[tag] = next(out.glob("*.csv"))
        identical &= paths["a"].read_bytes() == paths["b"].read_bytes()
        a, c = _numeric_cells(paths["a"]), _numeric_cells(paths["c"])
        rel = np.abs(a - c) / np.maximum(np.abs(a), 1e-300)
        worst = max(worst, float(rel.max()))
    ok = identical and worst <= 1e-12
    report(8, ok, f"repeat runs byte-identical: {identical}; worst relative change 1 vs 4 workers {worst:.1e}")
