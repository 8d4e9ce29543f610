"""Symmetric α-stable processes: admissibility, sampling and fractional energy.

The α-stable analogue replaces ½∫|∇ψ|² by the Gagliardo double integral

    E_α(ψ) = ∫_D ∫_D |ψ(x) - ψ(y)|² / |x - y|^{d+α} dx dy

(no ½ prefactor) and the admissibility condition d - p(d-2) > 0 by
α < d and d - p(d-α) > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AdmissibilityError, InputError
from .geometry import HALF, WHOLE, DomainSpec, GridField, Lattice, _as_points, contains
from .path_sim import stream
from .rate_solver import GROWTH_LIMIT, INF, MeasureTuple, boundary_trace, compat_gap

DENSE_PAIRS = 6000
# increment ratio across refinements above which an energy is judged divergent
DIVERGENCE_RATIO = 0.75


@dataclass(frozen=True)
class StableParams:
    alpha: float
    d: int
    p: int

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise InputError(f"alpha must lie in (0, 2), got {self.alpha}")
        if self.d < 1 or self.p < 1:
            raise InputError("d and p must be positive")

    @property
    def margin(self) -> float:
        """d - p(d - α); positive for admissible parameters."""
        return self.d - self.p * (self.d - self.alpha)


def admissible(sp: StableParams) -> bool:
    return sp.alpha < sp.d and sp.margin > 0


def require_admissible(sp: StableParams):
    if sp.alpha >= sp.d:
        raise AdmissibilityError(f"need alpha < d, got alpha = {sp.alpha}, d = {sp.d}")
    if not sp.margin > 0:
        raise AdmissibilityError(f"need d - p(d-alpha) > 0, got d - p(d-alpha) = {sp.margin:g}")


def positive_stable(beta: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Samples with Laplace transform exp(-s^β), 0 < β ≤ 1 (Kanter's representation)."""
    if beta == 1.0:
        return np.ones(n)
    u = rng.uniform(0.0, math.pi, n)
    w = rng.standard_exponential(n)
    a = np.sin(beta * u) / np.sin(u) ** (1.0 / beta)
    b = (np.sin((1.0 - beta) * u) / w) ** ((1.0 - beta) / beta)
    return a * b


def stable_increments(alpha: float, dt: float, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Rotationally symmetric increments with E e^{i ξ·X} = exp(-dt |ξ|^α), shape (n, d).

    X = √A G with G standard normal and A positive (α/2)-stable scaled to
    Laplace transform exp(-dt (2s)^{α/2}); α = 2 gives N(0, 2 dt I).
    """
    if not 0.0 < alpha <= 2.0:
        raise InputError("alpha must lie in (0, 2]")
    if not dt > 0:
        raise InputError("dt must be positive")
    beta = alpha / 2.0
    A = 2.0 * dt ** (1.0 / beta) * positive_stable(beta, n, rng)
    return np.sqrt(A)[:, None] * rng.standard_normal((n, d))


def sample_stable_increment(alpha: float, dt: float, seed: int, n: int = 1, d: int = 1,
                            stream_key: tuple = (0,)) -> np.ndarray:
    """``n`` increments from the counter-based stream ``(seed, *stream_key)``."""
    return stable_increments(alpha, dt, n, d, stream(seed, *stream_key))


@dataclass
class StablePaths:
    positions: np.ndarray  # (n, n_steps + 1, d)
    alive_until: np.ndarray
    killed: np.ndarray
    dt: float


def sample_stable_paths(dom: DomainSpec, x0, alpha: float, t: float, dt: float, n: int,
                        seed: int) -> StablePaths:
    """Killed α-stable paths on the whole space or a half-space.

    Exit is checked at step endpoints only, so exit times are biased late
    by O(dt).
    """
    if dom.kind not in (WHOLE, HALF):
        raise InputError("stable paths are provided on the whole space and half-spaces only")
    steps = int(round(t / dt))
    if steps < 1 or abs(steps * dt - t) > 1e-9 * t:
        raise InputError("t must be a positive multiple of dt")
    x0 = _as_points(dom, x0).reshape(-1)
    if not contains(dom, x0):
        raise InputError("x0 must lie in D")
    rng = stream(seed, 0)
    inc = stable_increments(alpha, dt, n * steps, dom.d, rng).reshape(n, steps, dom.d)
    pos = np.concatenate([np.broadcast_to(x0, (n, 1, dom.d)), x0 + np.cumsum(inc, axis=1)], axis=1)
    if dom.kind == WHOLE:
        return StablePaths(pos, np.full(n, steps), np.zeros(n, bool), dt)
    outside = pos[:, 1:, dom.axis] <= dom.offset
    killed = outside.any(axis=1)
    first = np.where(killed, outside.argmax(axis=1), steps)
    alive_until = np.where(killed, first, steps)
    return StablePaths(pos, alive_until, killed, dt)


# ---------------------------------------------------------- fractional energy

def _grad_sq(psi: GridField) -> np.ndarray:
    v = psi.values
    g = np.zeros_like(v)
    for a in range(v.ndim):
        g += np.gradient(v, psi.lattice.h, axis=a) ** 2
    return g


def _self_cell_factor(d: int, alpha: float, h: float) -> float:
    """(1/d) S_{d-1} r^{2-α}/(2-α) over the ball with the cell's volume."""
    if d == 1:
        r = h / 2.0
    else:
        r = h * (math.gamma(d / 2.0 + 1.0) / math.pi ** (d / 2.0)) ** (1.0 / d)
    area = 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)
    return area * r ** (2.0 - alpha) / (d * (2.0 - alpha))


def fractional_energy(psi: GridField, alpha: float) -> float:
    """Gagliardo double sum over interior node pairs plus the self-cell term."""
    if not 0.0 < alpha < 2.0:
        raise InputError("alpha must lie in (0, 2)")
    lat = psi.lattice
    if np.any(psi.values[~lat.interior] != 0):
        raise InputError("psi must vanish outside D")
    pts = lat.interior_points()
    v = psi.values[lat.interior]
    cm = lat.cell_measure
    d = lat.d
    total = 0.0
    for s in range(0, len(pts), DENSE_PAIRS):
        blk = slice(s, s + DENSE_PAIRS)
        r = np.linalg.norm(pts[blk, None, :] - pts[None, :, :], axis=-1)
        with np.errstate(divide="ignore"):
            w = np.where(r > 0, r ** (-(d + alpha)), 0.0)
        diff = v[blk, None] - v[None, :]
        total += float(np.sum(w * diff * diff))
    self_cell = float(np.sum(_grad_sq(psi)[lat.interior])) * _self_cell_factor(d, alpha, lat.h)
    return cm * cm * total + cm * self_cell


@dataclass
class MembershipReport:
    energies: list
    spacings: list
    ratio: float
    divergent: bool


def fractional_membership(sample, alpha: float, lattices: list) -> MembershipReport:
    """Energy under successive refinements; divergence when increments fail to shrink.

    ``sample`` maps a lattice to a GridField; at least three lattices with
    halving spacing are expected.
    """
    if len(lattices) < 3:
        raise InputError("need three refinement levels")
    energies = [fractional_energy(sample(lat), alpha) for lat in lattices]
    inc = np.diff(energies)
    scale = max(abs(energies[-1]), 1e-300)
    ratios = []
    for a, b in zip(inc[:-1], inc[1:]):
        if abs(b) < 1e-3 * scale:
            ratios.append(0.0)
        else:
            ratios.append(abs(b) / max(abs(a), 1e-300))
    ratio = float(max(ratios))
    return MembershipReport(energies, [lat.h for lat in lattices], ratio, ratio > DIVERGENCE_RATIO)


def rate_I_stable(mt: MeasureTuple, sp: StableParams, refined: MeasureTuple | None = None,
                  compat_tol: float | None = None) -> float:
    """Σ_i E_α(√μ^{(i)}) under the product constraint, else +∞."""
    require_admissible(sp)
    if mt.lattice.d != sp.d or mt.p != sp.p:
        raise InputError("measure tuple does not match (d, p)")
    tol = 10.0 * mt.lattice.h if compat_tol is None else compat_tol
    prod = np.prod([m.values for m in mt.mus], axis=0)
    if compat_gap(mt.mu, prod) > tol:
        return INF
    total = 0.0
    for i, m in enumerate(mt.mus):
        psi = m.with_values(np.sqrt(m.values))
        if boundary_trace(psi) > 1e-12:
            return INF
        e = fractional_energy(psi, sp.alpha)
        if refined is not None:
            mf = refined.mus[i]
            e_f = fractional_energy(mf.with_values(np.sqrt(mf.values)), sp.alpha)
            if e > 0 and e_f > GROWTH_LIMIT * e:
                return INF
        total += e
    return total
