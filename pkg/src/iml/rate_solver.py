"""Donsker-Varadhan rate functions on lattices and the principal eigenpair.

The rate of a p-tuple of sub-probability densities μ^{(i)} with product μ is

    I(μ) = ½ Σ_i ∫ |∇ψ^{(i)}|²,   ψ^{(i)} = √(dμ^{(i)}/dx) ∈ W^{1,2}_0(D),

and +∞ when a ψ^{(i)} is not in the zero-boundary Sobolev class or the product
constraint fails. The infimum over tuples is p·λ₁ with λ₁ the principal
Dirichlet eigenvalue of -½Δ, which is also the exponential decay rate of
the survival probability of each path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .errors import InputError, SolverError
from .geometry import BOX, DISK, WHOLE, DomainSpec, GridField, Lattice, make_lattice, require_same_lattice
from .intersection import apply_T_eps
from .path_sim import survival_curve

INF = math.inf
MASS_TOL = 1e-9
# energy ratio under h -> h/2 above which ψ is judged outside W^{1,2}_0
GROWTH_LIMIT = 1.5
MIN_SURVIVORS = 50


@dataclass(frozen=True)
class MeasureTuple:
    """μ and its p factors μ^{(i)}, each split as density + mass c^{(i)} at ∂."""

    mu: GridField
    mus: tuple
    mass_at_infinity: tuple = ()

    def __post_init__(self):
        mus = tuple(self.mus)
        if not mus:
            raise InputError("need at least one component")
        require_same_lattice(self.mu, *mus)
        c = tuple(self.mass_at_infinity) or (0.0,) * len(mus)
        if len(c) != len(mus):
            raise InputError("one mass at infinity per component")
        cm = self.mu.lattice.cell_measure
        for m, ci in zip(mus, c):
            if np.any(m.values < 0):
                raise InputError("component densities must be nonnegative")
            if not 0.0 <= ci <= 1.0:
                raise InputError("mass at infinity must lie in [0, 1]")
            total = cm * float(m.values.sum()) + ci
            if abs(total - 1.0) > MASS_TOL:
                raise InputError(f"component mass plus mass at infinity is {total!r}, not 1")
        object.__setattr__(self, "mus", mus)
        object.__setattr__(self, "mass_at_infinity", c)

    @property
    def p(self) -> int:
        return len(self.mus)

    @property
    def lattice(self) -> Lattice:
        return self.mu.lattice

    @classmethod
    def from_densities(cls, mus, mass_at_infinity=None, mu: GridField | None = None) -> MeasureTuple:
        """Normalise each density to mass 1 - c^{(i)}; μ defaults to the product."""
        mus = list(mus)
        c = list(mass_at_infinity) if mass_at_infinity is not None else [0.0] * len(mus)
        scaled = []
        for m, ci in zip(mus, c):
            mass = m.integral()
            if not mass > 0:
                raise InputError("density has zero mass")
            scaled.append(m.with_values(m.values * (1.0 - ci) / mass))
        if mu is None:
            mu = scaled[0].with_values(np.prod([m.values for m in scaled], axis=0))
        return cls(mu, tuple(scaled), tuple(c))


@dataclass(frozen=True)
class EigenResult:
    lambda1: float
    psi1: GridField
    iterations: int = 0
    residual: float = 0.0


def _edge_mask(lat: Lattice) -> np.ndarray:
    mask = np.zeros(lat.shape, dtype=bool)
    for a in range(lat.d):
        idx = [slice(None)] * lat.d
        idx[a] = 0
        mask[tuple(idx)] = True
        idx[a] = -1
        mask[tuple(idx)] = True
    return mask


def boundary_trace(psi: GridField) -> float:
    """Largest |ψ| on exterior nodes and on the faces of the lattice box."""
    lat = psi.lattice
    off = ~lat.interior | _edge_mask(lat)
    return float(np.abs(psi.values[off]).max()) if off.any() else 0.0


def dirichlet_energy(psi: GridField, trace_tol: float = 1e-12) -> float:
    """½ ∫|∇ψ|² by forward differences over all lattice links.

    ψ must vanish on exterior nodes and on the lattice faces; links from an
    interior node to an exterior one are kept, which imposes ψ = 0 outside.
    """
    if boundary_trace(psi) > trace_tol:
        raise InputError("psi has a nonzero boundary trace")
    lat = psi.lattice
    v = psi.values
    total = 0.0
    for a in range(lat.d):
        total += float(np.sum(np.diff(v, axis=a) ** 2))
    return 0.5 * lat.cell_measure * total / lat.h ** 2


def _component_energy(m: GridField, refined: GridField | None) -> float:
    psi = m.with_values(np.sqrt(np.maximum(m.values, 0.0)))
    if boundary_trace(psi) > 1e-12:
        return INF
    e = dirichlet_energy(psi)
    if not math.isfinite(e):
        return INF
    if refined is not None:
        psi_f = refined.with_values(np.sqrt(np.maximum(refined.values, 0.0)))
        if boundary_trace(psi_f) > 1e-12:
            return INF
        e_f = dirichlet_energy(psi_f)
        if e > 0 and e_f > GROWTH_LIMIT * e:
            return INF
    return e


def compat_gap(mu: GridField, product: np.ndarray) -> float:
    """‖μ - product‖_{L¹} on the lattice."""
    return float(mu.lattice.cell_measure * np.sum(np.abs(mu.values - product)))


def _energy_sum(mt: MeasureTuple, refined: MeasureTuple | None) -> float:
    total = 0.0
    for i, m in enumerate(mt.mus):
        e = _component_energy(m, refined.mus[i] if refined is not None else None)
        if not math.isfinite(e):
            return INF
        total += e
    return total


def rate_I(mt: MeasureTuple, refined: MeasureTuple | None = None, compat_tol: float | None = None) -> float:
    """Rate of the tuple, or +∞ outside the admissible class.

    ``refined`` is the same tuple sampled at h/2; when given, a component
    whose energy grows by more than GROWTH_LIMIT under the refinement is
    treated as outside W^{1,2}_0.
    """
    tol = 10.0 * mt.lattice.h if compat_tol is None else compat_tol
    prod = np.prod([m.values for m in mt.mus], axis=0)
    if compat_gap(mt.mu, prod) > tol:
        return INF
    return _energy_sum(mt, refined)


def mollified_product(mt: MeasureTuple, eps: float) -> np.ndarray:
    return np.prod([apply_T_eps(m, eps).values for m in mt.mus], axis=0)


def rate_I_eps(mt: MeasureTuple, eps: float, refined: MeasureTuple | None = None,
               compat_tol: float | None = None) -> float:
    """As rate_I, with μ compared to the product of the ball-averaged factors."""
    tol = 10.0 * mt.lattice.h if compat_tol is None else compat_tol
    if compat_gap(mt.mu, mollified_product(mt, eps)) > tol:
        return INF
    return _energy_sum(mt, refined)


# ------------------------------------------------------------- eigenproblem

def _axis_gaps(dom: DomainSpec, x: np.ndarray, a: int, sign: int, h: float) -> np.ndarray:
    """Distance from nodes x to ∂D along ±e_a, capped at h."""
    if dom.kind == BOX:
        bound = dom.upper[a] if sign > 0 else dom.lower[a]
        return np.minimum(h, np.abs(bound - x[:, a]))
    if dom.kind == DISK:
        c = np.asarray(dom.center)
        y = x - c
        other = np.sum(y ** 2, axis=1) - y[:, a] ** 2
        reach = np.sqrt(np.maximum(dom.radius ** 2 - other, 0.0))
        gap = reach - sign * y[:, a]
        return np.minimum(h, np.maximum(gap, 0.0))
    raise InputError("eigenproblem needs a bounded domain")


def laplacian_matrix(dom: DomainSpec, lat: Lattice) -> tuple[sparse.csr_matrix, np.ndarray, bool]:
    """Finite-difference -½Δ on interior nodes with zero Dirichlet data.

    Box domains get the standard symmetric stencil. Curved boundaries use
    the Shortley-Weller stencil (neighbours replaced by the boundary point
    along each axis), which is second-order accurate but not symmetric.
    Returns (matrix, flat indices of the unknowns, symmetric flag).
    """
    if not dom.bounded:
        raise InputError("eigenproblem needs a bounded domain")
    h = lat.h
    inner = lat.interior.copy()
    inner &= ~_edge_mask(lat)
    idx = np.flatnonzero(inner.ravel())
    pos = -np.ones(lat.n_nodes, dtype=np.int64)
    pos[idx] = np.arange(idx.size)
    pts = lat.nodes().reshape(-1, lat.d)[idx]
    multi = np.array(np.unravel_index(idx, lat.shape)).T
    rows, cols, vals = [], [], []
    diag = np.zeros(idx.size)
    for a in range(lat.d):
        hp = _axis_gaps(dom, pts, a, +1, h)
        hm = _axis_gaps(dom, pts, a, -1, h)
        if dom.kind == BOX:
            # box faces are taken to sit on lattice planes
            hp = np.full_like(hp, h)
            hm = np.full_like(hm, h)
        diag += 1.0 / (hp * hm)
        for sign, hs, ho in ((+1, hp, hm), (-1, hm, hp)):
            nb = multi.copy()
            nb[:, a] += sign
            ok = np.all((nb >= 0) & (nb < np.asarray(lat.shape)), axis=1)
            flat = np.full(idx.size, -1, dtype=np.int64)
            flat[ok] = np.ravel_multi_index(tuple(nb[ok].T), lat.shape)
            j = np.where(flat >= 0, pos[np.maximum(flat, 0)], -1)
            live = (j >= 0) & (hs >= h * (1 - 1e-12))
            coef = -1.0 / (hs * (hs + ho))
            rows.append(np.flatnonzero(live))
            cols.append(j[live])
            vals.append(coef[live])
    rows.append(np.arange(idx.size))
    cols.append(np.arange(idx.size))
    vals.append(diag)
    A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(idx.size, idx.size))
    # -½Δ with Δ u ≈ Σ_a 2[(u_+ - u)/h_+ + (u_- - u)/h_-]/(h_+ + h_-); the ½ and 2 cancel
    return A, idx, dom.kind == BOX


def principal_eigenpair(dom: DomainSpec, lattice: Lattice | None = None, h: float | None = None,
                        tol: float = 1e-10, max_iter: int = 500) -> EigenResult:
    """Smallest eigenpair of the discrete -½Δ by inverse iteration.

    Symmetric stencils use conjugate-gradient inner solves; the curved
    boundary stencil is factorised once with sparse LU.
    """
    lat = lattice or make_lattice(dom, h if h is not None else (1 / 256 if dom.d == 1 else 1 / 64))
    A, idx, symmetric = laplacian_matrix(dom, lat)
    n = idx.size
    if n == 0:
        raise InputError("lattice has no unknowns")
    if symmetric:
        def solve(b, x0):
            x, info = spla.cg(A, b, x0=x0, rtol=1e-13, atol=0.0, maxiter=20 * n)
            if info < 0:
                raise SolverError("conjugate gradient breakdown")
            return x
    else:
        lu = spla.splu(A.tocsc())
        solve = lambda b, x0: lu.solve(b)
    v = np.ones(n) / math.sqrt(n)
    lam = float(v @ (A @ v))
    res = INF
    for it in range(1, max_iter + 1):
        w = solve(v, v / max(lam, 1e-300))
        v = w / np.linalg.norm(w)
        Av = A @ v
        lam = float(v @ Av)
        res = float(np.linalg.norm(Av - lam * v))
        if res < tol * max(1.0, abs(lam)):
            break
    else:
        raise SolverError(f"inverse iteration did not converge (residual {res:.3e})")
    if v.sum() < 0:
        v = -v
    vals = np.zeros(lat.n_nodes)
    vals[idx] = v
    vals /= math.sqrt(lat.cell_measure * np.sum(vals ** 2))
    if np.any(vals[idx] <= 0):
        raise SolverError("principal eigenvector is not positive")
    return EigenResult(lam, GridField(lat, vals.reshape(lat.shape)), it, res)


def eigen_tuple(eig: EigenResult, p: int) -> MeasureTuple:
    """The tuple with every μ^{(i)} = ψ₁² dx."""
    m = eig.psi1.with_values(eig.psi1.values ** 2)
    return MeasureTuple.from_densities([m] * p)


# ----------------------------------------------------------- exit rates

@dataclass
class ExitRateRow:
    t: float
    rate: float
    stderr: float
    survival: float
    survivors: int
    p_lambda1: float
    flag: str = ""


def empirical_exit_rate(dom: DomainSpec, x0, p: int, t_list, dt: float, n_samples: int, seed: int,
                        workers: int = 1, lambda1: float | None = None) -> list[ExitRateRow]:
    """-(1/t) log P(t < τ)^p per horizon with a delta-method error band.

    Rows whose survivor count is below MIN_SURVIVORS carry flag "low_count".
    """
    t_list = [float(t) for t in t_list]
    if any(b <= a for a, b in zip(t_list, t_list[1:])):
        raise InputError("t_list must be increasing")
    if lambda1 is None:
        lambda1 = principal_eigenpair(dom).lambda1 if dom.bounded else 0.0
    if dom.kind == WHOLE:
        return [ExitRateRow(t, 0.0, 0.0, 1.0, n_samples, 0.0) for t in t_list]
    est, se, counts = survival_curve(dom, x0, t_list, dt, n_samples, seed, workers=workers)
    rows = []
    for t, s, e, c in zip(t_list, est, se, counts):
        c = int(c)
        if s > 0:
            rate = -p * math.log(s) / t
            err = p * e / (s * t)
        else:
            rate, err = INF, INF
        rows.append(ExitRateRow(t, rate, err, float(s), c, p * lambda1,
                                "low_count" if c < MIN_SURVIVORS else ""))
    return rows
