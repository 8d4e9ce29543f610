"""Deterministic quadrature of the moment formula for ⟨ℓ^IS_t, f⟩.

For k points the chained kernel

    H_t(x_1, ..., x_k) = ∫_{s_1+...+s_k ≤ t} ∏_j p_{s_j}(x_{j-1}, x_j) 1_U(x_j) ds

is evaluated on the lattice as a nested one-step integral operator:
``H_t(x) = G_t(x_0, x)`` for k = 1 and, for k = 2,

    H_t(x_1, x_2) = ∫_0^t p_{s}(x_1, x_2) G_{t-s}(x_0, x_1) ds,

with ``G_τ = ∫_0^τ p_s ds``. The s-integral uses Gauss-Legendre panels in
log s near both ends, which resolves the small-time layers of width |x-y|²
that a tensor rule on the simplex misses. Coincident lattice points use the
cell-averaged kernel. Only k ≤ 2 is supported; cost grows like N^k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ResourceError
from .geometry import DomainSpec, GridField, _as_points, contains
from .heat_kernel import KernelEval, cell_diagonal_kernel, integrated_kernel, killed_kernel, log_time_rule
from .intersection import t_eps_matrix

MAX_PAIR_ENTRIES = 3.0e7


@dataclass
class MomentPlan:
    """Everything needed to evaluate one moment of the intersection measure.

    ``support`` is the set U of the chained kernel (a DomainSpec, typically a
    box containing supp f); ``None`` means U = D. ``eps`` set to a length
    applies the discrete T_ε to every H before the product over processes,
    giving the moments of ⟨ℓ^IS_{t,ε}, f⟩ instead of ⟨ℓ^IS_t, f⟩.
    """

    k: int
    p: int
    t: float
    f: GridField
    x0s: list
    kernel: KernelEval
    support: DomainSpec | None = None
    eps: float | None = None
    quad_nodes: int = 8
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.k not in (1, 2):
            raise ResourceError("only k = 1 and k = 2 moments are evaluated exactly")
        if self.p < 1:
            raise InputError("p must be >= 1")
        if len(self.x0s) == 1 and self.p > 1:
            self.x0s = list(self.x0s) * self.p
        if len(self.x0s) != self.p:
            raise InputError("need one initial point per process")
        if not self.t > 0:
            raise InputError("t must be positive")
        dom = self.kernel.domain
        for x0 in self.x0s:
            if not contains(dom, x0):
                raise InputError("initial points must lie in D")
        if self.f.lattice.d != dom.d:
            raise InputError("test function lattice dimension differs from the domain")

    @property
    def lattice(self):
        return self.f.lattice

    def support_mask(self) -> np.ndarray:
        lat = self.lattice
        mask = lat.interior.copy()
        if self.support is not None:
            mask &= np.asarray(contains(self.support, lat.nodes()), dtype=bool)
        return mask

    def with_f(self, f: GridField) -> MomentPlan:
        """Same plan with another test function; cached kernels are shared."""
        plan = MomentPlan(self.k, self.p, self.t, f, list(self.x0s), self.kernel, self.support,
                          self.eps, self.quad_nodes)
        if f.lattice.same_as(self.lattice):
            plan._cache = self._cache
        return plan


def _in_support(plan: MomentPlan, pts: np.ndarray) -> np.ndarray:
    dom = plan.kernel.domain
    ok = np.asarray(contains(dom, pts), dtype=bool)
    if plan.support is not None:
        ok &= np.asarray(contains(plan.support, pts), dtype=bool)
    return ok


def two_sided_rule(t: float, lo: float, n_nodes: int):
    """Nodes on (0, t) graded geometrically towards both ends."""
    s1, w1 = log_time_rule(lo, 0.5 * t, n_nodes)
    s2, w2 = log_time_rule(lo, 0.5 * t, n_nodes)
    return np.concatenate([s1, t - s2[::-1]]), np.concatenate([w1, w2[::-1]])


def _g_cells(plan: MomentPlan, tau: float, x0: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """G_τ(x0, ·) at ``pts``; a node that coincides with x0 gets the cell average."""
    k = plan.kernel
    r = np.linalg.norm(pts - x0, axis=-1)
    hit = r < 1e-12
    if not hit.any() or k.domain.d == 1:
        return integrated_kernel(k, tau, x0, pts, check=False)
    h = plan.lattice.h
    out = np.zeros(len(pts))
    if (~hit).any():
        out[~hit] = integrated_kernel(k, tau, x0, pts[~hit], check=False)
    lo = min(1e-4 * h * h, 1e-6 * tau)
    s, w = log_time_rule(lo, tau, k.quad_nodes)
    diag = sum(wi * cell_diagonal_kernel(k, si, pts[hit], h) for si, wi in zip(s, w))
    out[hit] = diag + lo * float(cell_diagonal_kernel(k, lo, x0[None], h)[0])
    return out


def _p_cells(plan: MomentPlan, u: float, x0: np.ndarray, pts: np.ndarray) -> np.ndarray:
    k = plan.kernel
    hit = np.linalg.norm(pts - x0, axis=-1) < 1e-12
    if not hit.any() or k.domain.d == 1:
        return killed_kernel(k, u, x0, pts, check=False)
    out = np.empty(len(pts))
    out[~hit] = killed_kernel(k, u, x0, pts[~hit], check=False)
    out[hit] = cell_diagonal_kernel(k, u, pts[hit], plan.lattice.h)
    return out


def _g_sweep(plan: MomentPlan, taus: np.ndarray, x0: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """G_τ(x0, ·) for an increasing sequence of horizons, shape (len(taus), len(pts)).

    The first horizon is integrated from zero; each later one adds the
    integral over [τ_{j-1}, τ_j] with a Gauss-Legendre rule in log time.
    """
    xg, wg = np.polynomial.legendre.leggauss(6)
    out = np.empty((len(taus), len(pts)))
    acc = _g_cells(plan, float(taus[0]), x0, pts)
    out[0] = acc
    for j in range(1, len(taus)):
        a, b = math.log(taus[j - 1]), math.log(taus[j])
        n_sub = max(1, int(math.ceil((b - a) / 0.5)))
        edges = np.linspace(a, b, n_sub + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            for xi, wi in zip(xg, wg):
                u = math.exp(mid + half * xi)
                acc = acc + half * wi * u * _p_cells(plan, u, x0, pts)
        out[j] = acc
    return out


def _h1_values(plan: MomentPlan, x0, pts: np.ndarray) -> np.ndarray:
    out = np.zeros(len(pts))
    ok = _in_support(plan, pts)
    if ok.any():
        out[ok] = _g_cells(plan, plan.t, np.asarray(x0, float), pts[ok])
    return out


def _h2_matrix(plan: MomentPlan, x0, pts: np.ndarray, h: float | None) -> np.ndarray:
    """H_t(x_a, x_b) for all pairs of ``pts`` (pairs assumed inside U)."""
    k = plan.kernel
    n = len(pts)
    if n * n > MAX_PAIR_ENTRIES:
        raise ResourceError(f"{n} support nodes exceed the k = 2 cost gate")
    r = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    rmin = float(r[r > 0].min()) if n > 1 else (h or 1.0)
    lo = min(1e-4 * rmin * rmin, 1e-6 * plan.t)
    s_nodes, s_w = two_sided_rule(plan.t, lo, plan.quad_nodes)
    x0 = np.asarray(x0, float)
    order = np.argsort(plan.t - s_nodes)
    G = np.empty((len(s_nodes), n))
    G[order] = _g_sweep(plan, (plan.t - s_nodes)[order], x0, pts)
    H = np.zeros((n, n))
    diag = np.arange(n)
    for j, (s, w) in enumerate(zip(s_nodes, s_w)):
        P = killed_kernel(k, s, pts[:, None, :], pts[None, :, :], check=False)
        if h is not None:
            P[diag, diag] = cell_diagonal_kernel(k, s, pts, h)
        H += w * G[j][:, None] * P
    return H


def H_t_eval(plan: MomentPlan, i: int, xs) -> np.ndarray:
    """H^{(i)}_t at points: ``xs`` of shape (m, d) for k = 1, (m, 2, d) for k = 2."""
    dom = plan.kernel.domain
    x0 = _as_points(dom, plan.x0s[i]).reshape(-1)
    if plan.k == 1:
        pts = _as_points(dom, xs).reshape(-1, dom.d)
        return _h1_values(plan, x0, pts)
    xs = np.asarray(xs, dtype=float).reshape(-1, 2, dom.d)
    out = np.zeros(len(xs))
    for m, (a, b) in enumerate(xs):
        if not (_in_support(plan, a[None])[0] and _in_support(plan, b[None])[0]):
            continue
        H = _h2_matrix(plan, x0, np.stack([a, b]), None)
        out[m] = H[0, 1]
    return out


def _embed(plan: MomentPlan, vec_or_mat: np.ndarray, idx: np.ndarray) -> np.ndarray:
    n = plan.lattice.n_nodes
    if vec_or_mat.ndim == 1:
        out = np.zeros(n)
        out[idx] = vec_or_mat
        return out
    out = np.zeros((n, n))
    out[np.ix_(idx, idx)] = vec_or_mat
    return out


def _chained(plan: MomentPlan, i: int) -> tuple[np.ndarray, np.ndarray]:
    """Symmetrised H^{(i)} on the support nodes, embedded in the full lattice."""
    key = ("S", i, plan.k, plan.t, tuple(np.ravel(plan.x0s[i])), plan.support)
    if key in plan._cache:
        return plan._cache[key]
    lat = plan.lattice
    mask = plan.support_mask().ravel()
    idx = np.flatnonzero(mask)
    pts = lat.nodes().reshape(-1, lat.d)[idx]
    x0 = _as_points(plan.kernel.domain, plan.x0s[i]).reshape(-1)
    if plan.k == 1:
        S = _embed(plan, _h1_values(plan, x0, pts), idx)
    else:
        H = _h2_matrix(plan, x0, pts, lat.h)
        S = _embed(plan, H + H.T, idx)
    plan._cache[key] = (S, idx)
    return S, idx


def _apply_T(plan: MomentPlan, S: np.ndarray, eps: float, minus_identity: bool) -> np.ndarray:
    T = t_eps_matrix(plan.lattice, eps)
    if S.ndim == 1:
        out = T @ S
        return out - S if minus_identity else out
    TS = (T @ S.T).T  # act on second coordinate
    if minus_identity:
        TS = TS - S
    out = T @ TS  # act on first coordinate
    return out - TS if minus_identity else out


def _gate(plan: MomentPlan):
    d = plan.kernel.domain.d
    if d * plan.k > 4:
        raise ResourceError(f"d*k = {d * plan.k} exceeds the desk-scale gate d*k <= 4")


def moment_exact(plan: MomentPlan) -> float:
    """E[⟨ℓ^IS_t, f⟩^k] (or E[⟨ℓ^IS_{t,ε}, f⟩^k] when ``plan.eps`` is set)."""
    _gate(plan)
    lat = plan.lattice
    fv = plan.f.values.ravel()
    if not np.any(fv):
        return 0.0
    cm = lat.cell_measure
    prod = None
    for i in range(plan.p):
        S, _ = _chained(plan, i)
        if plan.eps is not None:
            S = _apply_T(plan, S, plan.eps, False)
        prod = S if prod is None else prod * S
    if plan.k == 1:
        return float(cm * fv @ prod)
    return float(cm * cm * fv @ prod @ fv)


def _diff_factors(plan: MomentPlan, eps: float) -> list:
    return [_apply_T(plan, _chained(plan, i)[0], eps, True) for i in range(plan.p)]


def moment_diff(plan: MomentPlan, eps: float) -> float:
    """Moment formula with every symmetrised H replaced by (T_ε - id)^{⊗k} H.

    For k = 2 this is the even difference moment and is returned as is; for
    k = 1 the absolute value of the signed first-order expression is returned.
    """
    _gate(plan)
    fv = plan.f.values.ravel()
    if not np.any(fv):
        return 0.0
    cm = plan.lattice.cell_measure
    prod = None
    for A in _diff_factors(plan, eps):
        prod = A if prod is None else prod * A
    if plan.k == 1:
        return abs(float(cm * fv @ prod))
    return float(cm * cm * fv @ prod @ fv)


def moment_diff_bound(plan: MomentPlan, eps: float) -> float:
    """‖f‖_∞^k (k!)^p ∏_i ‖(T_ε - id)^{⊗k} H^{(i)}_t‖_{L^p(D^k)} with the same operators."""
    _gate(plan)
    lat = plan.lattice
    cmk = lat.cell_measure ** plan.k
    fmax = float(np.abs(plan.f.values).max())
    total = fmax ** plan.k * math.factorial(plan.k) ** plan.p
    for i in range(plan.p):
        S, idx = _chained(plan, i)
        if plan.k == 1:
            Hd = S
        else:
            # undo the symmetrisation: H = upper part of S built as H + H^T
            Hd = _raw_h2(plan, i)
        A = _apply_T(plan, Hd, eps, True)
        total *= float((cmk * np.sum(np.abs(A) ** plan.p)) ** (1.0 / plan.p))
    return total


def _raw_h2(plan: MomentPlan, i: int) -> np.ndarray:
    key = ("H", i, plan.t, tuple(np.ravel(plan.x0s[i])), plan.support)
    if key not in plan._cache:
        lat = plan.lattice
        idx = np.flatnonzero(plan.support_mask().ravel())
        pts = lat.nodes().reshape(-1, lat.d)[idx]
        x0 = _as_points(plan.kernel.domain, plan.x0s[i]).reshape(-1)
        plan._cache[key] = _embed(plan, _h2_matrix(plan, x0, pts, lat.h), idx)
    return plan._cache[key]
