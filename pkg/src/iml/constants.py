"""The constants C1(ε, δ), C2(δ), C3 of the super-exponential estimate.

    C2(δ)    = sup_x ‖G_δ(x, ·)‖_{L^p(D)},      G_δ = ∫_0^δ p_s ds
    C3       = sup_x ‖r_1(x, ·)‖_{L^p(D)}
    C1(ε, δ) = sup_z ∫_D ‖(T_ε - id)[p_{δ/2}(z, ·) p_{δ/2}(·, y) 1_U]‖_{L^p(D)} dy

On the whole space C2 and C3 do not depend on x and are computed by radial
quadrature. Otherwise norms are lattice sums with the same spacing as the
field layer; the cell holding the singular point x is integrated separately
over the equal-volume ball.
"""

from __future__ import annotations

import math
from itertools import product
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import AdmissibilityError, InputError, PreconditionError
from .geometry import WHOLE, DomainSpec, GridField, Lattice, _as_points, contains, make_lattice
from .heat_kernel import (KernelEval, _free_time_integral_tail, composite_gl, integrated_kernel,
                          killed_kernel, resolvent_closed_form, resolvent_r1)
from .intersection import t_eps_matrix
from .moment_oracle import MomentPlan, moment_diff, moment_diff_bound

MAX_CANDIDATES = 400
# multi-dimensional sup: coarse sweep size and how many winners get a local search
SWEEP_CANDIDATES = 36
REFINE_TOP = 2


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere S^{d-1}."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def check_admissible(d: int, p: int):
    if not d - p * (d - 2) > 0:
        raise AdmissibilityError(f"need d - p(d-2) > 0, got d - p(d-2) = {d - p * (d - 2)}")


@dataclass
class ConstantsReport:
    domain: DomainSpec
    p: int
    U: DomainSpec | None
    c1: dict = field(default_factory=dict)  # (eps, delta) -> value
    c2: dict = field(default_factory=dict)  # delta -> value
    c3: float | None = None
    grids: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        vals = list(self.c1.values()) + list(self.c2.values())
        if self.c3 is not None:
            vals.append(self.c3)
        for v in vals:
            if not (math.isfinite(v) and v >= 0):
                raise InputError(f"constants must be finite and nonnegative, got {v}")

    def rows(self) -> list[dict]:
        out = [{"name": "C1", "eps": e, "delta": dl, "value": v} for (e, dl), v in sorted(self.c1.items())]
        out += [{"name": "C2", "eps": "", "delta": dl, "value": v} for dl, v in sorted(self.c2.items())]
        if self.c3 is not None:
            out.append({"name": "C3", "eps": "", "delta": "", "value": self.c3})
        return out


def _radial_lp(fn, d: int, p: int, r_hi: float, r_lo: float = 1e-12) -> float:
    """(S_{d-1} ∫_0^∞ r^{d-1} fn(r)^p dr)^{1/p} on a log-r mesh, plus the inner ball."""
    w_lo, w_hi = math.log(r_lo), math.log(r_hi)
    n_panels = int(math.ceil(w_hi - w_lo))
    w, wt = composite_gl(w_lo, w_hi, n_panels, 16)
    r = np.exp(w)
    vals = r ** d * np.asarray(fn(r)) ** p
    total = float(np.sum(wt * vals))
    # r < r_lo: fn ~ r^{2-d} (or log) so the piece is O(r_lo^{d - p(d-2)})
    return (sphere_area(d) * total) ** (1.0 / p)


def _ball_cell_lp(fn, d: int, p: int, h: float) -> float:
    """∫ fn(|u|)^p over the ball with volume h^d (no 1/p power)."""
    rc = h * (math.gamma(d / 2.0 + 1.0) / math.pi ** (d / 2.0)) ** (1.0 / d)
    if d == 1:
        rc = h / 2.0
    w, wt = composite_gl(math.log(rc) - 40.0, math.log(rc), 40, 12)
    r = np.exp(w)
    return sphere_area(d) * float(np.sum(wt * r ** d * np.asarray(fn(r)) ** p))


def _candidates(lat: Lattice, limit: int = MAX_CANDIDATES) -> tuple[np.ndarray, int]:
    """Interior nodes used for the sup over x, thinned to at most ``limit``; also the stride."""
    pts = lat.interior_points()
    stride = max(1, int(math.ceil((len(pts) / limit) ** (1.0 / lat.d))))
    if stride == 1:
        return pts, 1
    idx = np.indices(lat.shape)
    keep = lat.interior & np.all(idx % stride == 0, axis=0)
    return lat.nodes()[keep], stride


def _default_lattice(dom: DomainSpec, h: float | None, margin: float) -> Lattice:
    if h is None:
        h = {1: 0.01, 2: 0.05, 3: 0.1}[dom.d]
    return make_lattice(dom, h, 0.0 if dom.bounded else margin)


def _sup_lattice_lp(dom: DomainSpec, lat: Lattice, p: int, row_fn, cell_fn) -> tuple[float, np.ndarray]:
    """sup over x of the lattice L^p norm of row_fn(x, nodes).

    A thinned sweep finds the best few candidates; every node within one
    stride of them is then evaluated.
    """
    nodes = lat.interior_points()
    cm = lat.cell_measure
    cell = cell_fn(lat.h) if dom.d >= 2 else 0.0

    def norm_at(x):
        off = np.linalg.norm(nodes - x, axis=-1) > 1e-12 * lat.h
        vals = row_fn(x, nodes[off]) if dom.d >= 2 else row_fn(x, nodes)
        return (cm * float(np.sum(np.abs(vals) ** p)) + cell) ** (1.0 / p)

    coarse, stride = _candidates(lat, SWEEP_CANDIDATES if dom.d >= 2 else MAX_CANDIDATES)
    scores = np.array([norm_at(x) for x in coarse])
    best_i = int(np.argmax(scores))
    best, arg = float(scores[best_i]), coarse[best_i]
    if stride == 1:
        return best, arg
    # pattern search on the index grid, halving the step around each winner
    origin = np.asarray(lat.origin, dtype=float)
    interior = lat.interior
    seen: dict = {}
    starts = [np.round((coarse[i] - origin) / lat.h).astype(int) for i in np.argsort(scores)[::-1][:REFINE_TOP]]
    moves = np.array(list(product((-1, 0, 1), repeat=lat.d)))
    for start in starts:
        cur, step = start, stride
        cur_v = norm_at(origin + cur * lat.h)
        while step >= 1:
            improved = False
            for mv in moves:
                cand = cur + step * mv
                if np.any(cand < 0) or np.any(cand >= np.asarray(lat.shape)) or not interior[tuple(cand)]:
                    continue
                key = tuple(cand)
                if key not in seen:
                    seen[key] = norm_at(origin + cand * lat.h)
                if seen[key] > cur_v:
                    cur, cur_v, improved = cand, seen[key], True
            if not improved:
                step //= 2
        if cur_v > best:
            best, arg = cur_v, origin + cur * lat.h
    return best, arg


def compute_C2(dom: DomainSpec, p: int, delta: float, lattice: Lattice | None = None,
               h: float | None = None) -> float:
    """C2(δ) = sup_x {∫_D G_δ(x, y)^p dy}^{1/p}."""
    if not delta > 0:
        raise InputError("delta must be positive")
    check_admissible(dom.d, p)
    d = dom.d
    G = lambda r: _free_time_integral_tail(d, delta, r)
    if dom.kind == WHOLE:
        return _radial_lp(G, d, p, 40.0 * math.sqrt(delta))
    ke = KernelEval(dom)
    lat = lattice or _default_lattice(dom, h, 10.0 * math.sqrt(delta))
    val, _ = _sup_lattice_lp(dom, lat, p,
                             lambda x, ys: integrated_kernel(ke, delta, x, ys, check=False),
                             lambda hh: _ball_cell_lp(G, d, p, hh))
    return val


def compute_C3(dom: DomainSpec, p: int, lattice: Lattice | None = None, h: float | None = None) -> float:
    """C3 = sup_x {∫_D r_1(x, y)^p dy}^{1/p}."""
    check_admissible(dom.d, p)
    d = dom.d
    free = DomainSpec.whole_space(d)
    r1 = lambda r: resolvent_closed_form(free, np.zeros(d), np.stack([r] + [np.zeros_like(r)] * (d - 1), -1))
    if dom.kind == WHOLE:
        return _radial_lp(r1, d, p, 60.0)
    ke = KernelEval(dom)
    lat = lattice or _default_lattice(dom, h, 14.0)
    val, _ = _sup_lattice_lp(dom, lat, p, lambda x, ys: resolvent_r1(ke, x, ys),
                             lambda hh: _ball_cell_lp(r1, d, p, hh))
    return val


@dataclass
class C1Result:
    value: float
    argmax: np.ndarray
    tail_bound: float
    z_radius: float


def _c1_setup(dom: DomainSpec, delta: float, U: DomainSpec, lat: Lattice):
    ke = KernelEval(dom)
    nodes = lat.nodes().reshape(-1, lat.d)
    inside = lat.interior.ravel()
    in_u = inside & np.asarray(contains(U, nodes), dtype=bool)
    iu = np.flatnonzero(in_u)
    iy = np.flatnonzero(inside)
    P = killed_kernel(ke, 0.5 * delta, nodes[iu][:, None, :], nodes[iy][None, :, :], check=False)
    return ke, nodes, iu, iy, P


def compute_C1_detail(dom: DomainSpec, p: int, eps: float, delta: float, U: DomainSpec,
                      lattice: Lattice | None = None, h: float | None = None) -> C1Result:
    """C1(ε, δ) with the argmax z and the certified bound for z outside the grid."""
    if not (eps > 0 and delta > 0):
        raise InputError("eps and delta must be positive")
    lat = lattice or _default_lattice(dom, h, 2.0 + 10.0 * math.sqrt(delta))
    T = t_eps_matrix(lat, eps)
    ke, nodes, iu, iy, P = _c1_setup(dom, delta, U, lat)
    if iu.size == 0:
        raise InputError("U contains no lattice node")
    cm = lat.cell_measure
    n = lat.n_nodes
    tcol = T[:, iu]
    # z-independent factor for the far-field bound: ∫_D ‖p_{δ/2}(·, y) 1_U‖_p dy
    J = cm * float(np.sum((cm * np.sum(P ** p, axis=0)) ** (1.0 / p)))

    def value_at(z):
        pz = killed_kernel(ke, 0.5 * delta, z, nodes[iu], check=False)
        M = pz[:, None] * P  # rows: x in U, cols: y in D
        A = tcol @ M
        A[iu] -= M
        norms = (cm * np.sum(np.abs(A) ** p, axis=0)) ** (1.0 / p)
        return cm * float(np.sum(norms))

    ulo = np.array(U.lower) if U.kind == "box" else nodes[iu].min(axis=0)
    uhi = np.array(U.upper) if U.kind == "box" else nodes[iu].max(axis=0)

    def dist_to_u(z):
        return np.linalg.norm(np.maximum(0.0, np.maximum(ulo - z, z - uhi)), axis=-1)

    def tail(r):
        return 2.0 * (math.pi * delta) ** (-lat.d / 2.0) * math.exp(-r * r / delta) * J

    zs, _ = _candidates(lat)
    # nodes next to the boundary are always tried
    bd = lat.interior.ravel()[iy] & (np.min(np.abs(_face_gaps(dom, nodes[iy])), axis=-1) < 1.5 * lat.h)
    zs = np.unique(np.concatenate([zs, nodes[iy][bd]]), axis=0)
    vals = np.array([value_at(z) for z in zs])
    best = int(np.argmax(vals))
    vmax = float(vals[best])
    dz = dist_to_u(zs)
    r_cov = float(dz.max())
    covered = dom.bounded and _covers(lat, dom)
    tb = 0.0 if covered else tail(r_cov)
    return C1Result(max(vmax, tb), zs[best], tb, r_cov)


def _face_gaps(dom: DomainSpec, x):
    from .geometry import face_distances

    fd = face_distances(dom, x)
    if fd.shape[-1] == 0:
        return np.full(x.shape[:-1] + (1,), np.inf)
    return fd


def _covers(lat: Lattice, dom: DomainSpec) -> bool:
    from .geometry import bounding_box

    lo, hi = bounding_box(dom, 0.0)
    a = np.asarray(lat.origin)
    b = a + lat.h * np.asarray(lat.extents)
    return bool(np.all(a <= lo + 1e-12) and np.all(b >= hi - 1e-12))


def compute_C1(dom: DomainSpec, p: int, eps: float, delta: float, U: DomainSpec,
               lattice: Lattice | None = None, h: float | None = None) -> float:
    """C1(ε, δ): sup over a z-grid of the y-integrated L^p norm of (T_ε - id) applied in x."""
    return compute_C1_detail(dom, p, eps, delta, U, lattice, h).value


def support_box(f: GridField) -> DomainSpec:
    """Smallest box with faces half a cell outside the nodes where f ≠ 0."""
    lat = f.lattice
    pts = lat.nodes()[f.values != 0]
    if pts.size == 0:
        raise InputError("test function vanishes identically")
    return DomainSpec.box(pts.min(axis=0) - 0.5 * lat.h, pts.max(axis=0) + 0.5 * lat.h)


@dataclass
class SuperexpReport:
    k: int
    lhs: float
    middle: float
    rhs: float
    c1: float
    c2: float
    c3: float
    holds: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def check_superexp(dom: DomainSpec, p: int, t: float, f: GridField, eps: float, delta: float,
                   k: int, x0s=None, U: DomainSpec | None = None) -> SuperexpReport:
    """Evaluate both sides of the k-th difference-moment bound on the lattice of ``f``.

    LHS is the difference moment with (T_ε - id)^{⊗k} H; ``middle`` is the
    intermediate Hölder bound; RHS is e^t (k!)^p ‖f‖_∞^k {16 (C3+1)(C2+C1)^{1/6}}^{pk}.
    """
    if k not in (1, 2):
        raise InputError("k must be 1 or 2")
    lat = f.lattice
    if U is None:
        U = support_box(f) if np.any(f.values) else DomainSpec.box(*[np.asarray(v) for v in _u_fallback(lat)])
    c1 = compute_C1(dom, p, eps, delta, U, lattice=lat)
    c2 = compute_C2(dom, p, delta, lattice=lat)
    c3 = compute_C3(dom, p, lattice=lat)
    if c1 + c2 >= 1.0:
        raise PreconditionError(f"C1 + C2 = {c1 + c2:.6g} >= 1; the bound is only claimed below 1",
                                {"c1": c1, "c2": c2, "c3": c3})
    if x0s is None:
        x0s = [_centre(dom, lat)] * p
    fmax = float(np.abs(f.values).max())
    rhs = (math.exp(t) * math.factorial(k) ** p * fmax ** k
           * (16.0 * (c3 + 1.0) * (c2 + c1) ** (1.0 / 6.0)) ** (p * k))
    if fmax == 0.0:
        lhs = middle = 0.0
    else:
        plan = MomentPlan(k, p, t, f, list(x0s), KernelEval(dom), support=U)
        lhs = moment_diff(plan, eps)
        middle = moment_diff_bound(plan, eps)
    return SuperexpReport(k, lhs, middle, rhs, c1, c2, c3, bool(lhs <= rhs))


def _centre(dom: DomainSpec, lat: Lattice):
    pts = lat.interior_points()
    mid = pts.mean(axis=0)
    return pts[np.argmin(np.linalg.norm(pts - mid, axis=-1))]


def _u_fallback(lat: Lattice):
    pts = lat.interior_points()
    return pts.min(axis=0), pts.max(axis=0)
