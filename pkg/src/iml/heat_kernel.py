"""Transition densities of killed Brownian motion (generator ½Δ).

Product domains (whole space, half-space, box) factor into one-dimensional
kernels: free Gaussian, half-line with one reflected image, and the interval
with either an image series or a sine eigen-series. The planar disk uses the
Bessel-Dirichlet eigen-expansion.

Besides the kernel itself this module provides the 1-resolvent, the
time-integrated kernel ``∫_0^τ p_s ds``, the survival function
``∫_D p_t(x, y) dy`` and the Chapman-Kolmogorov residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import AccuracyError, InputError
from .geometry import DISK, WHOLE, DomainSpec, _as_points, contains

SQRT2 = math.sqrt(2.0)
# e^{-EIG_CUT} = 1e-16: eigen terms below this are dropped
EIG_CUT = 16.0 * math.log(10.0)
IMAGE_RTOL = 1e-14
# below DISK_SMALL_T * R^2 the disk kernel uses its boundary-layer form
DISK_SMALL_T = 2e-3


@dataclass(frozen=True)
class KernelEval:
    """Kernel evaluation settings for one domain.

    Attributes:
        domain: the domain D.
        series_terms: maximum number of image or eigen terms per 1-D factor
            (and eigen-modes per angular order on the disk).
        quad_nodes: Gauss-Legendre nodes per panel for time quadratures.
    """

    domain: DomainSpec
    series_terms: int = 2000
    quad_nodes: int = 12

    def __post_init__(self):
        if self.series_terms < 1:
            raise InputError("series_terms must be >= 1")
        if self.quad_nodes < 4:
            raise InputError("quad_nodes must be >= 4")


# ---------------------------------------------------------------- free kernel

def gauss1(t, r):
    """One-dimensional Gaussian density with variance t at displacement r."""
    t = np.asarray(t, dtype=float)
    return np.exp(-np.square(r) / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)


def free_kernel(d: int, t, x, y):
    """Whole-space kernel (2πt)^{-d/2} exp(-|x-y|²/2t)."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise InputError("free_kernel needs t > 0")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if d == 1:
        if x.ndim and x.shape[-1] == 1:
            x = x[..., 0]
        if y.ndim and y.shape[-1] == 1:
            y = y[..., 0]
        r2 = np.square(x - y)
    else:
        r2 = np.sum(np.square(x - y), axis=-1)
    return np.exp(-r2 / (2.0 * t)) / (2.0 * np.pi * t) ** (d / 2.0)


# ------------------------------------------------------- one-dimensional factors

def interval_kernel_images(t, x, y, a: float, b: float, max_terms: int = 2000):
    """Dirichlet kernel of (a, b) by the method of images.

    Sums g(X-Y+2nL) - g(X+Y+2nL) over n, stopping once the next pair of
    terms is below 1e-14 of the running sum everywhere.
    """
    L = b - a
    X = np.asarray(x, dtype=float) - a
    Y = np.asarray(y, dtype=float) - a
    t = np.asarray(t, dtype=float)
    u, v = X - Y, X + Y
    total = gauss1(t, u) - gauss1(t, v)
    for n in range(1, max_terms + 1):
        s = 2.0 * n * L
        term = (gauss1(t, u + s) + gauss1(t, u - s)
                - gauss1(t, v + s) - gauss1(t, v - s))
        total = total + term
        # the n=1 reflection off the upper wall can dominate; test from n=2
        if n >= 2 and np.all(np.abs(term) <= IMAGE_RTOL * np.abs(total) + 1e-300):
            return total
    raise AccuracyError(f"image series not converged after {max_terms} terms")


def interval_kernel_eigen(t, x, y, a: float, b: float, max_terms: int = 2000):
    """Dirichlet kernel of (a, b) by the sine eigen-expansion.

    Terms with exp(-λ_n t) < 1e-16 are dropped, λ_n = n²π²/(2L²).
    """
    L = b - a
    X = np.asarray(x, dtype=float) - a
    Y = np.asarray(y, dtype=float) - a
    t = np.asarray(t, dtype=float)
    tmin = float(np.min(t))
    n_max = int(math.ceil(math.sqrt(EIG_CUT * 2.0 * L * L / (math.pi ** 2 * tmin))))
    if n_max > max_terms:
        raise AccuracyError(f"eigen series needs {n_max} > {max_terms} terms at t={tmin:g}")
    shape = np.broadcast_shapes(X.shape, Y.shape, t.shape)
    total = np.zeros(shape)
    k = math.pi / L
    for n in range(1, n_max + 1):
        total += np.sin(n * k * X) * np.sin(n * k * Y) * np.exp(-0.5 * (n * k) ** 2 * t)
    return (2.0 / L) * total


def halfline_kernel(t, x, y, offset: float):
    X = np.asarray(x, dtype=float) - offset
    Y = np.asarray(y, dtype=float) - offset
    return gauss1(t, X - Y) - gauss1(t, X + Y)


def _factor_kernel(kind: tuple, t, x, y, max_terms: int):
    if kind[0] == "free":
        return gauss1(t, np.asarray(x) - np.asarray(y))
    if kind[0] == "half":
        return halfline_kernel(t, x, y, kind[1])
    return interval_kernel_images(t, x, y, kind[1], kind[2], max_terms)


# ------------------------------------------------------------------- the disk

@lru_cache(maxsize=16)
def _bessel_table(j_max: float):
    """Dirichlet Bessel modes with zero j_{n,k} < j_max.

    Returns (orders, zeros, weights) where weights = ε_n / (π J_{n+1}(j)²).
    """
    orders, zeros = [], []
    n = 0
    while True:
        nz = max(1, int(j_max / math.pi) + 2)
        z = special.jn_zeros(n, nz)
        z = z[z < j_max]
        if z.size == 0:
            break
        orders.append(np.full(z.size, n))
        zeros.append(z)
        n += 1
    orders = np.concatenate(orders)
    zeros = np.concatenate(zeros)
    eps_n = np.where(orders == 0, 1.0, 2.0)
    weights = eps_n / (np.pi * special.jv(orders + 1, zeros) ** 2)
    for arr in (orders, zeros, weights):
        arr.setflags(write=False)
    return orders, zeros, weights


def _disk_modes(R: float, tmin: float, max_terms: int):
    j_max = R * math.sqrt(2.0 * EIG_CUT / tmin)
    # bucket the cutoff so the cache is reused across nearby t
    j_bucket = 2.0 ** math.ceil(math.log2(max(j_max, 8.0)))
    orders, zeros, weights = _bessel_table(j_bucket)
    keep = zeros < j_max
    if np.max(orders[keep]) + 1 > max_terms:
        raise AccuracyError("disk eigen-expansion exceeds series_terms angular orders")
    return orders[keep], zeros[keep], weights[keep]


def _disk_small_time(t, xb, yb, R: float):
    """Free kernel times the half-plane factor at the nearest boundary points.

    Used below DISK_SMALL_T·R², where the eigen-expansion needs too many modes;
    the relative error is O(√t / R) and confined to a √t layer at the circle.
    """
    r2 = np.sum((xb - yb) ** 2, axis=-1)
    dx = R - np.hypot(xb[..., 0], xb[..., 1])
    dy = R - np.hypot(yb[..., 0], yb[..., 1])
    g = np.exp(-r2 / (2.0 * t)) / (2.0 * np.pi * t)
    return g * -np.expm1(-2.0 * np.maximum(dx, 0) * np.maximum(dy, 0) / t)


def _disk_eigen_outer(t: float, x, y, R: float, max_terms: int):
    """Eigen-expansion for all pairs of two point sets, as a matrix product."""
    orders, zeros, weights = _disk_modes(R, t, max_terms)
    lam = zeros ** 2 / (2.0 * R * R)
    coef = weights * np.exp(-lam * t) / (R * R)

    def features(p):
        r = np.hypot(p[:, 0], p[:, 1]) / R
        th = np.arctan2(p[:, 1], p[:, 0])
        j = special.jv(orders[None, :], zeros[None, :] * r[:, None])
        return j * np.cos(orders[None, :] * th[:, None]), j * np.sin(orders[None, :] * th[:, None])

    ax, bx = features(x)
    ay, by = (ax, bx) if x.shape == y.shape and np.array_equal(x, y) else features(y)
    out = (ax * coef) @ ay.T + (bx * coef) @ by.T
    r2 = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)
    return np.clip(out, 0.0, np.exp(-r2 / (2.0 * t)) / (2.0 * np.pi * t))


def disk_kernel(t, x, y, center, R: float, max_terms: int = 2000, chunk: int = 2048):
    """Dirichlet heat kernel of the planar disk by Bessel eigen-expansion.

    Times below DISK_SMALL_T·R² switch to the boundary-layer form.
    """
    c = np.asarray(center, dtype=float)
    x = np.asarray(x, dtype=float) - c
    y = np.asarray(y, dtype=float) - c
    t = np.asarray(t, dtype=float)
    shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1], t.shape)
    t_sw = DISK_SMALL_T * R * R
    if (t.ndim == 0 and t >= t_sw and x.ndim == 3 and y.ndim == 3
            and x.shape[1] == 1 and y.shape[0] == 1):
        return _disk_eigen_outer(float(t), x[:, 0], y[0], R, max_terms)
    xb = np.broadcast_to(x, shape + (2,)).reshape(-1, 2)
    yb = np.broadcast_to(y, shape + (2,)).reshape(-1, 2)
    tb = np.broadcast_to(t, shape).reshape(-1)
    out = np.empty(tb.size)
    small = tb < t_sw
    if small.any():
        out[small] = _disk_small_time(tb[small], xb[small], yb[small], R)
    big = np.flatnonzero(~small)
    if big.size == 0:
        return out.reshape(shape)
    r1 = np.hypot(xb[big, 0], xb[big, 1]) / R
    r2 = np.hypot(yb[big, 0], yb[big, 1]) / R
    dth = np.arctan2(xb[big, 1], xb[big, 0]) - np.arctan2(yb[big, 1], yb[big, 0])
    tbig = tb[big]
    # octave buckets in t, each with its own mode cutoff
    octave = np.floor(np.log2(tbig / t_sw)).astype(np.int64)
    for o in np.unique(octave):
        sel = np.flatnonzero(octave == o)
        orders, zeros, weights = _disk_modes(R, float(tbig[sel].min()), max_terms)
        lam = zeros ** 2 / (2.0 * R * R)
        for s in range(0, sel.size, chunk):
            sl = sel[s:s + chunk]
            e = np.exp(-lam[:, None] * tbig[None, sl])
            ja = special.jv(orders[:, None], zeros[:, None] * r1[None, sl])
            jb = special.jv(orders[:, None], zeros[:, None] * r2[None, sl])
            cs = np.cos(orders[:, None] * dth[None, sl])
            out[big[sl]] = np.sum(weights[:, None] * e * ja * jb * cs, axis=0) / (R * R)
    # series roundoff is ~1e-15 absolute; the exact kernel lies in [0, free kernel]
    free = np.exp(-np.sum((xb[big] - yb[big]) ** 2, axis=-1) / (2.0 * tbig)) / (2.0 * np.pi * tbig)
    out[big] = np.clip(out[big], 0.0, free)
    return out.reshape(shape)


def _disk_kernel_polar(t: float, x, center, R: float, r_nodes, th_nodes, max_terms: int):
    """Kernel p_t(x, z) for z on a polar tensor grid (r_nodes × th_nodes)."""
    c = np.asarray(center, dtype=float)
    x = np.asarray(x, dtype=float) - c
    rx = math.hypot(x[0], x[1]) / R
    thx = math.atan2(x[1], x[0])
    orders, zeros, weights = _disk_modes(R, t, max_terms)
    lam = zeros ** 2 / (2.0 * R * R)
    coef = weights * np.exp(-lam * t) * special.jv(orders, zeros * rx) / (R * R)
    radial = coef[:, None] * special.jv(orders[:, None], zeros[:, None] * (np.asarray(r_nodes) / R))
    n_max = int(orders.max())
    by_order = np.zeros((n_max + 1, len(r_nodes)))
    np.add.at(by_order, orders, radial)
    ang = np.cos(np.arange(n_max + 1)[:, None] * (np.asarray(th_nodes)[None, :] - thx))
    return by_order.T @ ang


# ------------------------------------------------------------------ public API

def _check_inside(dom: DomainSpec, *pts):
    for p in pts:
        if not np.all(contains(dom, p)):
            raise InputError("kernel arguments must lie inside D")


def killed_kernel(k: KernelEval, t, x, y, check: bool = True):
    """Transition density p_t(x, y) of Brownian motion killed on leaving D.

    ``x`` and ``y`` broadcast against each other (leading axes) and against
    ``t``. Nonnegative and symmetric in (x, y).
    """
    dom = k.domain
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise InputError("killed_kernel needs t > 0")
    x = _as_points(dom, x)
    y = _as_points(dom, y)
    if check:
        _check_inside(dom, x, y)
    if dom.kind == WHOLE:
        return free_kernel(dom.d, t, x, y)
    if dom.kind == DISK:
        if dom.d != 2:
            raise InputError("disk kernel is implemented for d = 2 only")
        return disk_kernel(t, x, y, dom.center, dom.radius, k.series_terms)
    out = 1.0
    for a, kind in enumerate(dom.axis_kinds()):
        out = out * _factor_kernel(kind, t, x[..., a], y[..., a], k.series_terms)
    return np.maximum(out, 0.0)


def interval_kernel(t, x, y, a: float, b: float, method: str = "images",
                    max_terms: int = 2000):
    """Interval kernel by a chosen representation ("images" or "eigen")."""
    if method == "images":
        return interval_kernel_images(t, x, y, a, b, max_terms)
    if method == "eigen":
        return interval_kernel_eigen(t, x, y, a, b, max_terms)
    raise InputError(f"unknown method {method!r}")


def _interval_survival(t, X, L, max_terms):
    t = np.asarray(t, dtype=float)
    if float(np.min(t)) >= 0.05 * L * L:
        n_max = int(math.ceil(math.sqrt(EIG_CUT * 2.0 * L * L / (math.pi ** 2 * float(np.min(t))))))
        total = 0.0
        for n in range(1, n_max + 1, 2):
            w = n * math.pi / L
            total = total + 4.0 / (n * math.pi) * np.sin(w * X) * np.exp(-0.5 * w * w * t)
        return total
    # integrate each image Gaussian over (0, L)
    sd = np.sqrt(t)

    def mass(c):
        a = special.ndtr((X + c) / sd) - special.ndtr((X + c - L) / sd)
        b = special.ndtr((X + c + L) / sd) - special.ndtr((X + c) / sd)
        return a - b

    total = mass(0.0)
    for n in range(1, max_terms + 1):
        term = mass(2.0 * n * L) + mass(-2.0 * n * L)
        total = total + term
        if n >= 2 and np.all(np.abs(term) <= IMAGE_RTOL * np.abs(total) + 1e-300):
            return total
    raise AccuracyError("interval survival series not converged")


def survival_function(k: KernelEval, t, x):
    """Probability ∫_D p_t(x, y) dy that the process started at x survives to t."""
    dom = k.domain
    x = _as_points(dom, x)
    _check_inside(dom, x)
    t = np.asarray(t, dtype=float)
    if dom.kind == WHOLE:
        return np.ones(np.broadcast_shapes(x.shape[:-1], t.shape))
    if dom.kind == DISK:
        R = dom.radius
        r = np.linalg.norm(x - np.asarray(dom.center), axis=-1) / R
        t_sw = DISK_SMALL_T * R * R
        tt = np.maximum(t, t_sw)
        j_max = math.sqrt(2.0 * EIG_CUT / t_sw)
        z0 = special.jn_zeros(0, int(j_max / math.pi) + 2)
        total = 0.0
        for j in z0[z0 < j_max]:
            total = total + 2.0 * np.exp(-j * j * tt / 2.0) * special.j0(j * r) / (j * special.j1(j))
        layer = special.erf(np.maximum(1.0 - r, 0.0) * R / np.sqrt(2.0 * t))
        return np.clip(np.where(t < t_sw, layer, total), 0.0, 1.0)
    out = 1.0
    for a, kind in enumerate(dom.axis_kinds()):
        xa = x[..., a]
        if kind[0] == "half":
            out = out * special.erf((xa - kind[1]) / np.sqrt(2.0 * t))
        elif kind[0] == "interval":
            out = out * _interval_survival(t, xa - kind[1], kind[2] - kind[1], k.series_terms)
    return np.clip(out * np.ones(np.broadcast_shapes(x.shape[:-1], t.shape)), 0.0, 1.0)


# --------------------------------------------------------------- quadratures

def gauss_legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def composite_gl(a: float, b: float, n_panels: int, n_nodes: int = 10):
    """Composite Gauss-Legendre nodes and weights on [a, b]."""
    xg, wg = gauss_legendre(n_nodes)
    edges = np.linspace(a, b, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    weights = (half[:, None] * wg[None, :]).ravel()
    return nodes, weights


def log_time_rule(s_lo: float, s_hi: float, n_nodes: int = 12, panel: float = 1.0):
    """Nodes/weights for ∫_{s_lo}^{s_hi} F(s) ds via s = e^w, unit-width w panels.

    The returned weights already include the Jacobian ``s``.
    """
    w_lo, w_hi = math.log(s_lo), math.log(s_hi)
    n_panels = max(1, int(math.ceil((w_hi - w_lo) / panel)))
    w, wt = composite_gl(w_lo, w_hi, n_panels, n_nodes)
    s = np.exp(w)
    return s, wt * s


def _free_time_integral_tail(d: int, S: float, r):
    """∫_0^S g_s(r) ds for the whole-space kernel (used for vanishing tails)."""
    r = np.asarray(r, dtype=float)
    if d == 1:
        return np.sqrt(2.0 * S / np.pi) * np.exp(-r * r / (2 * S)) - r * special.erfc(r / np.sqrt(2 * S))
    if d == 2:
        with np.errstate(divide="ignore"):
            return special.exp1(r * r / (2 * S)) / (2 * np.pi)
    with np.errstate(divide="ignore"):
        return special.erfc(r / np.sqrt(2 * S)) / (2 * np.pi * r)


def resolvent_closed_form(dom: DomainSpec, x, y):
    """Closed-form r_1 where one exists (whole space, half-space, interval); else None."""
    x = _as_points(dom, x)
    y = _as_points(dom, y)
    d = dom.d

    def free(r):
        if d == 1:
            return np.exp(-SQRT2 * r) / SQRT2
        if d == 2:
            return special.k0(SQRT2 * r) / np.pi
        return np.exp(-SQRT2 * r) / (2.0 * np.pi * r)

    if dom.kind == WHOLE:
        return free(np.linalg.norm(x - y, axis=-1))
    if dom.kind == "half":
        ys = np.array(y, copy=True)
        ys[..., dom.axis] = 2.0 * dom.offset - ys[..., dom.axis]
        return free(np.linalg.norm(x - y, axis=-1)) - free(np.linalg.norm(x - ys, axis=-1))
    if dom.kind == "box" and d == 1:
        a, b = dom.lower[0], dom.upper[0]
        L = b - a
        X, Y = x[..., 0] - a, y[..., 0] - a
        total = free(np.abs(X - Y)) - free(np.abs(X + Y))
        for n in range(1, 10000):
            s = 2.0 * n * L
            term = (free(np.abs(X - Y + s)) + free(np.abs(X - Y - s))
                    - free(np.abs(X + Y + s)) - free(np.abs(X + Y - s)))
            total = total + term
            if n >= 2 and np.all(np.abs(term) <= IMAGE_RTOL * np.abs(total) + 1e-300):
                return total
        raise AccuracyError("resolvent image series not converged")
    return None


def resolvent_quadrature(k: KernelEval, x, y, check: bool = True):
    """r_1(x, y) = ∫_0^∞ e^{-s} p_s(x, y) ds by log-time Gauss-Legendre.

    The substitution s = e^w removes the small-time stiffness: for x ≠ y the
    integrand vanishes below s ≈ |x-y|²/100 and the lower limit sits there.
    """
    dom = k.domain
    x = _as_points(dom, x)
    y = _as_points(dom, y)
    if check:
        _check_inside(dom, x, y)
    r = np.linalg.norm(x - y, axis=-1)
    rpos = r[r > 0]
    if rpos.size < r.size and dom.d >= 2:
        raise InputError("r_1 is singular on the diagonal for d >= 2")
    s_lo = float(rpos.min()) ** 2 / 100.0 if rpos.size else 1.0
    tail_at = 1e-24
    if rpos.size < r.size:
        s_lo = min(s_lo, tail_at)
    s, w = log_time_rule(s_lo, 50.0, k.quad_nodes)
    total = 0.0
    for si, wi in zip(s, w):
        total = total + wi * math.exp(-si) * killed_kernel(k, si, x, y, check=False)
    if rpos.size < r.size:
        # diagonal in d = 1: the piece below s_lo is the free-kernel tail
        total = total + np.where(r == 0, _free_time_integral_tail(1, s_lo, 0.0), 0.0)
    return total


def resolvent_r1(k: KernelEval, x, y):
    """1-resolvent density r_1(x, y); closed form where available."""
    dom = k.domain
    x = _as_points(dom, x)
    y = _as_points(dom, y)
    _check_inside(dom, x, y)
    r = np.linalg.norm(x - y, axis=-1)
    if dom.d >= 2 and np.any(r == 0):
        raise InputError("r_1 is singular on the diagonal for d >= 2")
    cf = resolvent_closed_form(dom, x, y)
    if cf is not None:
        return cf
    return resolvent_quadrature(k, x, y, check=False)


def integrated_kernel(k: KernelEval, tau: float, x, y, check: bool = True):
    """G_τ(x, y) = ∫_0^τ p_s(x, y) ds (finite off the diagonal, and on it for d = 1)."""
    dom = k.domain
    if not tau > 0:
        raise InputError("integration horizon must be positive")
    x = _as_points(dom, x)
    y = _as_points(dom, y)
    if check:
        _check_inside(dom, x, y)
    r = np.linalg.norm(x - y, axis=-1)
    rpos = r[r > 0]
    if rpos.size < r.size and dom.d >= 2:
        raise InputError("G_tau is singular on the diagonal for d >= 2")
    s_lo = min(tau, float(rpos.min()) ** 2 / 100.0) if rpos.size else tau
    diag = rpos.size < r.size
    if diag and not rpos.size:
        s_lo = 1e-10 * tau
    total = 0.0
    if s_lo < tau:
        s, w = log_time_rule(s_lo, tau, k.quad_nodes)
        for si, wi in zip(s, w):
            total = total + wi * killed_kernel(k, si, x, y, check=False)
    if diag:
        total = total + np.where(r == 0, _free_time_integral_tail(1, s_lo, 0.0), 0.0)
    return total


def cell_diagonal_kernel(k: KernelEval, t, x, h: float):
    """Cell-averaged kernel at coincident points.

    Replaces the singular Gaussian part g_t(0) of p_t(x, x) by its average
    over the lattice cell [-h/2, h/2]^d; the smooth remainder p_t - g_t is kept.
    """
    dom = k.domain
    x = _as_points(dom, x)
    t = np.asarray(t, dtype=float)
    d = dom.d
    g0 = (2.0 * np.pi * t) ** (-d / 2.0)
    cell = (special.erf(h / (2.0 * np.sqrt(2.0 * t))) / h) ** d
    return killed_kernel(k, t, x, x, check=False) - g0 + cell


# ------------------------------------------------------ Chapman-Kolmogorov

def _axis_nodes(kind, lo_pt: float, hi_pt: float, sigma: float, sig_min: float,
                n_sigma: float, n_nodes: int = 10):
    if kind[0] == "interval":
        a, b = kind[1], kind[2]
    elif kind[0] == "half":
        a, b = kind[1], hi_pt + n_sigma * sigma
    else:
        a, b = lo_pt - n_sigma * sigma, hi_pt + n_sigma * sigma
    n_panels = max(4, int(math.ceil((b - a) / (0.5 * sig_min))))
    return composite_gl(a, b, n_panels, n_nodes)


def ck_residual(k: KernelEval, s: float, t: float, x, y, n_sigma: float = 8.0,
                n_radial: int = 96):
    """|p_{s+t}(x, y) - ∫_D p_s(x, z) p_t(z, y) dz|.

    Product domains use a tensor composite Gauss-Legendre rule over the
    bounding box (truncated at ``n_sigma`` standard deviations on unbounded
    axes); the disk uses Gauss-Legendre in r and the trapezoid rule in θ.
    """
    if not (s > 0 and t > 0):
        raise InputError("ck_residual needs s, t > 0")
    dom = k.domain
    x = _as_points(dom, x).reshape(-1)
    y = _as_points(dom, y).reshape(-1)
    _check_inside(dom, x, y)
    direct = float(killed_kernel(k, s + t, x, y, check=False))
    if dom.kind == DISK:
        R = dom.radius
        orders, _, _ = _disk_modes(R, min(s, t), k.series_terms)
        n_th = 2 * int(orders.max()) + 8
        th = 2.0 * np.pi * np.arange(n_th) / n_th
        rn, rw = composite_gl(0.0, R, max(4, n_radial // 12), 12)
        a = _disk_kernel_polar(s, x, dom.center, R, rn, th, k.series_terms)
        b = _disk_kernel_polar(t, y, dom.center, R, rn, th, k.series_terms)
        conv = float(np.sum((rw * rn)[:, None] * a * b) * (2.0 * np.pi / n_th))
        return abs(direct - conv)
    sig = math.sqrt(max(s, t))
    sig_min = math.sqrt(min(s, t))
    conv = 1.0
    for ax, kind in enumerate(dom.axis_kinds()):
        z, w = _axis_nodes(kind, min(x[ax], y[ax]), max(x[ax], y[ax]), sig, sig_min, n_sigma)
        pa = _factor_kernel(kind, s, x[ax], z, k.series_terms)
        pb = _factor_kernel(kind, t, z, y[ax], k.series_terms)
        conv *= float(np.sum(w * pa * pb))
    return abs(direct - conv)
