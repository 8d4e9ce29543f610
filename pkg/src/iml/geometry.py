"""Domains, lattices and lattice-sampled fields.

Supported domains are the ones whose killed heat kernel has a closed form or
an image/eigen series: the whole space, a half-space, an axis-aligned box
(an interval when ``d == 1``) and a disk in the plane.

Points are numpy arrays whose last axis has length ``d``; for ``d == 1`` plain
scalars are accepted as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

WHOLE = "whole"
HALF = "half"
BOX = "box"
DISK = "disk"
KINDS = (WHOLE, HALF, BOX, DISK)


@dataclass(frozen=True)
class DomainSpec:
    """Geometry of an open set D in R^d.

    Use the named constructors rather than filling the fields by hand.
    """

    kind: str
    d: int
    lower: tuple = ()
    upper: tuple = ()
    axis: int = 0
    offset: float = 0.0
    center: tuple = ()
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown domain kind {self.kind!r}")
        if self.d not in (1, 2, 3):
            raise InputError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.kind == BOX:
            if len(self.lower) != self.d or len(self.upper) != self.d:
                raise InputError("box bounds must have one entry per axis")
            if any(a >= b for a, b in zip(self.lower, self.upper)):
                raise InputError("box needs lower < upper on every axis")
        elif self.kind == HALF:
            if not 0 <= self.axis < self.d:
                raise InputError(f"half-space axis {self.axis} out of range")
        elif self.kind == DISK:
            if len(self.center) != self.d:
                raise InputError("disk center must have d coordinates")
            if not self.radius > 0:
                raise InputError("disk radius must be positive")

    @classmethod
    def whole_space(cls, d: int) -> DomainSpec:
        return cls(WHOLE, d)

    @classmethod
    def half_space(cls, d: int, axis: int = 0, offset: float = 0.0) -> DomainSpec:
        return cls(HALF, d, axis=axis, offset=float(offset))

    @classmethod
    def interval(cls, a: float, b: float) -> DomainSpec:
        return cls(BOX, 1, lower=(float(a),), upper=(float(b),))

    @classmethod
    def box(cls, lower, upper) -> DomainSpec:
        lower = tuple(float(v) for v in lower)
        upper = tuple(float(v) for v in upper)
        return cls(BOX, len(lower), lower=lower, upper=upper)

    @classmethod
    def disk(cls, center, radius: float) -> DomainSpec:
        center = tuple(float(v) for v in np.atleast_1d(center))
        return cls(DISK, len(center), center=center, radius=float(radius))

    @property
    def bounded(self) -> bool:
        return self.kind in (BOX, DISK)

    def axis_kinds(self) -> tuple:
        """Per-axis factor type for product-form domains.

        Returns a tuple of ``("free",)``, ``("half", offset)`` or
        ``("interval", a, b)`` entries; the disk is not a product domain.
        """
        if self.kind == WHOLE:
            return tuple(("free",) for _ in range(self.d))
        if self.kind == HALF:
            return tuple(("half", self.offset) if k == self.axis else ("free",)
                         for k in range(self.d))
        if self.kind == BOX:
            return tuple(("interval", a, b) for a, b in zip(self.lower, self.upper))
        raise InputError("disk is not a product domain")

    def to_dict(self) -> dict:
        if self.kind == WHOLE:
            params = {}
        elif self.kind == HALF:
            params = {"axis": self.axis, "offset": self.offset}
        elif self.kind == BOX:
            params = {"lower": list(self.lower), "upper": list(self.upper)}
        else:
            params = {"center": list(self.center), "radius": self.radius}
        return {"kind": self.kind, "d": self.d, "params": params}

    @classmethod
    def from_dict(cls, block: dict) -> DomainSpec:
        """Build a domain from a ``[domain]`` config block."""
        try:
            kind = block["kind"]
            d = int(block["d"])
        except KeyError as exc:
            raise InputError(f"domain block missing key {exc}") from None
        params = block.get("params", {})
        if kind in ("whole", "whole_space"):
            return cls.whole_space(d)
        if kind in ("half", "half_space"):
            return cls.half_space(d, int(params.get("axis", 0)),
                                  float(params.get("offset", 0.0)))
        if kind in ("box", "interval"):
            if "lower" in params:
                lower, upper = params["lower"], params["upper"]
            else:
                lower, upper = [params["a"]] * d, [params["b"]] * d
            dom = cls.box(lower, upper)
            if dom.d != d:
                raise InputError("box bounds do not match d")
            return dom
        if kind == "disk":
            dom = cls.disk(params.get("center", [0.0] * d), params.get("radius", 1.0))
            if dom.d != d:
                raise InputError("disk center does not match d")
            return dom
        raise InputError(f"unknown domain kind {kind!r}")


def _as_points(dom: DomainSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if dom.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != dom.d:
        raise InputError(f"point dimension {x.shape[-1]} != domain dimension {dom.d}")
    return x


def face_distances(dom: DomainSpec, x) -> np.ndarray:
    """Signed distances from ``x`` to each flat face (or the circle).

    Shape is ``x.shape[:-1] + (n_faces,)``; a point lies in D iff all entries
    are positive. The whole space has no faces.
    """
    x = _as_points(dom, x)
    if dom.kind == WHOLE:
        return np.empty(x.shape[:-1] + (0,))
    if dom.kind == HALF:
        return (x[..., dom.axis] - dom.offset)[..., None]
    if dom.kind == BOX:
        lo = x - np.asarray(dom.lower)
        hi = np.asarray(dom.upper) - x
        return np.concatenate([lo, hi], axis=-1)
    r = np.linalg.norm(x - np.asarray(dom.center), axis=-1)
    return (dom.radius - r)[..., None]


def contains(dom: DomainSpec, x):
    """True where ``x`` lies in the open set D (vectorised over points)."""
    fd = face_distances(dom, x)
    inside = np.all(fd > 0, axis=-1)
    return bool(inside) if inside.ndim == 0 else inside


def boundary_distance(dom: DomainSpec, x):
    """Euclidean distance from ``x`` to the complement of D.

    Returns ``inf`` on the whole space. Raises InputError if any point is
    outside D.
    """
    fd = face_distances(dom, x)
    if not np.all(np.all(fd > 0, axis=-1)):
        raise InputError("boundary_distance requires points inside D")
    if fd.shape[-1] == 0:
        out = np.full(fd.shape[:-1], np.inf)
    else:
        out = fd.min(axis=-1)
    return float(out) if out.ndim == 0 else out


def bounding_box(dom: DomainSpec, margin: float) -> tuple[np.ndarray, np.ndarray]:
    """Finite box used for grid work; unbounded domains are truncated by ``margin``."""
    d = dom.d
    if dom.kind == BOX:
        return np.asarray(dom.lower) - margin, np.asarray(dom.upper) + margin
    if dom.kind == DISK:
        c = np.asarray(dom.center)
        return c - dom.radius - margin, c + dom.radius + margin
    if not margin > 0:
        raise InputError("unbounded domains need margin > 0 to define a grid box")
    lo, hi = np.full(d, -float(margin)), np.full(d, float(margin))
    if dom.kind == HALF:
        lo[dom.axis] = dom.offset
        hi[dom.axis] = dom.offset + margin
    return lo, hi


@dataclass(frozen=True)
class Lattice:
    """Uniform lattice ``origin + h * j`` with ``0 <= j_k <= extents[k]``."""

    origin: tuple
    h: float
    extents: tuple
    interior: np.ndarray = field(compare=False, repr=False)

    @property
    def d(self) -> int:
        return len(self.extents)

    @property
    def shape(self) -> tuple:
        return tuple(e + 1 for e in self.extents)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_measure(self) -> float:
        return self.h ** self.d

    def axes(self) -> list[np.ndarray]:
        return [o + self.h * np.arange(n) for o, n in zip(self.origin, self.shape)]

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``self.shape + (d,)``."""
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(grids, axis=-1)

    def interior_points(self) -> np.ndarray:
        """Coordinates of interior nodes in C order, shape ``(n, d)``."""
        return self.nodes()[self.interior]

    def nearest_index(self, x: np.ndarray) -> np.ndarray:
        """Flat index of the nearest node; points off the lattice give -1."""
        x = np.asarray(x, dtype=float)
        j = np.rint((x - np.asarray(self.origin)) / self.h).astype(np.int64)
        ok = np.all((j >= 0) & (j < np.asarray(self.shape)), axis=-1)
        flat = np.ravel_multi_index(tuple(np.clip(j, 0, np.asarray(self.shape) - 1)
                                          [..., k] for k in range(self.d)), self.shape)
        return np.where(ok, flat, -1)

    def same_as(self, other: Lattice) -> bool:
        return (self.extents == other.extents
                and np.allclose(self.origin, other.origin, rtol=0, atol=1e-12 * self.h)
                and math.isclose(self.h, other.h, rel_tol=1e-12))


def make_lattice(dom: DomainSpec, h: float, margin: float = 0.0) -> Lattice:
    """Uniform lattice over the bounding box of D with exterior nodes flagged."""
    if not h > 0:
        raise InputError("lattice spacing h must be positive")
    lo, hi = bounding_box(dom, margin)
    extents = tuple(int(math.floor((b - a) / h + 1e-9)) for a, b in zip(lo, hi))
    if any(e < 1 for e in extents):
        raise InputError("bounding box is smaller than one lattice cell")
    lat = Lattice(tuple(float(v) for v in lo), float(h), extents, np.zeros(0, bool))
    interior = np.asarray(contains(dom, lat.nodes()), dtype=bool).reshape(lat.shape)
    if not interior.any():
        raise InputError("lattice has no interior node; refine h or enlarge the box")
    object.__setattr__(lat, "interior", interior)
    return lat


@dataclass(frozen=True)
class GridField:
    """Scalar field sampled at the nodes of a lattice."""

    lattice: Lattice
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.lattice.shape:
            raise InputError(f"field shape {vals.shape} != lattice shape {self.lattice.shape}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, lat: Lattice, fn, interior_only: bool = True) -> GridField:
        """Sample ``fn(points)`` on the lattice; exterior nodes set to 0 by default."""
        vals = np.asarray(fn(lat.nodes()), dtype=float).reshape(lat.shape)
        if interior_only:
            vals = np.where(lat.interior, vals, 0.0)
        return cls(lat, vals)

    @property
    def h(self) -> float:
        return self.lattice.h

    def integral(self) -> float:
        return float(self.lattice.cell_measure * self.values.sum())

    def norm(self, r: float = 2.0) -> float:
        """Lattice L^r norm (r may be ``inf``)."""
        if math.isinf(r):
            return float(np.abs(self.values).max())
        return float((self.lattice.cell_measure * np.sum(np.abs(self.values) ** r)) ** (1.0 / r))

    def with_values(self, values) -> GridField:
        return GridField(self.lattice, values)


def require_same_lattice(*fields) -> Lattice:
    lat = fields[0].lattice
    for f in fields[1:]:
        if not lat.same_as(f.lattice):
            raise InputError("fields live on different lattices")
    return lat
