"""Ball averages and the approximated mutual intersection field.

The discrete ball average replaces |B(x, ε)| by the number of lattice nodes
whose centre lies in the open ball, so constants are preserved exactly and
the operator is an L^r contraction for every r ≥ 1. Fields are extended by
zero outside D and outside the lattice box.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import InputError, ResolutionError
from .geometry import DomainSpec, GridField, Lattice, require_same_lattice
from .path_sim import DEFAULT_BLOCK, OccupationField, run_block, stream

UNIT_BALL = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}


@dataclass(frozen=True)
class IntersectionField:
    """Density of ``t^{-p} ℓ^IS_{t,ε}`` on a lattice."""

    field: GridField
    epsilon: float
    t: float
    p: int

    def __post_init__(self):
        if np.any(self.field.values < 0):
            raise InputError("intersection field must be nonnegative")


def ball_kernel_q(d: int, eps: float, x, y):
    """q_ε(x, y) = 1_{|x-y| < ε} / |B(x, ε)|."""
    if not eps > 0:
        raise InputError("eps must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.abs(x - y) if d == 1 and (x.ndim == 0 or x.shape[-1] != 1) else np.linalg.norm(x - y, axis=-1)
    return np.where(r < eps, 1.0 / (UNIT_BALL[d] * eps ** d), 0.0)


def ball_stencil(d: int, h: float, eps: float) -> np.ndarray:
    """Integer offsets k with |k| h < ε."""
    m = int(math.ceil(eps / h))
    rng = range(-m, m + 1)
    offs = np.array(list(product(rng, repeat=d)), dtype=np.int64)
    keep = np.linalg.norm(offs * h, axis=1) < eps * (1 - 1e-12)
    return offs[keep]


def t_eps_matrix(lat: Lattice, eps: float) -> sparse.csr_matrix:
    """Sparse matrix of the discrete T_ε acting on all lattice nodes (C order).

    Columns at exterior nodes are dropped (zero extension outside D) and rows
    at exterior nodes are zero, so the output lives on D.
    """
    if eps < lat.h * (1 - 1e-12):
        raise ResolutionError(f"eps = {eps} is below the lattice spacing h = {lat.h}")
    return _t_eps_cached(lat, lat.interior.tobytes(), float(eps))


@lru_cache(maxsize=32)
def _t_eps_cached(lat: Lattice, interior_key: bytes, eps: float) -> sparse.csr_matrix:
    offs = ball_stencil(lat.d, lat.h, eps)
    shape = np.asarray(lat.shape)
    idx = np.indices(lat.shape).reshape(lat.d, -1).T
    interior = lat.interior.ravel()
    rows, cols = [], []
    for off in offs:
        nb = idx + off
        ok = np.all((nb >= 0) & (nb < shape), axis=1)
        src = np.flatnonzero(ok)
        dst = np.ravel_multi_index(tuple(nb[ok].T), lat.shape)
        rows.append(src)
        cols.append(dst)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    keep = interior[rows] & interior[cols]
    vals = np.full(keep.sum(), 1.0 / len(offs))
    mat = sparse.csr_matrix((vals, (rows[keep], cols[keep])), shape=(lat.n_nodes, lat.n_nodes))
    mat.sum_duplicates()
    return mat


def apply_T_eps(f: GridField, eps: float) -> GridField:
    """Ball average T_ε f on the lattice with zero extension outside D."""
    lat = f.lattice
    mat = t_eps_matrix(lat, float(eps))
    return f.with_values((mat @ f.values.ravel()).reshape(lat.shape))


def intersection_field(occs, eps: float, t: float) -> IntersectionField:
    """Pointwise product of the ε-ball-averaged occupation densities."""
    occs = list(occs)
    if len(occs) < 1:
        raise InputError("need at least one occupation field")
    fields = [o.field if isinstance(o, OccupationField) else o for o in occs]
    lat = require_same_lattice(*fields)
    prod = np.ones(lat.shape)
    for fld in fields:
        prod = prod * apply_T_eps(fld, eps).values
    return IntersectionField(GridField(lat, prod), float(eps), float(t), len(fields))


def pair_with_test(fld, f: GridField) -> float:
    """⟨fld, f⟩ as cell_measure × Σ fld·f."""
    g = fld.field if isinstance(fld, (IntersectionField, OccupationField)) else fld
    lat = require_same_lattice(g, f)
    return float(lat.cell_measure * np.sum(g.values * f.values))


def intersection_pairing_samples(dom: DomainSpec, x0s, t: float, dt: float, lat: Lattice,
                                 eps_list, f: GridField, n_samples: int, seed: int,
                                 workers: int = 1, block_size: int = DEFAULT_BLOCK) -> np.ndarray:
    """Joint Monte Carlo samples of ⟨ℓ^IS_{t,ε}, f⟩ (unnormalised).

    Process ``i`` of block ``b`` draws from stream ``(seed, i, b)``.
    Returns an array of shape (n_samples, len(eps_list)).
    """
    require_same_lattice(f, GridField(lat, np.zeros(lat.shape)))
    eps_list = [float(e) for e in eps_list]
    mats = [t_eps_matrix(lat, e) for e in eps_list]
    fv = f.values.ravel()
    p = len(x0s)
    scale = lat.cell_measure * t ** p

    def block(b, n):
        prods = [np.ones((n, lat.n_nodes)) for _ in eps_list]
        for i, x0 in enumerate(x0s):
            occ = run_block(dom, x0, t, dt, n, stream(seed, i, b), lattice=lat)["occupation"]
            for e, mat in enumerate(mats):
                prods[e] *= (mat @ occ.T).T
        return np.stack([scale * (pr @ fv) for pr in prods], axis=1)

    sizes = [min(block_size, n_samples - s) for s in range(0, n_samples, block_size)]
    jobs = list(enumerate(sizes))
    if workers <= 1 or len(jobs) == 1:
        parts = [block(b, n) for b, n in jobs]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: block(*job), jobs))
    return np.concatenate(parts, axis=0)


# ----------------------------------------------------------------- file I/O

def write_field_csv(fld: GridField, path) -> Path:
    """One row per node: coordinates then value."""
    path = Path(path)
    lat = fld.lattice
    nodes = lat.nodes().reshape(-1, lat.d)
    cols = [f"x{k}" for k in range(lat.d)] + ["value"]
    data = np.column_stack([nodes, fld.values.ravel()])
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return path


def write_field_binary(fld: GridField, path) -> tuple[Path, Path]:
    """Raw little-endian float64 row-major dump plus a JSON header next to it."""
    path = Path(path)
    lat = fld.lattice
    fld.values.astype("<f8").tofile(path)
    header = {
        "dtype": "<f8",
        "order": "C",
        "spacing": lat.h,
        "extents": list(lat.extents),
        "shape": list(lat.shape),
        "origin": list(lat.origin),
        "interior": np.flatnonzero(lat.interior.ravel()).tolist(),
    }
    hpath = path.with_suffix(path.suffix + ".json")
    hpath.write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")
    return path, hpath


def read_field_binary(path) -> GridField:
    path = Path(path)
    header = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    shape = tuple(header["shape"])
    vals = np.fromfile(path, dtype=header["dtype"]).reshape(shape)
    interior = np.zeros(int(np.prod(shape)), dtype=bool)
    interior[header["interior"]] = True
    lat = Lattice(tuple(header["origin"]), float(header["spacing"]), tuple(header["extents"]),
                  interior.reshape(shape))
    return GridField(lat, vals)
