"""Monte Carlo simulation of killed Brownian motions.

Paths take Euler steps with per-axis variance ``dt``. After each step that
stays in D the path is killed with the Brownian-bridge crossing probability
``1 - prod_faces(1 - exp(-2 δ₀ δ₁ / dt))`` where δ₀, δ₁ are the distances to
each face before and after the step (nearest-boundary distance on the disk).

Randomness comes from Philox counter-based streams keyed by
``(seed, process, block)``. Blocks have a fixed size, so results do not
depend on how many workers run them.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .geometry import BOX, WHOLE, DomainSpec, GridField, Lattice, _as_points, contains, face_distances
from .heat_kernel import KernelEval, survival_function

DEFAULT_BLOCK = 1000


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the stream labelled ``(seed, *key)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, key)])))


def map_blocks(func, n_total: int, seed: int, key: tuple = (), block_size: int = DEFAULT_BLOCK,
               workers: int = 1) -> list:
    """Run ``func(n, rng)`` over fixed-size blocks and return results in block order."""
    if n_total < 1:
        raise InputError("need at least one sample")
    sizes = [min(block_size, n_total - s) for s in range(0, n_total, block_size)]
    jobs = [(n, stream(seed, *key, b)) for b, n in enumerate(sizes)]
    if workers <= 1 or len(jobs) == 1:
        return [func(n, rng) for n, rng in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: func(*job), jobs))


def n_steps_for(t: float, dt: float) -> int:
    if not (0 < dt <= t):
        raise InputError("need 0 < dt <= t")
    n = int(round(t / dt))
    if not math.isclose(n * dt, t, rel_tol=1e-9):
        raise InputError(f"t = {t} is not a multiple of dt = {dt}")
    return n


@dataclass
class KilledPath:
    """One simulated trajectory.

    ``positions[j]`` is the position at time ``j * dt`` for
    ``j <= alive_until``; the path is in D at all of them.
    """

    positions: np.ndarray
    dt: float
    t: float
    alive_until: int
    killed: bool
    exit_time_estimate: float

    @property
    def n_steps(self) -> int:
        return n_steps_for(self.t, self.dt)


@dataclass
class OccupationField:
    """Density of ``t^{-1} ℓ_t`` on a lattice; ``1 - total_mass`` escaped to ∂."""

    field: GridField
    total_mass: float


def _bridge_kill(fd0: np.ndarray, fd1: np.ndarray, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Kill flags for steps from face distances ``fd0`` to ``fd1`` (shape (n, faces)).

    Uniforms are drawn only for steps whose crossing probability exceeds
    e^{-36}; the others survive with probability 1 - O(1e-16).
    """
    outside = np.any(fd1 <= 0, axis=-1)
    if fd0.shape[-1] == 0:
        return outside
    prod = fd0 * fd1
    near = np.any(prod < 18.0 * dt, axis=-1) & ~outside
    cand = np.flatnonzero(near)
    if cand.size:
        u = rng.random(cand.size)
        survive = np.prod(1.0 - np.exp(-2.0 * prod[cand] / dt), axis=-1)
        outside[cand] = u >= survive
    return outside


def run_block(dom: DomainSpec, x0, t: float, dt: float, n: int, rng: np.random.Generator,
              lattice: Lattice | None = None, checkpoints=None, record: bool = False):
    """Simulate ``n`` independent killed paths from ``x0``.

    Only living paths are advanced, so cost scales with survival. Returns a
    dict with ``alive_until`` (n,), ``killed`` (n,) and, on request,
    ``occupation`` (n, n_nodes) normalised densities, ``alive_at``
    (len(checkpoints), n) survival flags, ``positions`` (n_steps+1, n, d).
    """
    n_steps = n_steps_for(t, dt)
    x0 = _as_points(dom, x0).reshape(-1)
    if not contains(dom, x0):
        raise InputError("initial point must lie in D")
    d = dom.d
    sd = math.sqrt(dt)
    ids = np.arange(n)
    x = np.tile(x0, (n, 1))
    fd = face_distances(dom, x)
    alive_until = np.full(n, n_steps, dtype=np.int64)
    out = {}
    if record:
        pos = np.full((n_steps + 1, n, d), np.nan)
        pos[0] = x
    cp_steps = None
    if checkpoints is not None:
        cp_steps = [n_steps_for(c, dt) for c in checkpoints]
        alive_at = np.zeros((len(cp_steps), n), dtype=bool)
    if lattice is not None:
        n_nodes = lattice.n_nodes
        occ = np.zeros(n * n_nodes)
        pending = []
        weight = 1.0 / n_steps

    for j in range(n_steps):
        if ids.size == 0:
            break
        if lattice is not None:
            idx = lattice.nearest_index(x)
            on = idx >= 0
            pending.append(ids[on] * n_nodes + idx[on])
            if len(pending) >= 256:
                flat = np.concatenate(pending)
                occ += weight * np.bincount(flat, minlength=occ.size)
                pending = []
        xn = x + sd * rng.standard_normal((ids.size, d))
        fdn = face_distances(dom, xn)
        dead = _bridge_kill(fd, fdn, dt, rng)
        if dead.any():
            alive_until[ids[dead]] = j
            keep = ~dead
            ids, xn, fdn = ids[keep], xn[keep], fdn[keep]
        x, fd = xn, fdn
        if record:
            pos[j + 1, ids] = x
        if cp_steps is not None:
            for c, s in enumerate(cp_steps):
                if s == j + 1:
                    alive_at[c, ids] = True
    if cp_steps is not None:
        for c, s in enumerate(cp_steps):
            if s == 0:
                alive_at[c] = True
        out["alive_at"] = alive_at
    if lattice is not None:
        if pending:
            occ += weight * np.bincount(np.concatenate(pending), minlength=occ.size)
        out["occupation"] = occ.reshape(n, n_nodes) / lattice.cell_measure
    if record:
        out["positions"] = pos
    out["alive_until"] = alive_until
    out["killed"] = alive_until < n_steps
    return out


def sample_path(dom: DomainSpec, x0, t: float, dt: float, seed: int, index: int = 0) -> KilledPath:
    """One killed path; a deterministic function of ``(seed, index)`` and parameters."""
    res = run_block(dom, x0, t, dt, 1, stream(seed, index), record=True)
    au = int(res["alive_until"][0])
    killed = bool(res["killed"][0])
    positions = res["positions"][: au + 1, 0, :]
    exit_time = (au + 0.5) * dt if killed else math.inf
    return KilledPath(positions, dt, t, au, killed, min(exit_time, t) if killed else exit_time)


def occupation_field(path: KilledPath, lat: Lattice, t: float) -> OccupationField:
    """Nearest-node histogram of ``t^{-1}∫_0^t δ_{X_s} ds`` as a density.

    Step ``j`` deposits ``dt / t`` at ``positions[j]`` while the path is alive;
    nothing is deposited after the kill.
    """
    if not math.isclose(path.t, t, rel_tol=1e-12):
        raise InputError("path horizon differs from t")
    n_steps = path.n_steps
    last = min(path.alive_until, n_steps - 1)
    pts = path.positions[: last + 1]
    idx = lat.nearest_index(pts)
    idx = idx[idx >= 0]
    counts = np.bincount(idx, minlength=lat.n_nodes).astype(float)
    dens = (path.dt / t) * counts / lat.cell_measure
    fld = GridField(lat, dens.reshape(lat.shape))
    return OccupationField(fld, fld.integral())


def survival_probability(dom: DomainSpec, x0, t: float, dt: float, n_samples: int, seed: int,
                         workers: int = 1, block_size: int = 10000):
    """Monte Carlo estimate of P(t < τ_D) with its binomial standard error."""
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    if dom.kind == WHOLE:
        return 1.0, 0.0
    counts = map_blocks(lambda n, rng: int((~run_block(dom, x0, t, dt, n, rng)["killed"]).sum()),
                        n_samples, seed, (0,), block_size, workers)
    phat = sum(counts) / n_samples
    return phat, math.sqrt(max(phat * (1.0 - phat), 0.0) / n_samples)


def survival_curve(dom: DomainSpec, x0, t_list, dt: float, n_samples: int, seed: int,
                   workers: int = 1, block_size: int = 10000):
    """Survival frequencies at several horizons from one set of paths.

    Returns ``(estimates, std_errors, counts)`` arrays aligned with ``t_list``.
    """
    t_list = [float(v) for v in t_list]
    tmax = max(t_list)

    def block(n, rng):
        return run_block(dom, x0, tmax, dt, n, rng, checkpoints=t_list)["alive_at"].sum(axis=1)

    counts = np.sum(map_blocks(block, n_samples, seed, (0,), block_size, workers), axis=0)
    est = counts / n_samples
    se = np.sqrt(np.maximum(est * (1 - est), 0.0) / n_samples)
    return est, se, counts


def joint_survival_probability(dom: DomainSpec, x0s, t: float, dt: float, n_samples: int,
                               seed: int, workers: int = 1, block_size: int = 10000):
    """Frequency of {t < τ^(1) ∧ ... ∧ τ^(p)} for p independent processes."""
    alive = None
    for i, x0 in enumerate(x0s):
        flags = map_blocks(lambda n, rng: ~run_block(dom, x0, t, dt, n, rng)["killed"],
                           n_samples, seed, (i,), block_size, workers)
        flags = np.concatenate(flags)
        alive = flags if alive is None else alive & flags
    phat = float(alive.mean())
    return phat, math.sqrt(max(phat * (1 - phat), 0.0) / n_samples)


def occupation_samples(dom: DomainSpec, x0, t: float, dt: float, lat: Lattice, n_samples: int,
                       seed: int, process: int = 0, workers: int = 1,
                       block_size: int = DEFAULT_BLOCK) -> np.ndarray:
    """Occupation densities of ``n_samples`` independent paths, shape (n, n_nodes)."""
    blocks = map_blocks(lambda n, rng: run_block(dom, x0, t, dt, n, rng, lattice=lat)["occupation"],
                        n_samples, seed, (process,), block_size, workers)
    return np.concatenate(blocks, axis=0)


def _log_survival_gradient(k: KernelEval, tau: float, x: np.ndarray, eta: float = 1e-6):
    """∇ log P_x(τ_D > tau) by central differences of the survival function."""
    dom = k.domain
    grad = np.zeros_like(x)
    for a in range(dom.d):
        e = np.zeros(dom.d)
        step = np.minimum(eta, 0.5 * face_distances(dom, x).min(axis=-1))
        e[a] = 1.0
        up = survival_function(k, tau, x + step[:, None] * e)
        dn = survival_function(k, tau, x - step[:, None] * e)
        with np.errstate(divide="ignore"):
            grad[:, a] = (np.log(up) - np.log(dn)) / (2 * step)
    return grad


def sample_conditioned_paths(dom: DomainSpec, x0, t: float, dt: float, n: int, seed: int) -> list:
    """Paths conditioned on {t < τ_D}, simulated through Doob's h-transform.

    The conditioned process has drift ∇ log u(t - s, x) with
    u(τ, x) = P_x(τ_D > τ). Box domains only. Steps that would leave D are
    mirrored back across the violated face.
    """
    if dom.kind != BOX:
        raise InputError("conditioned sampling is implemented for box domains")
    k = KernelEval(dom)
    n_steps = n_steps_for(t, dt)
    rng = stream(seed, 0)
    x = np.tile(_as_points(dom, x0).reshape(-1), (n, 1))
    pos = np.empty((n_steps + 1, n, dom.d))
    pos[0] = x
    lo, hi = np.asarray(dom.lower), np.asarray(dom.upper)
    tiny = 1e-9 * (hi - lo)
    for j in range(n_steps):
        tau = t - j * dt
        drift = _log_survival_gradient(k, tau, x)
        x = x + drift * dt + math.sqrt(dt) * rng.standard_normal(x.shape)
        x = np.where(x <= lo, 2 * lo - x, x)
        x = np.where(x >= hi, 2 * hi - x, x)
        x = np.clip(x, lo + tiny, hi - tiny)
        pos[j + 1] = x
    return [KilledPath(pos[:, i, :], dt, t, n_steps, False, math.inf) for i in range(n)]
