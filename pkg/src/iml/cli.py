"""Command-line experiment runner.

    iml <simulate|moments|constants|rate|ldp-check|stable|plot> --config run.toml
        [--workers N] [--out DIR]

Each run writes ``<sub>-<hash>.csv``, a JSON sidecar holding the resolved
config and its hash, and an SVG figure of the table. Exit status is 2 for an
admissibility violation and 1 for a malformed config.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import AdmissibilityError, IMLError, InputError, PreconditionError
from .geometry import DomainSpec, GridField, Lattice, make_lattice

SUBCOMMANDS = ("simulate", "moments", "constants", "rate", "ldp-check", "stable", "plot")
EXIT_OK, EXIT_CONFIG, EXIT_ADMISSIBILITY = 0, 1, 2


class ConfigError(IMLError):
    pass


def _hash(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class ExperimentConfig:
    subcommand: str
    domain: DomainSpec
    p: int
    seed: int
    t: float = 1.0
    dt: float = 1e-3
    eps: float = 0.05
    delta: float = 0.05
    h: float = 0.01
    margin: float = 0.0
    samples: int = 1000
    blocks: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict, subcommand: str) -> ExperimentConfig:
        raw = copy.deepcopy(raw)
        if "IML_SEED" in os.environ:
            try:
                raw["seed"] = int(os.environ["IML_SEED"])
            except ValueError:
                raise ConfigError("IML_SEED must be an integer") from None
        try:
            seed = int(raw["seed"])
            dom = DomainSpec.from_dict(raw["domain"])
            p = int(raw.get("p", 2))
            grid = raw.get("grid", {})
            cfg = cls(subcommand, dom, p, seed,
                      t=float(raw.get("t", 1.0)), dt=float(raw.get("dt", 1e-3)),
                      eps=float(raw.get("eps", 0.05)), delta=float(raw.get("delta", 0.05)),
                      h=float(grid.get("h", 0.01)), margin=float(grid.get("margin", 0.0)),
                      samples=int(raw.get("samples", 1000)),
                      blocks={k: v for k, v in raw.items() if isinstance(v, dict)},
                      raw=raw)
        except KeyError as exc:
            raise ConfigError(f"config is missing {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config has a bad value: {exc}") from None
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must fit in 64 bits")
        if p < 1 or cfg.samples < 1 or not (cfg.t > 0 and cfg.dt > 0 and cfg.h > 0):
            raise ConfigError("p, samples, t, dt and grid.h must be positive")
        return cfg

    @classmethod
    def load(cls, path, subcommand: str) -> ExperimentConfig:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed TOML: {exc}") from None
        return cls.from_dict(raw, subcommand)

    def block(self, name: str) -> dict:
        return self.blocks.get(name, {})

    def resolved(self) -> dict:
        out = copy.deepcopy(self.raw)
        out["subcommand"] = self.subcommand
        out["seed"] = self.seed
        out["domain"] = self.domain.to_dict()
        return out

    @property
    def config_hash(self) -> str:
        return _hash(self.resolved())

    def lattice(self) -> Lattice:
        return make_lattice(self.domain, self.h, self.margin)

    def x0s(self) -> list:
        pts = self.raw.get("x0")
        d = self.domain.d
        if pts is None:
            lat = self.lattice()
            ip = lat.interior_points()
            mid = ip.mean(axis=0)
            c = ip[np.argmin(np.linalg.norm(ip - mid, axis=-1))]
            return [c] * self.p
        pts = np.asarray(pts, dtype=float).reshape(-1, d)
        if len(pts) == 1:
            pts = np.repeat(pts, self.p, axis=0)
        if len(pts) != self.p:
            raise ConfigError("x0 needs one point or one point per process")
        return list(pts)


def brownian_gate(d: int, p: int):
    val = d - p * (d - 2)
    if not val > 0:
        raise AdmissibilityError(f"admissibility violated: d − p(d−2) = {val} (need > 0)")


def build_test_function(cfg: ExperimentConfig, lat: Lattice) -> GridField:
    """Test function from the [test_function] block: bump (default), indicator or one."""
    blk = cfg.block("test_function")
    kind = blk.get("kind", "bump")
    d = lat.d
    if kind == "one":
        return GridField.from_function(lat, lambda x: np.ones(x.shape[:-1]))
    if kind == "indicator":
        a = np.asarray(blk["lower"], dtype=float)
        b = np.asarray(blk["upper"], dtype=float)
        return GridField.from_function(lat, lambda x: np.all((x > a) & (x < b), axis=-1).astype(float))
    if kind == "bump":
        ip = lat.interior_points()
        c = np.asarray(blk.get("center", ip.mean(axis=0)), dtype=float).reshape(d)
        r = float(blk.get("radius", 0.3))

        def bump(x):
            z = np.sum(((x - c) / r) ** 2, axis=-1)
            return np.where(z < 1, math.e * np.exp(-1.0 / np.maximum(1.0 - z, 1e-300)), 0.0)

        return GridField.from_function(lat, bump)
    raise ConfigError(f"unknown test function kind {kind!r}")


# ------------------------------------------------------------ subcommands

def cmd_simulate(cfg: ExperimentConfig, workers: int) -> list[dict]:
    from .intersection import intersection_pairing_samples
    from .path_sim import survival_curve

    brownian_gate(cfg.domain.d, cfg.p)
    blk = cfg.block("simulate")
    lat = cfg.lattice()
    f = build_test_function(cfg, lat)
    eps_list = [float(e) for e in blk.get("eps_list", [cfg.eps])]
    rows = []
    x = intersection_pairing_samples(cfg.domain, cfg.x0s(), cfg.t, cfg.dt, lat, eps_list, f,
                                     cfg.samples, cfg.seed, workers=workers)
    n = len(x)
    for j, e in enumerate(eps_list):
        col = x[:, j]
        rows.append({"quantity": "pairing", "t": cfg.t, "eps": e, "value": float(col.mean()),
                     "stderr": float(col.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0, "count": n})
        sq = col ** 2
        rows.append({"quantity": "pairing_sq", "t": cfg.t, "eps": e, "value": float(sq.mean()),
                     "stderr": float(sq.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0, "count": n})
    if cfg.domain.bounded or cfg.domain.kind == "half":
        t_list = [float(v) for v in blk.get("t_list", [cfg.t])]
        est, se, counts = survival_curve(cfg.domain, cfg.x0s()[0], t_list, cfg.dt, cfg.samples,
                                         cfg.seed + 1, workers=workers)
        for t, s, e, c in zip(t_list, est, se, counts):
            rows.append({"quantity": "survival", "t": t, "eps": "", "value": float(s),
                         "stderr": float(e), "count": int(c)})
    return rows


def cmd_moments(cfg: ExperimentConfig, workers: int) -> list[dict]:
    from .heat_kernel import KernelEval
    from .moment_oracle import MomentPlan, moment_exact

    brownian_gate(cfg.domain.d, cfg.p)
    blk = cfg.block("moments")
    lat = cfg.lattice()
    f = build_test_function(cfg, lat)
    ke = KernelEval(cfg.domain)
    eps = blk.get("eps", cfg.eps)
    eps = None if eps in (0, 0.0, "none") else float(eps)
    rows = []
    for k in [int(v) for v in blk.get("k", [1, 2])]:
        n_q = int(blk.get("quad_nodes", 8))
        val = moment_exact(MomentPlan(k, cfg.p, cfg.t, f, cfg.x0s(), ke, eps=eps, quad_nodes=n_q))
        coarse = moment_exact(MomentPlan(k, cfg.p, cfg.t, f, cfg.x0s(), ke, eps=eps,
                                         quad_nodes=max(2, n_q // 2)))
        rows.append({"k": k, "p": cfg.p, "t": cfg.t, "eps": "" if eps is None else eps,
                     "value": val, "error_estimate": abs(val - coarse)})
    return rows


def cmd_constants(cfg: ExperimentConfig, workers: int) -> list[dict]:
    from .constants import ConstantsReport, compute_C1, compute_C2, compute_C3

    brownian_gate(cfg.domain.d, cfg.p)
    blk = cfg.block("constants")
    dom = cfg.domain
    lat = None if dom.kind == "whole" and not blk.get("c1") else cfg.lattice()
    deltas = [float(v) for v in blk.get("delta_list", [cfg.delta])]
    eps_list = [float(v) for v in blk.get("eps_list", [cfg.eps])]
    rep = ConstantsReport(dom, cfg.p, None)
    for dl in deltas:
        rep.c2[dl] = compute_C2(dom, cfg.p, dl, lattice=lat if dom.kind != "whole" else None)
    rep.c3 = compute_C3(dom, cfg.p, lattice=lat if dom.kind != "whole" else None)
    if "U" in blk:
        U = DomainSpec.box(blk["U"]["lower"], blk["U"]["upper"])
        rep.U = U
        lat = lat or cfg.lattice()
        for dl in deltas:
            for e in eps_list:
                rep.c1[(e, dl)] = compute_C1(dom, cfg.p, e, dl, U, lattice=lat)
    rep.validate()
    return rep.rows()


def cmd_rate(cfg: ExperimentConfig, workers: int) -> list[dict]:
    from .rate_solver import eigen_tuple, principal_eigenpair, rate_I

    brownian_gate(cfg.domain.d, cfg.p)
    eig = principal_eigenpair(cfg.domain, h=cfg.h)
    rate = rate_I(eigen_tuple(eig, cfg.p))
    return [{"quantity": "lambda1", "h": cfg.h, "value": eig.lambda1},
            {"quantity": "rate_I_eigen_tuple", "h": cfg.h, "value": rate},
            {"quantity": "p_lambda1", "h": cfg.h, "value": cfg.p * eig.lambda1}]


def cmd_ldp_check(cfg: ExperimentConfig, workers: int) -> list[dict]:
    from .rate_solver import empirical_exit_rate

    brownian_gate(cfg.domain.d, cfg.p)
    blk = cfg.block("ldp")
    t_list = [float(v) for v in blk.get("t_list", [0.5, 1.0, 1.5])]
    rows = empirical_exit_rate(cfg.domain, cfg.x0s()[0], cfg.p, t_list, cfg.dt, cfg.samples,
                               cfg.seed, workers=workers)
    return [{"t": r.t, "rate": r.rate, "stderr": r.stderr, "survival": r.survival,
             "survivors": r.survivors, "p_lambda1": r.p_lambda1, "flag": r.flag} for r in rows]


def cmd_stable(cfg: ExperimentConfig, workers: int) -> list[dict]:
    from .path_sim import map_blocks
    from .stable_ext import StableParams, require_admissible, stable_increments

    blk = cfg.block("stable")
    try:
        alpha = float(blk["alpha"])
    except KeyError:
        raise ConfigError("stable block needs alpha") from None
    sp = StableParams(alpha, cfg.domain.d, cfg.p)
    require_admissible(sp)
    xis = [float(v) for v in blk.get("xi", [0.5, 1.0, 2.0])]
    dt = float(blk.get("dt", cfg.dt))
    n = cfg.samples
    parts = map_blocks(lambda m, rng: stable_increments(alpha, dt, m, cfg.domain.d, rng),
                       n, cfg.seed, (0,), 10000, workers)
    X = np.concatenate(parts, axis=0)[:, 0]
    rows = []
    for xi in xis:
        c = np.cos(xi * X)
        rows.append({"xi": xi, "alpha": alpha, "empirical": float(c.mean()),
                     "exact": math.exp(-dt * abs(xi) ** alpha),
                     "stderr": float(c.std(ddof=1) / math.sqrt(n))})
    return rows


COMMANDS = {
    "simulate": cmd_simulate,
    "moments": cmd_moments,
    "constants": cmd_constants,
    "rate": cmd_rate,
    "ldp-check": cmd_ldp_check,
    "stable": cmd_stable,
}


# ------------------------------------------------------------------ output

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(rows: list[dict], path: Path, config_hash: str):
    cols = ["config_hash"] + list(rows[0].keys()) if rows else ["config_hash"]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join([config_hash] + [_fmt(r[c]) for c in cols[1:]]) + "\n")


def emit(cfg: ExperimentConfig, rows: list[dict], out_dir: Path) -> dict:
    from .plotting import plot_csv

    out_dir.mkdir(parents=True, exist_ok=True)
    hsh = cfg.config_hash
    stem = f"{cfg.subcommand}-{hsh[:12]}"
    csv_path = out_dir / f"{stem}.csv"
    write_table(rows, csv_path, hsh)
    side = {"config_hash": hsh, "config": cfg.resolved(), "csv": csv_path.name}
    json_path = out_dir / f"{stem}.json"
    json_path.write_text(json.dumps(side, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    group = "quantity" if rows and "quantity" in rows[0] else None
    svg_path = plot_csv(csv_path, out_dir / f"{stem}.svg", title=f"{cfg.subcommand} {hsh[:12]}",
                        group=group)
    return {"csv": csv_path, "json": json_path, "svg": svg_path}


def run(subcommand: str, config_path, workers: int = 1, out_dir="results") -> int:
    """Run one subcommand; returns the process exit status."""
    out_dir = Path(out_dir)
    try:
        if subcommand == "plot":
            return _run_plot(config_path, out_dir)
        cfg = ExperimentConfig.load(config_path, subcommand)
        rows = COMMANDS[subcommand](cfg, workers)
        paths = emit(cfg, rows, out_dir)
    except AdmissibilityError as exc:
        print(f"iml: {exc}", file=sys.stderr)
        return EXIT_ADMISSIBILITY
    except (ConfigError, InputError, PreconditionError) as exc:
        print(f"iml: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(paths["csv"])
    return EXIT_OK


def _run_plot(config_path, out_dir: Path) -> int:
    from .plotting import plot_csv

    try:
        with open(config_path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    blk = raw.get("plot", {})
    if "csv" not in blk:
        raise ConfigError("plot needs [plot] csv = <path>")
    src = Path(blk["csv"])
    out_dir.mkdir(parents=True, exist_ok=True)
    out = plot_csv(src, out_dir / (src.stem + ".svg"), x=blk.get("x"), y=blk.get("y"),
                   err=blk.get("err"), group=blk.get("group"))
    print(out)
    return EXIT_OK


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="iml", description="Killed Brownian intersection measure experiments")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="TOML experiment file")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="results", help="output directory")
    args = ap.parse_args(argv)
    if args.workers < 1:
        ap.error("--workers must be >= 1")
    try:
        return run(args.subcommand, args.config, args.workers, args.out)
    except ConfigError as exc:
        print(f"iml: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
