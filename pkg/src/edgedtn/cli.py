"""Command-line driver: ``edgedtn solve | oracle | converge``.

Configuration is a flat ``key = value`` file with dotted keys. Values are
layered as defaults < config file < ``MP_*`` environment variables <
``--set`` / dedicated flags. ``MP_SIM__QUAD_POINTS`` and
``MP_SIM_QUAD_POINTS`` both address ``sim.quad_points``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .ball_oracle import (
    SearchRegion,
    convergence_orders,
    distinct_locations,
    exact_ball_resonances,
    factor_value,
    fitted_order,
)
from .dtn import DtnHandle
from .edge_fem import assemble
from .errors import ConfigError, EdgeDtnError
from .linalg import ResonanceOperator
from .mesh import GAMMA_D, build_ball_shell, load_msh, read_meshtxt
from .resonance_sim import SimParams, locate_resonances

log = logging.getLogger("edgedtn")

DEFAULTS = {
    "geometry.kind": "ball_shell",
    "geometry.n_tan": "2",
    "geometry.n_rad": "2",
    "geometry.r_inner": "1.0",
    "geometry.mesh_file": "",
    "geometry.tag_map": "GammaD:GammaD,GammaR:GammaR",
    "geometry.R": "1.3",
    "dtn.N": "10",
    "fem.area_correction": "false",
    "region.a_min": "0.0",
    "region.a_max": "2.0",
    "region.b_min": "-2.0",
    "region.b_max": "0.0",
    "sim.quad_points": "16",
    "sim.max_depth": "12",
    "sim.box_tol": "1e-4",
    "sim.tau_abs": "1e-3",
    "sim.tau_rel": "10",
    "sim.probes": "8",
    "sim.newton_max": "20",
    "sim.newton_tol": "1e-10",
    "sim.cluster_radius": "0.02",
    "sim.grid": "8x8",
    "sim.count_points": "64",
    "sim.count": "true",
    "oracle.n_max": "6",
    "converge.match_radius": "0.1",
    "seed": "7",
    "threads": "1",
    "out.csv": "",
    "out.summary": "",
}

# keys that do not change results and are left out of the config hash
NON_SEMANTIC = {"threads", "out.csv", "out.summary"}

CSV_COLUMNS = ["re", "im", "residual", "cluster_id", "cluster_size", "count_probe"]


def parse_config_text(text, source="<config>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown key {k!r}")
        out[k] = v
    return out


def env_overrides(environ=None):
    environ = os.environ if environ is None else environ
    out = {}
    for key in DEFAULTS:
        for name in ("MP_" + key.upper().replace(".", "__"), "MP_" + key.upper().replace(".", "_")):
            if name in environ:
                out[key] = environ[name]
                break
    return out


def _bool(s):
    s = str(s).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _tag_map(s):
    out = {}
    for item in filter(None, (p.strip() for p in s.split(","))):
        k, _, v = item.partition(":")
        if v not in (GAMMA_D, "GammaR"):
            raise ConfigError(f"tag_map target must be GammaD or GammaR, got {v!r}")
        out[int(k) if k.strip().lstrip("-").isdigit() else k.strip()] = v
    return out


@dataclass
class RunConfig:
    values: dict
    base_dir: Path = field(default_factory=Path.cwd)

    def get(self, key):
        return self.values[key]

    def f(self, key):
        try:
            return float(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"{key}: not a number: {self.values[key]!r}") from exc

    def i(self, key):
        try:
            return int(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"{key}: not an integer: {self.values[key]!r}") from exc

    @property
    def R(self):
        return self.f("geometry.R")

    @property
    def N(self):
        return self.i("dtn.N")

    @property
    def region(self):
        try:
            return SearchRegion(self.f("region.a_min"), self.f("region.a_max"),
                                self.f("region.b_min"), self.f("region.b_max"))
        except EdgeDtnError as exc:
            raise ConfigError(f"region: {exc}") from exc

    @property
    def sim(self):
        g = self.values["sim.grid"].lower().split("x")
        try:
            return SimParams(
                quad_points=self.i("sim.quad_points"), max_depth=self.i("sim.max_depth"),
                box_tol=self.f("sim.box_tol"), tau_abs=self.f("sim.tau_abs"), tau_rel=self.f("sim.tau_rel"),
                probes=self.i("sim.probes"), newton_max=self.i("sim.newton_max"),
                newton_tol=self.f("sim.newton_tol"), cluster_radius=self.f("sim.cluster_radius"),
                grid=(int(g[0]), int(g[-1])), count_points=self.i("sim.count_points"),
                seed=self.i("seed"), threads=self.i("threads"),
            )
        except ValueError as exc:
            raise ConfigError(f"sim: {exc}") from exc

    def mesh_path(self):
        p = Path(self.values["geometry.mesh_file"])
        return p if p.is_absolute() else self.base_dir / p

    def semantic(self):
        sem = {k: v for k, v in sorted(self.values.items()) if k not in NON_SEMANTIC}
        if self.values["geometry.kind"] == "mesh_file":
            sem["geometry.mesh_file"] = hashlib.sha256(self.mesh_path().read_bytes()).hexdigest()
        return sem

    def hash(self):
        canon = json.dumps(self._normalized(self.semantic()), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @staticmethod
    def _normalized(d):
        # equal numbers written differently ("1e-4" vs "0.0001") hash the same
        out = {}
        for k, v in d.items():
            try:
                out[k] = repr(float(v))
            except ValueError:
                out[k] = v.strip()
        return out

    def validate(self):
        kind = self.values["geometry.kind"]
        if kind not in ("ball_shell", "mesh_file"):
            raise ConfigError(f"geometry.kind must be ball_shell or mesh_file, got {kind!r}")
        if self.N < 1:
            raise ConfigError("dtn.N must be >= 1")
        if not self.R > 0:
            raise ConfigError("geometry.R must be positive")
        if kind == "ball_shell":
            if self.i("geometry.n_tan") < 1 or self.i("geometry.n_rad") < 1:
                raise ConfigError("geometry.n_tan and geometry.n_rad must be >= 1")
            if not self.R > self.f("geometry.r_inner"):
                raise ConfigError(
                    f"geometry.R = {self.R} must exceed the obstacle circumradius {self.f('geometry.r_inner')}")
        elif not self.values["geometry.mesh_file"]:
            raise ConfigError("geometry.mesh_file is required for geometry.kind = mesh_file")
        _ = self.region
        _ = self.sim
        _bool(self.values["fem.area_correction"])
        _bool(self.values["sim.count"])
        return self


def load_config(paths=(), sets=(), environ=None, seed=None, threads=None, out=None):
    values = dict(DEFAULTS)
    base = Path.cwd()
    for p in paths:
        p = Path(p)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        values.update(parse_config_text(text, str(p)))
        base = p.resolve().parent
    values.update(env_overrides(environ))
    for s in sets:
        k, eq, v = s.partition("=")
        if not eq or k.strip() not in DEFAULTS:
            raise ConfigError(f"--set expects a known key=value, got {s!r}")
        values[k.strip()] = v.strip()
    if seed is not None:
        values["seed"] = str(seed)
    if threads is not None:
        values["threads"] = str(threads)
    if out is not None:
        values["out.csv"] = str(out)
    return RunConfig(values, base).validate()


# ---------------------------------------------------------------------------
# pipeline


class Stage:
    """Context manager recording wall time and tagging errors with the stage name."""

    def __init__(self, name, timings):
        self.name = name
        self.timings = timings

    def __enter__(self):
        self.t0 = time.perf_counter()
        log.info("stage %s", self.name)
        return self

    def __exit__(self, et, ev, tb):
        self.timings[self.name] = round(time.perf_counter() - self.t0, 6)
        if ev is not None and not isinstance(ev, StageError):
            raise StageError(self.name, ev) from ev
        return False


class StageError(Exception):
    def __init__(self, stage, exc):
        self.stage = stage
        self.exc = exc
        super().__init__(f"stage '{stage}' failed: {type(exc).__name__}: {exc}")


def build_mesh(cfg):
    if cfg.get("geometry.kind") == "ball_shell":
        return build_ball_shell(cfg.i("geometry.n_tan"), cfg.i("geometry.n_rad"), cfg.R,
                                r_inner=cfg.f("geometry.r_inner"))
    path = cfg.mesh_path()
    text = path.read_text()
    if text.lstrip().startswith("meshtxt"):
        return read_meshtxt(text)
    return load_msh(text, _tag_map(cfg.get("geometry.tag_map")))


def obstacle_circumradius(mesh):
    idx = np.unique(mesh.faces_with(GAMMA_D))
    if idx.size == 0:
        return 0.0
    return float(np.linalg.norm(mesh.vertices[idx], axis=1).max())


def run_solve(cfg):
    """Full pipeline; returns (report, metadata dict, timings)."""
    timings = {}
    with Stage("mesh", timings):
        mesh = build_mesh(cfg)
        rc = obstacle_circumradius(mesh)
        if not cfg.R > rc:
            raise ConfigError(f"geometry.R = {cfg.R} must exceed the obstacle circumradius {rc:.6g}")
    with Stage("assemble", timings):
        system = assemble(mesh, cfg.N, cfg.R, area_correction=_bool(cfg.get("fem.area_correction")))
        op = ResonanceOperator(system.S, system.M, DtnHandle(system.Q))
    with Stage("search", timings):
        report = locate_resonances(op, cfg.region, cfg.sim, count=_bool(cfg.get("sim.count")))
    meta = {
        "command": "solve",
        "version": __version__,
        "config_hash": cfg.hash(),
        "dofs": int(op.n),
        "gamma_r_dofs": int(op.handle.n_support),
        "vertices": int(mesh.n_vertices),
        "tets": int(mesh.n_tets),
        "R": cfg.R,
        "N": cfg.N,
        "region": [cfg.region.a_min, cfg.region.a_max, cfg.region.b_min, cfg.region.b_max],
        "seed": cfg.i("seed"),
    }
    return report, meta, timings


def _fmt(x):
    return f"{x:.17g}"


def resonance_csv(report, meta):
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}: {json.dumps(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for e in report.resonances:
        w.writerow([_fmt(e.kappa.real), _fmt(e.kappa.imag), _fmt(e.residual), e.cluster_id, e.cluster_size,
                    "" if e.count_probe is None else e.count_probe])
    return buf.getvalue()


def read_result_csv(text):
    """Parse a result CSV into (metadata dict, list of row dicts)."""
    meta = {}
    body = []
    for line in text.splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition(": ")
            meta[k] = json.loads(v)
        else:
            body.append(line)
    return meta, list(csv.DictReader(body))


def _summary(cfg, meta, timings, report=None, extra=None):
    out = {"config": cfg.values, "meta": meta, "timings": timings}
    if report is not None:
        out["clusters"] = [
            {"id": c.id, "re": c.mean.real, "im": c.mean.imag, "size": c.size, "count_probe": c.count_probe}
            for c in report.clusters
        ]
        out["levels"] = [{k: v for k, v in vars(lv).items() if k != "kept_boxes"} for lv in report.levels]
    if extra:
        out.update(extra)
    return out


def _write(path, text):
    if path in (None, "", "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_solve(cfg):
    report, meta, timings = run_solve(cfg)
    with Stage("write", timings):
        _write(cfg.get("out.csv"), resonance_csv(report, meta))
        if cfg.get("out.summary"):
            Path(cfg.get("out.summary")).write_text(json.dumps(_summary(cfg, meta, timings, report), indent=2))
    return report, meta


def oracle_csv(roots, meta):
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}: {json.dumps(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["re", "im", "n", "kind", "multiplicity", "residual"])
    for r in roots:
        val, scale = factor_value(r.n, r.kind, r.kappa)
        w.writerow([_fmt(r.kappa.real), _fmt(r.kappa.imag), r.n, r.kind, r.multiplicity, _fmt(abs(val) / scale)])
    return buf.getvalue()


def cmd_oracle(cfg):
    timings = {}
    with Stage("oracle", timings):
        roots = exact_ball_resonances(cfg.region, cfg.i("oracle.n_max"))
    meta = {
        "command": "oracle",
        "version": __version__,
        "config_hash": cfg.hash(),
        "n_max": cfg.i("oracle.n_max"),
        "region": [cfg.region.a_min, cfg.region.a_max, cfg.region.b_min, cfg.region.b_max],
        "distinct_locations": len(distinct_locations(roots)),
    }
    _write(cfg.get("out.csv"), oracle_csv(roots, meta))
    if cfg.get("out.summary"):
        Path(cfg.get("out.summary")).write_text(json.dumps(_summary(cfg, meta, timings), indent=2))
    return roots


# ---------------------------------------------------------------------------
# convergence studies


@dataclass
class TrackRow:
    target: int
    level: int
    dofs: int
    kappa: complex | None
    size: int
    error: float | None
    order: float | None
    flag: str


def _geometry_signature(cfg):
    keys = ["geometry.kind", "geometry.R", "dtn.N", "region.a_min", "region.a_max", "region.b_min", "region.b_max"]
    if cfg.get("geometry.kind") == "ball_shell":
        keys.append("geometry.r_inner")
    return tuple(RunConfig._normalized({k: cfg.get(k) for k in keys}).items())


def match_clusters(levels, seeds, match_radius, cluster_radius):
    """Track each seed location through the per-level cluster lists.

    ``levels`` is a list of cluster lists. At each level the cluster
    nearest to the previous match (or seed) within ``match_radius`` is
    taken; if a second cluster lies within ``cluster_radius`` of that
    predecessor as well, the row is flagged ambiguous.
    """
    tracks = []
    for s in seeds:
        prev = complex(s)
        rows = []
        for clusters in levels:
            if not clusters:
                rows.append((None, 0, "missing"))
                continue
            d = np.array([abs(c.mean - prev) for c in clusters])
            j = int(np.argmin(d))
            if d[j] > match_radius:
                rows.append((None, 0, "missing"))
                continue
            flag = "ambiguous" if np.sum(d <= cluster_radius) > 1 else ""
            rows.append((clusters[j].mean, clusters[j].size, flag))
            prev = clusters[j].mean
        tracks.append(rows)
    return tracks


def convergence_table(dofs, tracks, references=None):
    out = []
    for t, rows in enumerate(tracks):
        ref = None if references is None else references[t]
        orders = [None] * len(rows)
        ok = [i for i, r in enumerate(rows) if r[0] is not None]
        if len(ok) >= (2 if ref is not None else 3) and ok == list(range(ok[0], ok[0] + len(ok))):
            conv = convergence_orders([(dofs[i], rows[i][0]) for i in ok], reference=ref)
            for i, c in zip(ok, conv):
                orders[i] = c.order
        for lvl, (k, size, flag) in enumerate(rows):
            err = abs(k - ref) if (k is not None and ref is not None) else None
            out.append(TrackRow(t, lvl, dofs[lvl], k, size, err, orders[lvl], flag))
    return out


def cmd_converge(cfgs):
    if len(cfgs) < 3:
        raise ConfigError("converge needs at least three configurations")
    sig = {_geometry_signature(c) for c in cfgs}
    if len(sig) != 1:
        raise ConfigError("converge configurations describe different geometries or settings")
    results = []
    timings = {}
    for k, cfg in enumerate(cfgs):
        report, meta, t = run_solve(cfg)
        timings[f"level{k}"] = t
        results.append((report, meta))
    dofs = [m["dofs"] for _, m in results]
    if any(b <= a for a, b in zip(dofs[:-1], dofs[1:])):
        raise ConfigError(f"DOF counts must increase along the sequence, got {dofs}")
    base = cfgs[-1]
    sim = base.sim
    if base.get("geometry.kind") == "ball_shell" and base.f("geometry.r_inner") == 1.0:
        refs = distinct_locations(exact_ball_resonances(base.region, base.i("oracle.n_max")))
        seeds = refs
    else:
        refs = None
        seeds = [c.mean for c in results[0][0].clusters]
    tracks = match_clusters([r.clusters for r, _ in results], seeds, base.f("converge.match_radius"),
                            sim.cluster_radius)
    rows = convergence_table(dofs, tracks, refs)
    summary = {}
    if refs is not None:
        for t, ref in enumerate(refs):
            sel = [r for r in rows if r.target == t and r.error]
            if len(sel) >= 2 and len(sel) == len(dofs):
                summary[f"target{t}_fitted_order"] = fitted_order([r.dofs for r in sel], [r.error for r in sel])
    buf = io.StringIO()
    meta = {"command": "converge", "version": __version__, "config_hashes": [c.hash() for c in cfgs],
            "dofs": dofs, **summary}
    for k, v in meta.items():
        buf.write(f"# {k}: {json.dumps(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["target", "level", "dofs", "re", "im", "cluster_size", "ref_re", "ref_im", "error", "order", "flag"])
    for r in rows:
        ref = None if refs is None else refs[r.target]
        w.writerow([
            r.target, r.level, r.dofs,
            "" if r.kappa is None else _fmt(r.kappa.real), "" if r.kappa is None else _fmt(r.kappa.imag),
            r.size, "" if ref is None else _fmt(ref.real), "" if ref is None else _fmt(ref.imag),
            "" if r.error is None else _fmt(r.error), "" if r.order is None else f"{r.order:.4f}", r.flag,
        ])
    _write(base.get("out.csv"), buf.getvalue())
    if base.get("out.summary"):
        Path(base.get("out.summary")).write_text(json.dumps(
            {"meta": meta, "timings": timings, "configs": [c.values for c in cfgs]}, indent=2))
    return rows, meta


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="edgedtn", description="Scattering poles of PEC obstacles.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("solve", "locate resonances on one mesh"),
                           ("oracle", "exact unit-ball resonances"),
                           ("converge", "convergence study over a mesh sequence")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", action="append", default=[], metavar="PATH",
                       help="config file (repeat for converge: one per level)")
        s.add_argument("--out", metavar="PATH", help="CSV output (default: stdout)")
        s.add_argument("--summary", metavar="PATH", help="JSON summary output")
        s.add_argument("--threads", type=int, metavar="K")
        s.add_argument("--seed", type=int, metavar="S")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    sets = list(args.set)
    if args.summary:
        sets.append(f"out.summary={args.summary}")
    try:
        if args.command == "converge":
            cfgs = [load_config([p], sets, seed=args.seed, threads=args.threads, out=args.out)
                    for p in args.config]
            cmd_converge(cfgs)
        else:
            cfg = load_config(args.config, sets, seed=args.seed, threads=args.threads, out=args.out)
            if args.command == "solve":
                cmd_solve(cfg)
            else:
                cmd_oracle(cfg)
    except StageError as exc:
        print(f"edgedtn {args.command}: {exc}", file=sys.stderr)
        return 2
    except (EdgeDtnError, OSError) as exc:
        print(f"edgedtn {args.command}: stage 'config' failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
