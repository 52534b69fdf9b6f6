"""Configuration, time-loop orchestration, output writing, and the CLI.

Configs are TOML; see configs/annulus_demo.toml for a fully annotated
example.  Outputs are VTK legacy ASCII files (cell data), a diagnostics
CSV with the fixed header
``step,time,max_u,max_T,min_T,div_residual,sor_iters,thermal_content``,
and binary checkpoints that capture the full field state for exact
restarts.
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import boussinesq, hexmesh, pressure
from .boundary import BoundaryApplier, BoundaryCondition
from .boussinesq import FluidProperties, LesSmoother, Reflector, stable_timestep
from .dsc_state import (
    FieldStore,
    TimeGrid,
    read_checkpoint,
    step_cycle,
    write_checkpoint,
)
from .errors import ConfigError, DscflowError, NoConvergence
from .gradops import Connector
from .pressure import Cleaner, SorConfig

DIAG_HEADER = ["step", "time", "max_u", "max_T", "min_T", "div_residual",
               "sor_iters", "thermal_content"]

# VTK hexahedron corner order relative to the binary-corner cell ordering
_VTK_ORDER = (0, 1, 3, 2, 4, 5, 7, 6)


@dataclass
class SimConfig:
    mesh: dict
    fluid: FluidProperties
    boundary: dict                      # patch name -> BoundaryCondition
    selectors: dict = field(default_factory=dict)  # patch name -> geometric selector
    source: dict = field(default_factory=lambda: {"kind": "none"})
    tau: float | None = None            # None = auto
    safety: float = 0.5
    u_floor: float = 1e-6
    end_time: float | None = None
    max_steps: int | None = None
    steady_tol: float | None = None
    steady_window: int = 100
    sor: SorConfig = field(default_factory=SorConfig)
    smoothing_period: int = 0
    smoothing_lam: float = 0.1
    T_init: float | None = None
    include_grad_p: bool = True
    out_dir: str = "out"
    out_period: int = 1
    out_vtk: bool = False
    out_checkpoint: bool = False

    def validate(self):
        if self.tau is not None and self.tau <= 0:
            raise ConfigError("fixed tau must be positive")
        if self.end_time is None and self.max_steps is None:
            raise ConfigError("config needs an end condition: "
                              "time.end_time or time.max_steps")
        if self.out_period < 1:
            raise ConfigError("output.period must be >= 1")


def load_config(path):
    """Parse and validate a TOML config file into a SimConfig."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path}: {exc}") from exc
    return config_from_dict(raw, base=Path(path).parent)


def config_from_dict(raw, base=Path(".")):
    if "mesh" not in raw:
        raise ConfigError("config needs a [mesh] section")
    mesh = dict(raw["mesh"])
    if "file" in mesh:
        mesh["file"] = str(base / mesh["file"])

    fl = raw.get("fluid")
    if fl is None:
        raise ConfigError("config needs a [fluid] section")
    try:
        fluid = FluidProperties(
            alpha=float(fl["alpha"]), mu=float(fl["mu"]),
            rho_inf=float(fl["rho_inf"]), beta=float(fl["beta"]),
            g=np.asarray(fl.get("g", [0.0, 0.0, -9.81]), dtype=float),
            T_inf=float(fl.get("T_inf", 293.15)))
    except KeyError as exc:
        raise ConfigError(f"[fluid] is missing {exc.args[0]!r}") from exc

    bnds = {}
    selectors = {}
    for entry in raw.get("boundary", []):
        if "patch" not in entry:
            raise ConfigError("[[boundary]] entries need a patch name")
        bnds[entry["patch"]] = BoundaryCondition(
            velocity=entry.get("velocity", "no_slip"),
            thermal=entry.get("thermal", "adiabatic"),
            T_wall=entry.get("T_wall"))
        if "select" in entry:
            selectors[entry["patch"]] = dict(entry["select"])

    source = dict(raw.get("source", {"kind": "none"}))
    source.setdefault("kind", "none")
    if source["kind"] == "table" and "file" in source:
        source["file"] = str(base / source["file"])

    tm = raw.get("time", {})
    tau = tm.get("tau", "auto")
    tau = None if tau in ("auto", None) else float(tau)

    sor_raw = raw.get("sor", {})
    sor = SorConfig(
        omega=float(sor_raw.get("omega", 1.5)),
        eps=sor_raw.get("eps"),
        eps_scale=float(sor_raw.get("eps_scale", 1e-8)),
        u_ref=float(sor_raw.get("u_ref", 0.1)),
        a_ref=sor_raw.get("a_ref"),
        max_sweeps=int(sor_raw.get("max_sweeps", 500)),
        max_outer=int(sor_raw.get("max_outer", 500)),
        sweeps_per_outer=int(sor_raw.get("sweeps_per_outer", 1)),
        mode=sor_raw.get("mode", pressure.SWEEP_LEX))

    sm = raw.get("smoothing", {})
    out = raw.get("output", {})
    init = raw.get("init", {})
    pres = raw.get("pressure", {})

    cfg = SimConfig(
        mesh=mesh, fluid=fluid, boundary=bnds, selectors=selectors,
        source=source, tau=tau,
        safety=float(tm.get("safety", 0.5)),
        u_floor=float(tm.get("u_floor", 1e-6)),
        end_time=tm.get("end_time"),
        max_steps=tm.get("max_steps"),
        steady_tol=tm.get("steady_tol"),
        steady_window=int(tm.get("steady_window", 100)),
        sor=sor,
        smoothing_period=int(sm.get("period", 0)),
        smoothing_lam=float(sm.get("lam", 0.1)),
        T_init=init.get("T"),
        include_grad_p=bool(pres.get("include_grad_p", True)),
        out_dir=str(out.get("directory", "out")),
        out_period=int(out.get("period", 1)),
        out_vtk=bool(out.get("vtk", False)),
        out_checkpoint=bool(out.get("checkpoint", False)))
    cfg.validate()
    return cfg


def build_mesh(mesh_cfg):
    kind = mesh_cfg.get("generator")
    if "file" in mesh_cfg:
        return hexmesh.load_mesh(mesh_cfg["file"])
    if kind == "box":
        return hexmesh.gen_box(
            int(mesh_cfg["nx"]), int(mesh_cfg["ny"]), int(mesh_cfg["nz"]),
            extents=tuple(mesh_cfg.get("extents", (1.0, 1.0, 1.0))))
    if kind == "annulus":
        return hexmesh.gen_annulus(
            int(mesh_cfg["n_r"]), int(mesh_cfg["n_t"]), int(mesh_cfg["n_z"]),
            float(mesh_cfg["r_in"]), float(mesh_cfg["r_out"]),
            float(mesh_cfg["length"]))
    raise ConfigError(f"mesh needs a file or a known generator, got {kind!r}")


def resolve_source(source_cfg, topo, geom):
    kind = source_cfg.get("kind", "none")
    table = None
    if kind == "table":
        rows = []
        with open(source_cfg["file"]) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                cid, val = line.split()
                rows.append((int(cid), float(val)))
        table = rows
    return boussinesq.heat_source_from_spec(
        topo, geom, kind, value=float(source_cfg.get("value", 0.0)),
        patch=source_cfg.get("patch"), table=table)


@dataclass
class RunSummary:
    steps: int
    time: float
    reason: str
    diagnostics_path: str | None = None


class Simulation:
    """Wires mesh, operators and the field store; owns the time loop."""

    def __init__(self, cfg, threads=1):
        self.cfg = cfg
        self.threads = max(1, int(threads))
        self.topo = build_mesh(cfg.mesh)
        if cfg.selectors:
            self.topo = hexmesh.reassign_patches(self.topo, cfg.selectors)
        self.geom = hexmesh.build_cell_geometry(hexmesh.cell_vertices(self.topo))
        self.connector = Connector(self.geom, self.topo)
        self.bapplier = BoundaryApplier(self.geom, self.topo, cfg.boundary)
        self.cleaner = Cleaner(self.geom, self.topo, cfg.sor, self.connector,
                               self.bapplier, cfg.fluid.rho_inf)
        q = resolve_source(cfg.source, self.topo, self.geom)
        self.reflector = Reflector(self.geom, cfg.fluid, q=q,
                                   include_grad_p=cfg.include_grad_p)
        self.smoother = None
        if cfg.smoothing_period > 0:
            self.smoother = LesSmoother(self.topo, cfg.smoothing_period,
                                        cfg.smoothing_lam)
        self.hooks = {}
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None
        self.last_report = None

        T0 = cfg.T_init if cfg.T_init is not None else cfg.fluid.T_inf
        self.fields = FieldStore(self.topo.ncells, T0=T0)
        self.grid = TimeGrid(tau=cfg.tau if cfg.tau else 0.0)
        self.initialize_boundary()

    def initialize_boundary(self):
        """Make boundary ports authoritative before the first cycle."""
        f = self.fields
        self.bapplier(f)
        self.bapplier.apply_pressure(f.node["p"], f.port["p"])
        f.rotate_ports()
        f.rotate_nodes()

    def resume(self, checkpoint_path):
        fields, grid = read_checkpoint(checkpoint_path)
        if fields.ncells != self.topo.ncells:
            raise ConfigError(
                f"checkpoint has {fields.ncells} cells, mesh has "
                f"{self.topo.ncells}")
        self.fields = fields
        self.grid = grid

    def current_tau(self):
        if self.cfg.tau is not None:
            return self.cfg.tau
        u = self.fields.node["u"]
        umax = float(np.sqrt((u * u).sum(axis=1)).max())
        return stable_timestep(self.geom, self.cfg.fluid, umax,
                               safety=self.cfg.safety,
                               u_floor=self.cfg.u_floor)

    def _connection(self, fields):
        if self._pool is None:
            self.connector(fields)
            return
        conn = self.connector
        jobs = [self._pool.submit(conn.connect, fields.node[n],
                                  fields.port[n], fields.port_prev[n])
                for n in fields.names]
        for j in jobs:
            j.result()

    def step(self):
        tau = self.current_tau()
        self.grid.tau = tau
        self.reflector.tau = tau
        self.cleaner.tau = tau
        self.last_report = step_cycle(
            self.grid, self.fields,
            connection=self._connection,
            cleaning=self.cleaner,
            boundary=self.bapplier,
            smoothing=self.smoother,
            reflection=self.reflector,
            hooks=self.hooks)
        return self.last_report

    def diagnostics_row(self):
        f = self.fields
        u = f.node["u"]
        umax = float(np.sqrt((u * u).sum(axis=1)).max())
        rep = self.last_report
        return {
            "step": self.grid.step,
            "time": self.grid.time,
            "max_u": umax,
            "max_T": float(f.node["T"].max()),
            "min_T": float(f.node["T"].min()),
            "div_residual": rep.residual if rep else 0.0,
            "sor_iters": rep.sweeps if rep else 0,
            "thermal_content": float((self.geom.volume * f.node["T"]).sum()),
        }

    def run(self, progress=None):
        cfg = self.cfg
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        diag_path = out_dir / "diagnostics.csv"
        diag_file = open(diag_path, "w", newline="")
        writer = csv.writer(diag_file)
        writer.writerow(DIAG_HEADER)

        steady_ref = None
        reason = "max_steps"
        try:
            while True:
                if cfg.max_steps is not None and self.grid.step >= cfg.max_steps:
                    reason = "max_steps"
                    break
                if cfg.end_time is not None and self.grid.time >= cfg.end_time:
                    reason = "end_time"
                    break
                self.step()
                if self.grid.step % cfg.out_period == 0:
                    row = self.diagnostics_row()
                    writer.writerow([repr(row[k]) if isinstance(row[k], float)
                                     else row[k] for k in DIAG_HEADER])
                    if cfg.out_vtk:
                        write_vtk(self.topo, self.fields,
                                  out_dir / f"fields_{self.grid.step:06d}.vtk")
                    if progress is not None:
                        progress(row)
                if cfg.steady_tol is not None and \
                        self.grid.step % cfg.steady_window == 0:
                    snap = (self.fields.node["T"].copy(),
                            self.fields.node["u"].copy())
                    if steady_ref is not None:
                        dT = np.abs(snap[0] - steady_ref[0]).max()
                        du = np.abs(snap[1] - steady_ref[1]).max()
                        Tspan = max(np.ptp(snap[0]), 1e-30)
                        uspan = max(np.abs(snap[1]).max(), cfg.u_floor)
                        if dT / Tspan < cfg.steady_tol and \
                                du / uspan < cfg.steady_tol:
                            reason = "steady"
                            break
                    steady_ref = snap
        finally:
            diag_file.close()
        if cfg.out_checkpoint:
            write_checkpoint(out_dir / "checkpoint.bin", self.fields, self.grid)
        if cfg.out_vtk:
            write_vtk(self.topo, self.fields, out_dir / "fields_final.vtk")
        return RunSummary(steps=self.grid.step, time=self.grid.time,
                          reason=reason, diagnostics_path=str(diag_path))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()


def write_vtk(topo, fields, path):
    """VTK legacy ASCII unstructured grid with cell-centred T, p, u.

    Byte-stable for identical inputs: fixed header, %.17g floats.
    """
    lines = ["# vtk DataFile Version 3.0", "dscflow fields", "ASCII",
             "DATASET UNSTRUCTURED_GRID"]
    nv = topo.vertices.shape[0]
    nc = topo.ncells
    lines.append(f"POINTS {nv} double")
    for v in topo.vertices:
        lines.append("%.17g %.17g %.17g" % tuple(v))
    lines.append(f"CELLS {nc} {nc * 9}")
    for cell in topo.cells:
        lines.append("8 " + " ".join(str(int(cell[i])) for i in _VTK_ORDER))
    lines.append(f"CELL_TYPES {nc}")
    lines.extend(["12"] * nc)
    lines.append(f"CELL_DATA {nc}")
    for name in ("T", "p"):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        for v in fields.node[name]:
            lines.append("%.17g" % v)
    lines.append("VECTORS u double")
    for v in fields.node["u"]:
        lines.append("%.17g %.17g %.17g" % tuple(v))
    Path(path).write_text("\n".join(lines) + "\n")


def probe_checkpoint(path, cell):
    fields, grid = read_checkpoint(path)
    if not 0 <= cell < fields.ncells:
        raise ConfigError(f"cell {cell} out of range (0..{fields.ncells - 1})")
    out = [f"checkpoint step {grid.step}, time {grid.time!r}, tau {grid.tau!r}",
           f"cell {cell}:",
           f"  T = {float(fields.node['T'][cell])!r}",
           f"  u = {fields.node['u'][cell].tolist()!r}",
           f"  p = {float(fields.node['p'][cell])!r}"]
    for name in ("T", "p"):
        vals = ", ".join(repr(float(x)) for x in fields.port[name][cell])
        out.append(f"  ports {name}: [{vals}]")
    out.append("  ports u:")
    for f in range(6):
        out.append(f"    face {f}: {fields.port['u'][cell, f].tolist()!r}")
    return "\n".join(out)


# --- command line -----------------------------------------------------------

def _cmd_run(args):
    cfg = load_config(args.config)
    sim = Simulation(cfg, threads=args.threads)
    if args.resume:
        sim.resume(args.resume)
    try:
        summary = sim.run()
    finally:
        sim.close()
    print(f"run finished: {summary.steps} steps, t = {summary.time:.6g} s "
          f"({summary.reason}); diagnostics: {summary.diagnostics_path}")
    return 0


def _cmd_mesh_gen(args):
    if args.kind == "box":
        topo = hexmesh.gen_box(args.nx, args.ny, args.nz,
                               extents=tuple(args.extents))
    else:
        topo = hexmesh.gen_annulus(args.n_r, args.n_t, args.n_z,
                                   args.r_in, args.r_out, args.length)
    hexmesh.save_mesh(topo, args.output)
    print(f"wrote {topo.ncells} cells, {topo.nlinks} links, "
          f"{topo.nboundary} boundary faces to {args.output}")
    return 0


def _cmd_mesh_check(args):
    topo = hexmesh.load_mesh(args.file)
    report = hexmesh.check_mesh(topo)
    for key, val in report.items():
        print(f"{key}: {val}")
    return 0


def _cmd_probe(args):
    print(probe_checkpoint(args.checkpoint, args.cell))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="dscflow",
                                description="two-step port/node flow solver")
    p.add_argument("--threads", type=int, default=1,
                   help="worker count for the parallel phases")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="run a configured case")
    pr.add_argument("config")
    pr.add_argument("--resume", help="checkpoint file to resume from")
    pr.set_defaults(fn=_cmd_run)

    pm = sub.add_parser("mesh", help="mesh utilities")
    msub = pm.add_subparsers(dest="mesh_command", required=True)
    pg = msub.add_parser("gen", help="generate a structured mesh")
    pg.add_argument("--kind", choices=("box", "annulus"), required=True)
    pg.add_argument("--nx", type=int, default=1)
    pg.add_argument("--ny", type=int, default=1)
    pg.add_argument("--nz", type=int, default=1)
    pg.add_argument("--extents", type=float, nargs=3, default=(1.0, 1.0, 1.0))
    pg.add_argument("--n-r", type=int, default=4)
    pg.add_argument("--n-t", type=int, default=16)
    pg.add_argument("--n-z", type=int, default=1)
    pg.add_argument("--r-in", type=float, default=0.05)
    pg.add_argument("--r-out", type=float, default=0.115)
    pg.add_argument("--length", type=float, default=0.02)
    pg.add_argument("-o", "--output", required=True)
    pg.set_defaults(fn=_cmd_mesh_gen)
    pc = msub.add_parser("check", help="validate a mesh file")
    pc.add_argument("file")
    pc.set_defaults(fn=_cmd_mesh_check)

    pp = sub.add_parser("probe", help="inspect a checkpoint")
    pp.add_argument("checkpoint")
    pp.add_argument("--cell", type=int, required=True)
    pp.set_defaults(fn=_cmd_probe)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NoConvergence as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return 3
    except (DscflowError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
