"""Wall boundary conditions applied to boundary ports after the connection
step.

Velocity: no-slip zeroes the port velocity; free-slip takes the tangential
projection of the adjacent nodal velocity (one-sided closure, since the
interface continuity update needs two cells).  Temperature: isothermal pins
the port value; adiabatic solves the one-unknown zero-conduction-flux
condition for the port value.  Pressure ports get a homogeneous Neumann
closure (zero face-normal pressure-gradient flux), applied by the cleaning
loop and at initialization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradops
from .errors import ConfigError, ZeroDiagonal
from .hexmesh import FACE_DIR, FACE_SIGN

NO_SLIP = "no_slip"
FREE_SLIP = "free_slip"
ISOTHERMAL = "isothermal"
ADIABATIC = "adiabatic"


@dataclass
class BoundaryCondition:
    """Velocity and thermal wall kinds for one patch."""

    velocity: str = NO_SLIP
    thermal: str = ADIABATIC
    T_wall: float | None = None

    def __post_init__(self):
        if self.velocity not in (NO_SLIP, FREE_SLIP):
            raise ConfigError(f"unknown velocity condition {self.velocity!r}")
        if self.thermal not in (ISOTHERMAL, ADIABATIC):
            raise ConfigError(f"unknown thermal condition {self.thermal!r}")
        if self.thermal == ISOTHERMAL and self.T_wall is None:
            raise ConfigError("isothermal condition needs T_wall")


def apply_velocity_bc(kind, port_u_face, node_u, normal):
    """Single-face velocity condition (array forms live in BoundaryApplier)."""
    if kind == NO_SLIP:
        return np.zeros(3)
    n = normal / np.linalg.norm(normal)
    return node_u - np.dot(node_u, n) * n


def solve_zero_flux_port(geom, cells, faces, node_vals, tang):
    """Port values making the face-normal flux vanish.

    Solves s . nabla_b = 0 for the normal channel given the nodal value and
    the tangential differences ``tang`` (nc, 3): the uniform state maps to
    the nodal value exactly.
    """
    s = geom.s_coeffs[cells, faces]                      # (m, 3)
    s_n = geom.s_normal[cells, faces]                    # (m,)
    dirs = FACE_DIR[faces]
    signs = FACE_SIGN[faces]
    t = tang[cells]                                      # (m, 3)
    dot = np.einsum("md,md->m", s, t) - s_n * t[np.arange(len(cells)), dirs]
    return node_vals[cells] + signs * dot / (2.0 * s_n)


class BoundaryApplier:
    """Compiled per-patch boundary conditions for one mesh."""

    def __init__(self, geom, topo, conditions, diag_eps=1e-14):
        self.geom = geom
        self.topo = topo
        missing = [p for p in conditions if p not in topo.patch_names]
        if missing:
            raise ConfigError(f"boundary patches not in mesh: {missing}")
        uncovered = [p for p in topo.patch_names if p not in conditions]
        if uncovered:
            raise ConfigError(f"mesh patches without boundary conditions: "
                              f"{uncovered}")

        def collect(pred):
            cs, fs = [], []
            for name, cond in conditions.items():
                if pred(cond):
                    c, f = topo.patch_faces(name)
                    cs.append(c)
                    fs.append(f)
            if cs:
                return np.concatenate(cs), np.concatenate(fs)
            return (np.array([], dtype=np.int64),) * 2

        self.noslip = collect(lambda c: c.velocity == NO_SLIP)
        self.freeslip = collect(lambda c: c.velocity == FREE_SLIP)
        self.adiabatic = collect(lambda c: c.thermal == ADIABATIC)

        iso_c, iso_f, iso_T = [], [], []
        for name, cond in conditions.items():
            if cond.thermal == ISOTHERMAL:
                c, f = topo.patch_faces(name)
                iso_c.append(c)
                iso_f.append(f)
                iso_T.append(np.full(len(c), cond.T_wall))
        if iso_c:
            self.iso = (np.concatenate(iso_c), np.concatenate(iso_f))
            self.iso_T = np.concatenate(iso_T)
        else:
            self.iso = (np.array([], dtype=np.int64),) * 2
            self.iso_T = np.array([])

        fc, ff = self.freeslip
        f_vec = geom.face_vectors[fc, ff]
        self.freeslip_normals = f_vec / np.linalg.norm(f_vec, axis=1, keepdims=True) \
            if len(fc) else np.zeros((0, 3))

        scale = np.linalg.norm(geom.s_coeffs, axis=2)
        for cells, faces, label in (
                (self.adiabatic[0], self.adiabatic[1], "adiabatic"),
                (topo.bnd_cell, topo.bnd_face, "pressure")):
            if len(cells):
                s_n = geom.s_normal[cells, faces]
                if np.any(np.abs(s_n) < diag_eps * scale[cells, faces]):
                    raise ZeroDiagonal(
                        f"vanishing normal s-coefficient on {label} faces")

    def apply_velocity(self, fields):
        c, f = self.noslip
        fields.port["u"][c, f] = 0.0
        c, f = self.freeslip
        if len(c):
            un = fields.node["u"][c]
            n = self.freeslip_normals
            fields.port["u"][c, f] = un - np.einsum("md,md->m", un, n)[:, None] * n

    def apply_thermal(self, fields):
        c, f = self.iso
        if len(c):
            fields.port["T"][c, f] = self.iso_T
        c, f = self.adiabatic
        if len(c):
            tang = gradops.tangential_diffs(fields.port_prev["T"])
            fields.port["T"][c, f] = solve_zero_flux_port(
                self.geom, c, f, fields.node["T"], tang)

    def apply_pressure(self, node_p, port_p, tang_source=None):
        """Homogeneous-Neumann pressure ports on every boundary face.

        ``tang_source`` supplies the tangential port differences (defaults
        to the current port values: the static closure used in cleaning).
        """
        c = self.topo.bnd_cell
        f = self.topo.bnd_face
        if not len(c):
            return
        src = port_p if tang_source is None else tang_source
        tang = gradops.tangential_diffs(src)
        port_p[c, f] = solve_zero_flux_port(self.geom, c, f, node_p, tang)

    def __call__(self, fields):
        self.apply_velocity(fields)
        self.apply_thermal(fields)
