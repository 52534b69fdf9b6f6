"""Divergence cleaning: an SOR loop driving the cell boundary flow
integrals to zero by solving the discrete pressure Poisson problem and
correcting the face velocities with the pressure gradient.

One outer round is: relaxation sweep over the nodal pressures, continuity
restoration of the pressure ports, face-velocity correction.  During a
sweep each cell update is propagated to the running boundary integrals of
the cell and its neighbors (Gauss-Seidel visibility); between rounds the
port state and the velocity correction are rebuilt exactly from the
accumulated pressure increments, so on exit the face velocities equal the
entry values minus (tau/rho) times the face gradient of the accumulated
pressure change.  Pressure persists across calls: a divergence-free state
returns immediately and leaves every field untouched.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import gradops
from .errors import ConfigError, NoConvergence
from .hexmesh import FACE_SIGN

SWEEP_LEX = "lexicographic"
SWEEP_REDBLACK = "redblack"


@dataclass
class SorConfig:
    """Relaxation parameters for the cleaning loop.

    ``eps`` is the absolute stop bound on sum_c |I_c| (m^3/s); when None it
    is derived as eps_scale * u_ref * a_ref * ncells with a_ref defaulting
    to the mean face area of the mesh.
    """

    omega: float = 1.5
    eps: float | None = None
    eps_scale: float = 1e-8
    u_ref: float = 0.1
    a_ref: float | None = None
    max_sweeps: int = 500
    max_outer: int = 500
    sweeps_per_outer: int = 1
    mode: str = SWEEP_LEX

    def __post_init__(self):
        if not 0.0 < self.omega < 2.0:
            raise ConfigError("omega must be in (0, 2)")
        if self.eps is not None and self.eps <= 0.0:
            raise ConfigError("eps must be positive")
        if self.sweeps_per_outer < 1:
            raise ConfigError("sweeps_per_outer must be >= 1")
        if self.mode not in (SWEEP_LEX, SWEEP_REDBLACK):
            raise ConfigError(f"unknown sweep mode {self.mode!r}")


@dataclass
class CleanReport:
    outer: int
    sweeps: int
    residual: float
    converged: bool
    history: list = field(default_factory=list)


def boundary_integral(geom, port_u):
    """Discrete cell boundary integral I = sum_f u_f . f per cell."""
    return np.einsum("cfv,cfv->c", port_u, geom.face_vectors)


def pressure_diagonal(geom):
    """Nodal-pressure coefficient of the cell's own flux sum with ports
    held fixed: a = sum_f 2*(-1)^f * s[f][f//2].  Negative on sane cells."""
    return 2.0 * (FACE_SIGN[None, :] * geom.s_normal).sum(axis=1)


def solve_cell_pressure(p_old, I, a_geo, tau, rho_inf, omega=1.0):
    """Relaxed per-cell solve of the flux-compensation equation.

    At a state where ports and velocity corrections are in sync with the
    current pressure, the exact frozen-port solution p* satisfies
    p* - p = (rho/tau) * I / a, so the over-relaxed update is explicit in
    the current boundary integral alone.
    """
    return p_old + omega * (rho_inf / tau) * I / a_geo


def restore_pressure_continuity(connector, bapplier, node_p, port_p,
                                tang_source=None):
    """Rebuild interior pressure ports from the continuity update and
    boundary ports from the homogeneous Neumann closure."""
    src = port_p.copy() if tang_source is None else tang_source
    connector.connect(node_p, port_p, src)
    bapplier.apply_pressure(node_p, port_p, tang_source=src)


def correct_face_velocity(port_u, grad_faces, tau, rho_inf):
    """u_f <- u_f - (tau/rho) grad p|_f for every (cell, face)."""
    port_u -= (tau / rho_inf) * grad_faces


class Cleaner:
    """Divergence-cleaning operator bound to one mesh; tau set per step."""

    def __init__(self, geom, topo, sor, connector, bapplier, rho_inf):
        self.geom = geom
        self.sor = sor
        self.connector = connector
        self.bapplier = bapplier
        self.rho_inf = float(rho_inf)
        self.tau = 0.0

        self.a_geo = pressure_diagonal(geom)
        area = np.linalg.norm(geom.face_vectors, axis=2)
        a_ref = sor.a_ref if sor.a_ref is not None else float(area.mean())
        self.eps = sor.eps if sor.eps is not None else (
            sor.eps_scale * sor.u_ref * a_ref * geom.ncells)

        # flux sensitivities of the two sides of each link to the two nodal
        # pressures, with the shared port following the continuity update
        ca, fa = connector.cell_a, connector.face_a
        cb, fb = connector.cell_b, connector.face_b
        sa, sb = connector.sa_n, connector.sb_n
        par, D = connector.parity, connector.denom
        sgn_a, sgn_b = FACE_SIGN[fa], FACE_SIGN[fb]
        gAA = 2.0 * sgn_a * sa * (1.0 - sa / D)
        gBB = 2.0 * sgn_b * sb * (1.0 - par * sb / D)
        gBA = -2.0 * sgn_b * sb * (sa / D)
        gAB = -2.0 * sgn_a * sa * (par * sb / D)

        nc = geom.ncells
        self.g_self = np.zeros((nc, 6))
        self.g_other = np.zeros((nc, 6))
        self.nbr = np.full((nc, 6), -1, dtype=np.int64)
        self.g_self[ca, fa] = gAA
        self.g_self[cb, fb] = gBB
        self.g_other[ca, fa] = gBA
        self.g_other[cb, fb] = gAB
        self.nbr[ca, fa] = cb
        self.nbr[cb, fb] = ca
        self.gs_sum = self.g_self.sum(axis=1)
        # division constant of the sweep: the port-following sensitivity of
        # the cell's own integral (boundary ports are Neumann and contribute
        # nothing); the frozen-port coefficient a_geo under-relaxes twofold
        # and would miss the sweep budget.  Cells with no interior face
        # cannot be corrected at all and fall back to a_geo.
        self.sweep_diag = np.where(np.abs(self.gs_sum) >
                                   1e-12 * np.abs(self.a_geo),
                                   self.gs_sum, self.a_geo)

        # velocity-correction targets: interior links always, free-slip
        # faces tangentially; no-slip faces keep their constrained velocity
        self._freeslip = bapplier.freeslip
        self._freeslip_n = bapplier.freeslip_normals

        self._colors = None
        if sor.mode == SWEEP_REDBLACK:
            self._colors = self._two_color()

    def _two_color(self):
        """BFS bipartition of the cell adjacency graph (per component)."""
        nbr = self.nbr
        color = np.full(self.geom.ncells, -1, dtype=np.int8)
        for seed in range(self.geom.ncells):
            if color[seed] >= 0:
                continue
            color[seed] = 0
            queue = deque([seed])
            while queue:
                c = queue.popleft()
                for n in nbr[c]:
                    if n < 0:
                        continue
                    if color[n] < 0:
                        color[n] = 1 - color[c]
                        queue.append(n)
                    elif color[n] == color[c]:
                        raise ConfigError(
                            "red-black sweeps need a bipartite cell graph "
                            "(odd azimuthal counts are not); use lexicographic")
        return [np.flatnonzero(color == 0), np.flatnonzero(color == 1)]

    def _sweep_lex(self, p_node, I, coef, rcoef):
        omega = self.sor.omega
        a = self.sweep_diag
        gs = self.gs_sum
        go = self.g_other
        nbr = self.nbr
        for c in range(self.geom.ncells):
            delta = omega * rcoef * I[c] / a[c]
            p_node[c] += delta
            I[c] -= coef * gs[c] * delta
            row = nbr[c]
            m = row >= 0
            if m.any():
                np.subtract.at(I, row[m], coef * delta * go[c, m])

    def _sweep_redblack(self, p_node, I, coef, rcoef):
        omega = self.sor.omega
        for cells in self._colors:
            delta = omega * rcoef * I[cells] / self.sweep_diag[cells]
            p_node[cells] += delta
            I[cells] -= coef * self.gs_sum[cells] * delta
            row = self.nbr[cells]
            m = row >= 0
            np.subtract.at(I, row[m], coef * (delta[:, None] * self.g_other[cells])[m])

    def __call__(self, fields):
        geom = self.geom
        coef = self.tau / self.rho_inf
        rcoef = self.rho_inf / self.tau
        p_node = fields.node["p"]
        p_port = fields.port["p"]
        u_port = fields.port["u"]
        sweep = self._sweep_redblack if self._colors is not None else self._sweep_lex

        history = []
        outer = 0
        sweeps = 0
        while True:
            I = boundary_integral(geom, u_port)
            res = float(np.abs(I).sum())
            history.append(res)
            if res < self.eps:
                break
            if outer >= self.sor.max_outer or sweeps >= self.sor.max_sweeps:
                self.last_history = history
                raise NoConvergence(
                    f"divergence cleaning stalled at residual {res:.3e} "
                    f"after {sweeps} sweeps (bound {self.eps:.3e})",
                    residual=res, sweeps=sweeps)

            snap_node = p_node.copy()
            snap_port = p_port.copy()
            for _ in range(min(self.sor.sweeps_per_outer,
                               self.sor.max_sweeps - sweeps)):
                sweep(p_node, I, coef, rcoef)
                sweeps += 1
            restore_pressure_continuity(self.connector, self.bapplier,
                                        p_node, p_port, tang_source=snap_port)

            # exact velocity resync for this round's pressure increment
            dn = p_node - snap_node
            dq = p_port - snap_port
            dgrad = gradops.face_gradient(geom,
                                          gradops.face_nabla_b(geom, dn, dq, dq))
            ca, fa = self.connector.cell_a, self.connector.face_a
            cb, fb = self.connector.cell_b, self.connector.face_b
            g_shared = 0.5 * (dgrad[ca, fa] + dgrad[cb, fb])
            corrected = u_port[ca, fa] - coef * g_shared
            u_port[ca, fa] = corrected
            u_port[cb, fb] = corrected
            fc, ff = self._freeslip
            if len(fc):
                gb = dgrad[fc, ff]
                n = self._freeslip_n
                gt = gb - np.einsum("md,md->m", gb, n)[:, None] * n
                u_port[fc, ff] -= coef * gt
            # no-slip faces keep their constrained velocity
            outer += 1

        if sweeps > 0:
            shift = float(np.average(p_node, weights=geom.volume))
            p_node -= shift
            p_port -= shift
        return CleanReport(outer=outer, sweeps=sweeps,
                           residual=history[-1], converged=True,
                           history=history)
