"""Reflection-step physics: temperature and momentum nodal updates,
timestep estimation, and the optional velocity smoothing filter.

The nodal updates integrate the surface form of the transport equations
over each cell: the previous nodal values enter the local terms, the
current port values enter the surface integrals, and gradients come from
the face difference operators in :mod:`gradops`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gradops
from .errors import InvalidParameter


@dataclass
class FluidProperties:
    """Constant material properties; density varies only in the gravity
    term, linearly with temperature."""

    alpha: float                 # thermal diffusivity, m^2/s
    mu: float                    # dynamic viscosity, Pa s
    rho_inf: float               # reference density, kg/m^3
    beta: float                  # thermal expansion coefficient, 1/K
    g: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    T_inf: float = 293.15        # reference temperature, K

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float)
        if self.alpha <= 0 or self.mu <= 0 or self.rho_inf <= 0:
            raise InvalidParameter("alpha, mu and rho_inf must be positive")
        if not np.isfinite(self.beta) or not np.all(np.isfinite(self.g)):
            raise InvalidParameter("beta and g must be finite")


def nodal_divergence(geom, port_u):
    """div u per cell from the face velocity ports: (1/V) sum u_f . f."""
    return np.einsum("cfv,cfv->c", port_u, geom.face_vectors) / geom.volume


def reflect_temperature(geom, props, q, tau, node_T, port_T, port_T_tan,
                        port_u, div_u=None):
    """New nodal T: local source/dilatation terms plus the conduction and
    advection surface integrals.

    ``node_T`` is the previous nodal value, ``port_T``/``port_u`` the
    current ports, ``port_T_tan`` the one-step-old ports feeding the
    tangential parts of the face gradients.
    """
    if div_u is None:
        div_u = nodal_divergence(geom, port_u)
    nabla = gradops.face_nabla_b(geom, node_T, port_T, port_T_tan)
    conduction = gradops.face_flux(geom, nabla).sum(axis=1)
    u_flux = np.einsum("cfv,cfv->cf", port_u, geom.face_vectors)
    advection = (port_T * u_flux).sum(axis=1)
    return (node_T + tau * (node_T * div_u + q)
            + (tau / geom.volume) * (props.alpha * conduction - advection))


def reflect_velocity(geom, props, tau, node_u, node_T, port_u, port_u_tan,
                     grad_p=None, div_u=None):
    """New nodal u: dilatation, buoyancy and pressure-gradient terms plus
    the viscous and advective surface integrals, componentwise.

    ``grad_p`` is the nodal pressure gradient (zeros when the pressure term
    is disabled); see reflect_temperature for the time roles of the rest.
    """
    if div_u is None:
        div_u = nodal_divergence(geom, port_u)
    if grad_p is None:
        grad_p = np.zeros_like(node_u)
    nabla = gradops.face_nabla_b(geom, node_u, port_u, port_u_tan)
    viscous = gradops.face_flux(geom, nabla).sum(axis=1)
    u_flux = np.einsum("cfv,cfv->cf", port_u, geom.face_vectors)
    advection = np.einsum("cfv,cf->cv", port_u, u_flux)
    nu = props.mu / props.rho_inf
    local = (node_u * div_u[:, None]
             - props.beta * (node_T - props.T_inf)[:, None] * props.g[None, :]
             - grad_p / props.rho_inf)
    return (node_u + tau * local
            + (tau / geom.volume)[:, None] * (nu * viscous - advection))


class Reflector:
    """Nodal update operator for the cycle; ``tau`` is set per step."""

    def __init__(self, geom, props, q=None, include_grad_p=True):
        self.geom = geom
        self.props = props
        nc = geom.ncells
        self.q = np.zeros(nc) if q is None else np.asarray(q, dtype=float)
        if self.q.shape != (nc,):
            raise InvalidParameter("heat source must be one value per cell")
        if not np.all(np.isfinite(self.q)):
            raise InvalidParameter("heat source must be finite")
        self.include_grad_p = include_grad_p
        self.tau = 0.0

    def __call__(self, fields):
        geom = self.geom
        node_T = fields.node_prev["T"]
        node_u = fields.node_prev["u"]
        div_u = nodal_divergence(geom, fields.port["u"])
        grad_p = None
        if self.include_grad_p:
            grad_p = gradops.nodal_gradient(geom, fields.port["p"])
        T_new = reflect_temperature(
            geom, self.props, self.q, self.tau, node_T,
            fields.port["T"], fields.port_prev["T"], fields.port["u"],
            div_u=div_u)
        u_new = reflect_velocity(
            geom, self.props, self.tau, node_u, node_T,
            fields.port["u"], fields.port_prev["u"], grad_p=grad_p,
            div_u=div_u)
        fields.node["T"][...] = T_new
        fields.node["u"][...] = u_new
        # nodal p changes only through divergence cleaning
        fields.node["p"][...] = fields.node_prev["p"]


def stable_timestep(geom, props, u_max, safety=0.5, u_floor=1e-6):
    """Explicit-stability timestep estimate.

    Per cell, with h = V / max_f |f|: the diffusive limits h^2/(6 alpha) and
    h^2 rho/(6 mu) and the advective limit h/(|u|max + u_floor); the result
    is safety times the global minimum.
    """
    area = np.linalg.norm(geom.face_vectors, axis=2).max(axis=1)
    h = geom.volume / area
    with np.errstate(divide="ignore"):
        lim_T = np.where(props.alpha > 0, h**2 / (6.0 * props.alpha), np.inf)
        lim_nu = np.where(props.mu > 0, h**2 * props.rho_inf / (6.0 * props.mu),
                          np.inf)
    lim_adv = h / (abs(u_max) + u_floor)
    return safety * float(np.minimum(np.minimum(lim_T, lim_nu), lim_adv).min())


class LesSmoother:
    """Periodic nodal-velocity relaxation toward the face-neighbor mean.

    Every ``period`` cycles (before the nodal step), u is replaced by
    (1 - lam) * u + lam * mean(face-adjacent nodal u).  Disabled when
    period == 0.
    """

    def __init__(self, topo, period=0, lam=0.1):
        self.period = int(period)
        self.lam = float(lam)
        nbr = topo.neighbor_table()
        self._valid = nbr >= 0
        self._nbr = np.where(self._valid, nbr, 0)
        self._count = np.maximum(self._valid.sum(axis=1), 1)

    def due(self, step):
        return self.period > 0 and step % self.period == 0

    def __call__(self, fields):
        u = fields.node["u"]
        mean = (u[self._nbr] * self._valid[:, :, None]).sum(axis=1)
        mean /= self._count[:, None]
        u *= (1.0 - self.lam)
        u += self.lam * mean


def heat_source_from_spec(topo, geom, kind, value=0.0, patch=None, table=None):
    """Per-cell heat source (K/s) from a config-style specification.

    kind "uniform": every cell gets ``value``.  kind "patch": cells owning a
    boundary face of ``patch`` get ``value``.  kind "table": ``table`` is an
    iterable of (cell_id, q) pairs (all other cells zero).
    """
    q = np.zeros(topo.ncells)
    if kind == "none":
        return q
    if kind == "uniform":
        q[:] = value
        return q
    if kind == "patch":
        if patch is None:
            raise InvalidParameter("patch heat source needs a patch name")
        cells, _ = topo.patch_faces(patch)
        q[np.unique(cells)] = value
        return q
    if kind == "table":
        if table is None:
            raise InvalidParameter("table heat source needs (cell, q) rows")
        for cid, val in table:
            cid = int(cid)
            if not 0 <= cid < topo.ncells:
                raise InvalidParameter(f"heat source cell {cid} out of range")
            q[cid] = float(val)
        return q
    raise InvalidParameter(f"unknown heat source kind {kind!r}")
