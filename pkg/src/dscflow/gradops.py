"""Discrete face/node differential operators on hexahedral cells.

Field arrays follow one layout throughout: nodal values are (nc, *comp) and
port values (nc, 6, *comp), where *comp is empty for scalars and (3,) for
vectors.  Direction-resolved quantities put the direction axis right after
the face axis, e.g. gradients are (nc, 6, 3, *comp).

Time conventions are the caller's business: the functions take the port
array that supplies the normal channel (``port_now``) and the port array
that supplies tangential differences (``port_tan``) separately.  In the
dynamic cycle these are the current and previous port values; static
evaluations pass the same array twice.
"""

from __future__ import annotations

import numpy as np

from .errors import ZeroDenominator
from .hexmesh import FACE_DIR, FACE_SIGN

# sign and direction lookups as float/int arrays for fancy indexing
_FACES = np.arange(6)


def tangential_diffs(port_vals):
    """Opposite-port differences per direction: (nc, 3, *comp).

    diff[:, mu] = port[:, 2*mu+1] - port[:, 2*mu]; on any hexahedron the two
    face centroids differ by exactly the node vector b[mu].
    """
    return port_vals[:, 1::2, ...] - port_vals[:, 0::2, ...]


def node_z_quantities(node_vals, port_tan):
    """Per-face direction triples built from nodal values and port diffs.

    z[c, f, mu] = 2*(-1)^f * node[c] when mu == f//2, else the tangential
    port difference in direction mu.  Shape (nc, 6, 3, *comp).
    """
    tang = tangential_diffs(port_tan)
    nc = node_vals.shape[0]
    comp = node_vals.shape[1:]
    z = np.empty((nc, 6, 3) + comp)
    z[:] = tang[:, None, :, ...]
    sign = FACE_SIGN.reshape((1, 6) + (1,) * len(comp))
    z[:, _FACES, FACE_DIR] = 2.0 * sign * node_vals[:, None, ...]
    return z


def port_z_quantities(node_vals, port_now, port_tan, connector=None):
    """Port-side direction triples: normal channel from the face value,
    tangential channels as the arithmetic mean of the two adjacent cells'
    nodal triples (one-sided at boundary faces).

    Satisfies z[c, f, f//2] = 2*(-1)^f * port_now[c, f] and, together with
    node_z_quantities, the half-sum tangential consistency relation.
    """
    z = node_z_quantities(node_vals, port_tan)
    if connector is not None:
        ca, fa = connector.cell_a, connector.face_a
        cb, fb = connector.cell_b, connector.face_b
        mean = 0.5 * (z[ca, fa] + z[cb, fb])
        z[ca, fa] = mean
        z[cb, fb] = mean
    comp = node_vals.shape[1:]
    sign = FACE_SIGN.reshape((1, 6) + (1,) * len(comp))
    z[:, _FACES, FACE_DIR] = 2.0 * sign * port_now
    return z


def face_nabla_b(geom, node_vals, port_now, port_tan):
    """Time-shifted finite differences along the node vectors, per face.

    Normal channel: 2*(-1)^f * (node - port_now); tangential channels:
    opposite-port differences of ``port_tan``.  Shape (nc, 6, 3, *comp).
    """
    nb = node_z_quantities(node_vals, port_tan)
    comp = node_vals.shape[1:]
    sign = FACE_SIGN.reshape((1, 6) + (1,) * len(comp))
    nb[:, _FACES, FACE_DIR] = 2.0 * sign * (node_vals[:, None, ...] - port_now)
    return nb


def face_gradient(geom, nabla_b):
    """Gradient in the global frame: grad[nu] = sum_mu gamma[nu][mu] nb[mu]."""
    return np.einsum("cnm,cfm...->cfn...", geom.gamma, nabla_b)


def face_flux(geom, nabla_b):
    """Surface-normal flux S = sum_mu s[f][mu] * nb[mu]; equals f . grad."""
    return np.einsum("cfm,cfm...->cf...", geom.s_coeffs, nabla_b)


def face_flux_z(geom, node_vals, port_now, port_tan):
    """Flux in channel form: S = s . (z_node - delta_normal * z_port)."""
    zn = node_z_quantities(node_vals, port_tan)
    comp = node_vals.shape[1:]
    sign = FACE_SIGN.reshape((1, 6) + (1,) * len(comp))
    zn[:, _FACES, FACE_DIR] -= 2.0 * sign * port_now
    return np.einsum("cfm,cfm...->cf...", geom.s_coeffs, zn)


def nodal_gradient(geom, port_vals):
    """Cell-centred gradient from opposite-port differences, gamma-mapped."""
    diffs = tangential_diffs(port_vals)
    return np.einsum("cnm,cm...->cn...", geom.gamma, diffs)


class Connector:
    """Interface continuity update for all interior links.

    Solves flux anti-symmetry plus face-value continuity for the shared
    port value of every link and writes it identically to both sides.
    """

    def __init__(self, geom, topo, denom_eps=1e-12):
        self.geom = geom
        self.cell_a = topo.link_cell_a
        self.face_a = topo.link_face_a
        self.cell_b = topo.link_cell_b
        self.face_b = topo.link_face_b
        s_n = geom.s_normal
        self.sa_n = s_n[self.cell_a, self.face_a]
        self.sb_n = s_n[self.cell_b, self.face_b]
        self.parity = np.where((self.face_a + self.face_b) % 2 == 0, 1.0, -1.0)
        self.denom = self.sa_n + self.parity * self.sb_n
        self.half_sign_a = 0.5 * FACE_SIGN[self.face_a]
        srow = np.linalg.norm(geom.s_coeffs, axis=2)
        lim = denom_eps * np.maximum(srow[self.cell_a, self.face_a],
                                     srow[self.cell_b, self.face_b])
        bad = np.abs(self.denom) <= lim
        if np.any(bad):
            raise ZeroDenominator(
                f"degenerate interface denominator at links "
                f"{np.flatnonzero(bad)[:10].tolist()}")

    def shared_values(self, node_vals, port_tan):
        """Shared face values per link, (nl, *comp)."""
        z = node_z_quantities(node_vals, port_tan)
        dots = np.einsum("cfm,cfm...->cf...", self.geom.s_coeffs, z)
        num = dots[self.cell_a, self.face_a] + dots[self.cell_b, self.face_b]
        comp = node_vals.shape[1:]
        hs = self.half_sign_a.reshape((-1,) + (1,) * len(comp))
        den = self.denom.reshape((-1,) + (1,) * len(comp))
        return hs * num / den

    def connect(self, node_vals, port_cur, port_tan):
        """Write the continuity value of every link into ``port_cur``."""
        shared = self.shared_values(node_vals, port_tan)
        port_cur[self.cell_a, self.face_a] = shared
        port_cur[self.cell_b, self.face_b] = shared

    def __call__(self, fields):
        """Connect all fields: normal cycle usage (tangentials at t - tau)."""
        for name in fields.names:
            self.connect(fields.node[name], fields.port[name],
                         fields.port_prev[name])
