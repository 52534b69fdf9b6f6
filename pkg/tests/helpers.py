"""Shared fixtures-in-spirit: mesh builders, field samplers, and the
direct sparse pressure oracle used to cross-check the SOR cleaner."""

import numpy as np

from dscflow import hexmesh as hm
from dscflow.hexmesh import FACE_DIR, FACE_SIGN


def unit_cube_verts(offset=(0.0, 0.0, 0.0), side=1.0):
    corners = np.array([[i, j, k] for k in (0, 1) for j in (0, 1) for i in (0, 1)],
                       dtype=float)
    return corners * side + np.asarray(offset, dtype=float)


def parallelepiped_verts(span, origin=(0.0, 0.0, 0.0)):
    """Cell spanned by the rows of ``span`` from ``origin``."""
    corners = np.array([[i, j, k] for k in (0, 1) for j in (0, 1) for i in (0, 1)],
                       dtype=float)
    return corners @ np.asarray(span, dtype=float) + np.asarray(origin, dtype=float)


def random_hexes(n, rng, jitter=0.18):
    """Random valid hexahedra: jittered cubes under random affine maps."""
    corners = np.array([[i, j, k] for k in (0, 1) for j in (0, 1) for i in (0, 1)],
                       dtype=float)
    verts = np.tile(corners, (n, 1, 1))
    verts += rng.uniform(-jitter, jitter, size=verts.shape)
    A = np.eye(3) + 0.25 * rng.standard_normal((n, 3, 3))
    # keep the maps orientation-preserving and well conditioned
    dets = np.linalg.det(A)
    A[dets < 0.4] = np.eye(3)
    scale = rng.uniform(0.5, 2.0, size=(n, 1, 1))
    verts = np.einsum("nvd,nde->nve", verts, A * scale)
    verts += rng.uniform(-5.0, 5.0, size=(n, 1, 3))
    return verts


def jittered_box(n, rng=None, jitter=0.15, seed=5):
    """Unit box mesh with interior vertices perturbed by jitter*h."""
    if rng is None:
        rng = np.random.default_rng(seed)
    topo = hm.gen_box(n, n, n)
    h = 1.0 / n
    interior = (topo.vertices > 1e-12) & (topo.vertices < 1.0 - 1e-12)
    topo.vertices[:] = topo.vertices + rng.uniform(
        -jitter * h, jitter * h, topo.vertices.shape) * interior
    return topo


def sample_fields(fields, geom, fn, name="T"):
    """Set nodal and port values (current and previous) of a scalar field
    from a function of position."""
    fields.node[name][:] = fn(geom.centers)
    fields.node_prev[name][:] = fields.node[name]
    fields.port[name][:] = fn(geom.face_centroids.reshape(-1, 3)).reshape(-1, 6)
    fields.port_prev[name][:] = fields.port[name]


def set_link_velocities(fields, topo, values):
    """Write shared interior face velocities (identical on both sides)."""
    fields.port["u"][topo.link_cell_a, topo.link_face_a] = values
    fields.port["u"][topo.link_cell_b, topo.link_face_b] = values


def direct_pressure_solve(geom, topo, I0, tau, rho_inf):
    """Independent oracle: assemble and LU-solve the coupled nodal/port
    pressure system (flux compensation + continuity + Neumann closure +
    volume-weighted gauge) and return the nodal pressure."""
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    nc, nl, nb = topo.ncells, topo.nlinks, topo.nboundary
    pidx = np.full((nc, 6), -1, dtype=int)
    pidx[topo.link_cell_a, topo.link_face_a] = np.arange(nl)
    pidx[topo.link_cell_b, topo.link_face_b] = np.arange(nl)
    pidx[topo.bnd_cell, topo.bnd_face] = nl + np.arange(nb)
    s, s_n = geom.s_coeffs, geom.s_normal

    N = nc + nl + nb + 1
    rows, cols, data = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        data.append(v)

    rhs = np.zeros(N)
    for c in range(nc):
        for fi in range(6):
            sign, dirn = FACE_SIGN[fi], FACE_DIR[fi]
            add(c, c, 2.0 * sign * s_n[c, fi])
            add(c, nc + pidx[c, fi], -2.0 * sign * s_n[c, fi])
            for mu in range(3):
                if mu == dirn:
                    continue
                add(c, nc + pidx[c, 2 * mu + 1], s[c, fi, mu])
                add(c, nc + pidx[c, 2 * mu], -s[c, fi, mu])
        rhs[c] = (rho_inf / tau) * I0[c]
    for L in range(nl):
        ca, fa = topo.link_cell_a[L], topo.link_face_a[L]
        cb, fb = topo.link_cell_b[L], topo.link_face_b[L]
        par = 1.0 if (fa + fb) % 2 == 0 else -1.0
        D = s_n[ca, fa] + par * s_n[cb, fb]
        row = nc + L
        add(row, row, 1.0)
        coef = FACE_SIGN[fa] / (2.0 * D)
        for cc, ff in ((ca, fa), (cb, fb)):
            add(row, cc, -coef * s_n[cc, ff] * 2.0 * FACE_SIGN[ff])
            for mu in range(3):
                if mu == FACE_DIR[ff]:
                    continue
                add(row, nc + pidx[cc, 2 * mu + 1], -coef * s[cc, ff, mu])
                add(row, nc + pidx[cc, 2 * mu], coef * s[cc, ff, mu])
    for B in range(nb):
        c, fi = topo.bnd_cell[B], topo.bnd_face[B]
        row = nc + nl + B
        add(row, row, 1.0)
        add(row, c, -1.0)
        coef = FACE_SIGN[fi] / (2.0 * s_n[c, fi])
        for mu in range(3):
            if mu == FACE_DIR[fi]:
                continue
            add(row, nc + pidx[c, 2 * mu + 1], -coef * s[c, fi, mu])
            add(row, nc + pidx[c, 2 * mu], coef * s[c, fi, mu])
    for c in range(nc):
        add(c, N - 1, geom.volume[c])
        add(N - 1, c, geom.volume[c])

    A = sp.csr_matrix(sp.coo_matrix((data, (rows, cols)), shape=(N, N)))
    x = spla.spsolve(A, rhs)
    p = x[:nc]
    return p - np.average(p, weights=geom.volume)


def all_wall_conditions(topo, velocity="no_slip", thermal="adiabatic",
                        T_wall=None):
    from dscflow.boundary import BoundaryCondition
    return {p: BoundaryCondition(velocity=velocity, thermal=thermal,
                                 T_wall=T_wall)
            for p in topo.patch_names}
