"""Hexahedral cell geometry and mesh topology.

Every cell is given by 8 vertices in the canonical binary-corner order:
vertex index = i + 2j + 4k for corner (i, j, k) of the reference cube.
From these the per-cell geometric quantities are derived:

* 12 edge vectors, grouped in direction triples (group mu holds the four
  edges spanning direction mu),
* 3 node vectors b[mu] (edge-group averages),
* 6 face vectors f[iota] (outward area vectors; even iota on the negative
  side of direction iota//2, odd iota on the positive side),
* cell volume via the divergence theorem over the 6 faces,
* the gamma matrix (inverse transpose of the node-vector matrix), and
* the s-coefficients s[iota][mu] = f[iota] . gamma[:, mu] used by all
  face-flux evaluations.

All geometry builders are vectorized over cells: vertices have shape
(ncells, 8, 3) and the derived arrays carry the leading cell axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateCell,
    InvalidParameter,
    NonConformingMesh,
    OrientationError,
    SingularCell,
)

# Edge nu runs from EDGE_VERTS[nu][0] to EDGE_VERTS[nu][1].  Within group mu
# the four edges sit at the corners of the transverse plane in cyclic order
# (0,0), (1,0), (1,1), (0,1) of directions (mu+1, mu+2) mod 3.
EDGE_VERTS = (
    (0, 1), (2, 3), (6, 7), (4, 5),   # group 0: x-spanning
    (0, 2), (4, 6), (5, 7), (1, 3),   # group 1: y-spanning
    (0, 4), (1, 5), (3, 7), (2, 6),   # group 2: z-spanning
)

# Vertices of face iota, used for centroids and topology matching.
FACE_VERTS = (
    (0, 2, 6, 4), (1, 3, 7, 5),       # -x, +x
    (0, 1, 5, 4), (2, 3, 7, 6),       # -y, +y
    (0, 1, 3, 2), (4, 5, 7, 6),       # -z, +z
)

# Direction spanned by face iota's normal channel: iota // 2.
FACE_DIR = np.array([0, 0, 1, 1, 2, 2])
# Sign (-1)**iota of the normal channel at face iota.
FACE_SIGN = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])


def _face_edge_table():
    """Edge indices and sign entering each face vector.

    f[iota] = sign/4 * (e[a1] + e[a2]) x (e[b1] + e[b2]) with the cyclic
    index arithmetic spelled out below (all indices mod 12).
    """
    table = []
    for i in range(6):
        s = (-1) ** i
        a1 = (8 + 2 * i) % 12
        a2 = (9 + 2 * (i + s)) % 12
        b1 = (4 + 2 * i) % 12
        b2 = (5 + 2 * i) % 12
        table.append((a1, a2, b1, b2, float(s)))
    return tuple(table)


FACE_EDGES = _face_edge_table()


@dataclass
class CellGeometry:
    """Derived geometric arrays for a batch of hexahedral cells."""

    vertices: np.ndarray        # (n, 8, 3) m
    edges: np.ndarray           # (n, 12, 3) m
    node_vectors: np.ndarray    # (n, 3, 3) m; [c, mu, :] is b[mu]
    face_vectors: np.ndarray    # (n, 6, 3) m^2, outward
    face_centroids: np.ndarray  # (n, 6, 3) m
    centers: np.ndarray         # (n, 3) m, mean of the 8 vertices
    volume: np.ndarray          # (n,) m^3
    gamma: np.ndarray           # (n, 3, 3); gamma[c, nu, mu]
    s_coeffs: np.ndarray        # (n, 6, 3); s[c, iota, mu]
    s_normal: np.ndarray = None  # (n, 6); s[iota][iota//2] per face

    def __post_init__(self):
        if self.s_normal is None:
            self.s_normal = self.s_coeffs[:, np.arange(6), FACE_DIR]

    @property
    def ncells(self) -> int:
        return self.vertices.shape[0]

    @property
    def cell_scale(self) -> np.ndarray:
        """Longest edge per cell; reference length for degeneracy checks."""
        return np.linalg.norm(self.edges, axis=2).max(axis=1)


def compute_edges(vertices):
    """12 edge vectors per cell from the canonical vertex ordering."""
    verts = np.asarray(vertices, dtype=float)
    squeeze = verts.ndim == 2
    if squeeze:
        verts = verts[None]
    ev = np.array(EDGE_VERTS)
    edges = verts[:, ev[:, 1], :] - verts[:, ev[:, 0], :]
    return edges[0] if squeeze else edges


def compute_node_vectors(edges):
    """b[mu] = mean of the four edges spanning direction mu."""
    e = np.asarray(edges, dtype=float)
    squeeze = e.ndim == 2
    if squeeze:
        e = e[None]
    b = e.reshape(e.shape[0], 3, 4, 3).mean(axis=2)
    return b[0] if squeeze else b


def compute_face_vectors(edges):
    """Outward face vectors from opposite-edge pair cross products."""
    e = np.asarray(edges, dtype=float)
    squeeze = e.ndim == 2
    if squeeze:
        e = e[None]
    f = np.empty((e.shape[0], 6, 3))
    for i, (a1, a2, b1, b2, sgn) in enumerate(FACE_EDGES):
        f[:, i, :] = (sgn / 4.0) * np.cross(e[:, a1] + e[:, a2], e[:, b1] + e[:, b2])
    return f[0] if squeeze else f


def compute_volume(face_vectors, face_centroids):
    """V = (1/3) sum_i centroid[i] . f[i] (divergence theorem)."""
    f = np.asarray(face_vectors, dtype=float)
    c = np.asarray(face_centroids, dtype=float)
    return np.einsum("...fd,...fd->...", c, f) / 3.0


def compute_gamma(node_vectors, det_eps=1e-12, scale=None):
    """gamma = inverse transpose of the node-vector matrix.

    ``node_vectors[..., mu, :]`` holds b[mu], i.e. the array is beta^T, so
    gamma is its plain inverse.  Raises SingularCell when |det beta| falls
    below det_eps * scale**3.
    """
    b = np.asarray(node_vectors, dtype=float)
    squeeze = b.ndim == 2
    if squeeze:
        b = b[None]
    det = np.linalg.det(b)
    if scale is None:
        scale = np.linalg.norm(b, axis=2).max(axis=1)
    bad = np.abs(det) < det_eps * scale**3
    if np.any(bad):
        ids = np.flatnonzero(bad)
        raise SingularCell(f"singular node-vector matrix in cells {ids[:10].tolist()}")
    gamma = np.linalg.inv(b)
    return gamma[0] if squeeze else gamma


def compute_s_coeffs(face_vectors, gamma):
    """s[iota][mu] = sum_nu f[iota][nu] * gamma[nu][mu]."""
    f = np.asarray(face_vectors, dtype=float)
    g = np.asarray(gamma, dtype=float)
    if f.ndim == 2:
        return f @ g
    return np.einsum("cfn,cnm->cfm", f, g)


def build_cell_geometry(vertices, det_eps=1e-12, vol_eps=1e-14, validate=True):
    """Build CellGeometry for vertices of shape (ncells, 8, 3).

    Degeneracy thresholds scale with the per-cell longest edge:
    SingularCell when |det beta| < det_eps * scale^3 and DegenerateCell when
    V <= vol_eps * scale^3.  OrientationError flags inward faces.
    """
    verts = np.asarray(vertices, dtype=float)
    if verts.ndim == 2:
        verts = verts[None]
    if verts.shape[1:] != (8, 3):
        raise InvalidParameter(f"vertices must have shape (n, 8, 3), got {verts.shape}")
    if not np.all(np.isfinite(verts)):
        raise InvalidParameter("vertex coordinates must be finite")

    edges = compute_edges(verts)
    b = compute_node_vectors(edges)
    f = compute_face_vectors(edges)
    face_c = verts[:, FACE_VERTS, :].mean(axis=2)
    centers = verts.mean(axis=1)
    volume = compute_volume(f, face_c)
    scale = np.linalg.norm(edges, axis=2).max(axis=1)

    if validate:
        outward = np.einsum("cfd,cfd->cf", f, face_c - centers[:, None, :])
        if np.any(outward <= 0.0):
            ids = np.flatnonzero(np.any(outward <= 0.0, axis=1))
            raise OrientationError(f"inward face vectors in cells {ids[:10].tolist()}")
        small = volume <= vol_eps * scale**3
        if np.any(small):
            ids = np.flatnonzero(small)
            raise DegenerateCell(f"near-zero volume in cells {ids[:10].tolist()}")

    gamma = compute_gamma(b, det_eps=det_eps, scale=scale)
    s = compute_s_coeffs(f, gamma)
    return CellGeometry(
        vertices=verts, edges=edges, node_vectors=b, face_vectors=f,
        face_centroids=face_c, centers=centers, volume=volume,
        gamma=gamma, s_coeffs=s,
    )


@dataclass
class MeshTopology:
    """Vertex table, cells, interior face links, and boundary patches.

    Immutable after construction; shared read-only by all solver phases.
    """

    vertices: np.ndarray      # (nv, 3)
    cells: np.ndarray         # (nc, 8) int
    link_cell_a: np.ndarray   # (nl,) int
    link_face_a: np.ndarray   # (nl,) int
    link_cell_b: np.ndarray   # (nl,) int
    link_face_b: np.ndarray   # (nl,) int
    bnd_cell: np.ndarray      # (nb,) int
    bnd_face: np.ndarray      # (nb,) int
    bnd_patch: np.ndarray     # (nb,) int, index into patch_names
    patch_names: list[str] = field(default_factory=list)

    @property
    def ncells(self) -> int:
        return self.cells.shape[0]

    @property
    def nlinks(self) -> int:
        return self.link_cell_a.shape[0]

    @property
    def nboundary(self) -> int:
        return self.bnd_cell.shape[0]

    def patch_faces(self, name):
        """(cells, faces) arrays of the boundary faces in patch ``name``."""
        if name not in self.patch_names:
            raise KeyError(name)
        pid = self.patch_names.index(name)
        sel = self.bnd_patch == pid
        return self.bnd_cell[sel], self.bnd_face[sel]

    def neighbor_table(self):
        """(nc, 6) neighbor cell ids, -1 at boundary faces."""
        nbr = np.full((self.ncells, 6), -1, dtype=np.int64)
        nbr[self.link_cell_a, self.link_face_a] = self.link_cell_b
        nbr[self.link_cell_b, self.link_face_b] = self.link_cell_a
        return nbr

    def link_index_table(self):
        """(nc, 6) row into the link arrays, -1 at boundary faces."""
        idx = np.full((self.ncells, 6), -1, dtype=np.int64)
        rows = np.arange(self.nlinks)
        idx[self.link_cell_a, self.link_face_a] = rows
        idx[self.link_cell_b, self.link_face_b] = rows
        return idx


def build_topology(cells, vertices, patch_assign=None, default_patch="boundary"):
    """Match shared quadrilateral faces into interior links.

    ``patch_assign`` maps (cell, face) -> patch name for boundary faces;
    unassigned boundary faces fall into ``default_patch``.  A face key shared
    by more than two cells raises NonConformingMesh.
    """
    cells = np.asarray(cells, dtype=np.int64)
    vertices = np.asarray(vertices, dtype=float)
    nc = cells.shape[0]

    owners: dict[tuple, list[tuple[int, int]]] = {}
    for c in range(nc):
        cv = cells[c]
        for fi, fv in enumerate(FACE_VERTS):
            key = tuple(sorted(int(cv[v]) for v in fv))
            owners.setdefault(key, []).append((c, fi))

    la, fa, lb, fb = [], [], [], []
    bc, bf, bp = [], [], []
    patch_names: list[str] = []

    def patch_id(name):
        if name not in patch_names:
            patch_names.append(name)
        return patch_names.index(name)

    for key, lst in owners.items():
        if len(lst) == 1:
            (c, fi) = lst[0]
            name = default_patch
            if patch_assign is not None:
                name = patch_assign.get((c, fi), default_patch)
            bc.append(c)
            bf.append(fi)
            bp.append(patch_id(name))
        elif len(lst) == 2:
            (ca, fia), (cb, fib) = lst
            la.append(ca)
            fa.append(fia)
            lb.append(cb)
            fb.append(fib)
        else:
            raise NonConformingMesh(f"face {key} shared by {len(lst)} cells")

    order = np.lexsort((fa, la)) if la else np.array([], dtype=np.int64)
    border = np.lexsort((bf, bc)) if bc else np.array([], dtype=np.int64)
    return MeshTopology(
        vertices=vertices,
        cells=cells,
        link_cell_a=np.asarray(la, dtype=np.int64)[order],
        link_face_a=np.asarray(fa, dtype=np.int64)[order],
        link_cell_b=np.asarray(lb, dtype=np.int64)[order],
        link_face_b=np.asarray(fb, dtype=np.int64)[order],
        bnd_cell=np.asarray(bc, dtype=np.int64)[border],
        bnd_face=np.asarray(bf, dtype=np.int64)[border],
        bnd_patch=np.asarray(bp, dtype=np.int64)[border],
        patch_names=patch_names,
    )


def cell_vertices(topology):
    """(nc, 8, 3) vertex coordinates gathered per cell."""
    return topology.vertices[topology.cells]


def reassign_patches(topology, selectors):
    """Carve new boundary patches out of the existing ones.

    ``selectors`` maps patch name -> selector dict.  Kinds: "box" with
    ``min``/``max`` corner lists (face centroid inside the box), "radial"
    with ``r_min``/``r_max`` (cylindrical radius about the z axis), and
    "faces" with an explicit ``list`` of [cell, face] pairs.  Faces matched
    by more than one selector raise InvalidParameter; unmatched faces keep
    their current patch.  Returns a new MeshTopology.
    """
    bc, bf = topology.bnd_cell, topology.bnd_face
    verts = topology.vertices[topology.cells]
    centroids = verts[:, FACE_VERTS, :].mean(axis=2)[bc, bf]
    names = list(topology.patch_names)
    patch = topology.bnd_patch.copy()
    claimed = np.zeros(len(bc), dtype=bool)
    for name, sel in selectors.items():
        kind = sel.get("kind")
        if kind == "box":
            lo = np.asarray(sel["min"], dtype=float)
            hi = np.asarray(sel["max"], dtype=float)
            hit = np.all((centroids >= lo) & (centroids <= hi), axis=1)
        elif kind == "radial":
            r = np.hypot(centroids[:, 0], centroids[:, 1])
            hit = (r >= float(sel["r_min"])) & (r <= float(sel["r_max"]))
        elif kind == "faces":
            pairs = {(int(c), int(f)) for c, f in sel["list"]}
            hit = np.array([(int(c), int(f)) in pairs
                            for c, f in zip(bc, bf)])
        else:
            raise InvalidParameter(f"unknown patch selector kind {kind!r}")
        if not hit.any():
            raise InvalidParameter(f"patch selector {name!r} matches no "
                                   f"boundary face")
        if (hit & claimed).any():
            raise InvalidParameter(f"patch selector {name!r} overlaps an "
                                   f"earlier selector")
        claimed |= hit
        if name not in names:
            names.append(name)
        patch[hit] = names.index(name)
    kept = np.unique(patch)
    remap = {old: new for new, old in enumerate(kept)}
    return MeshTopology(
        vertices=topology.vertices, cells=topology.cells,
        link_cell_a=topology.link_cell_a, link_face_a=topology.link_face_a,
        link_cell_b=topology.link_cell_b, link_face_b=topology.link_face_b,
        bnd_cell=bc, bnd_face=bf,
        bnd_patch=np.array([remap[p] for p in patch], dtype=np.int64),
        patch_names=[names[old] for old in kept])


def gen_box(nx, ny, nz, extents=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    """Structured box mesh with patches xmin/xmax/ymin/ymax/zmin/zmax."""
    if min(nx, ny, nz) < 1:
        raise InvalidParameter("cell counts must be >= 1")
    ex = np.asarray(extents, dtype=float)
    if ex.shape != (3,) or np.any(ex <= 0):
        raise InvalidParameter("extents must be 3 positive lengths")
    xs = origin[0] + np.linspace(0.0, ex[0], nx + 1)
    ys = origin[1] + np.linspace(0.0, ex[1], ny + 1)
    zs = origin[2] + np.linspace(0.0, ex[2], nz + 1)

    def vid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    verts = np.stack(
        [X.transpose(2, 1, 0).ravel(), Y.transpose(2, 1, 0).ravel(),
         Z.transpose(2, 1, 0).ravel()], axis=1)

    cells = []
    patch = {}
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                c = len(cells)
                cells.append([vid(i + a, j + b, k + d)
                              for d in (0, 1) for b in (0, 1) for a in (0, 1)])
                if i == 0:
                    patch[(c, 0)] = "xmin"
                if i == nx - 1:
                    patch[(c, 1)] = "xmax"
                if j == 0:
                    patch[(c, 2)] = "ymin"
                if j == ny - 1:
                    patch[(c, 3)] = "ymax"
                if k == 0:
                    patch[(c, 4)] = "zmin"
                if k == nz - 1:
                    patch[(c, 5)] = "zmax"
    return build_topology(np.asarray(cells), verts, patch)


def gen_annulus(n_r, n_t, n_z, r_in, r_out, length):
    """Annular mesh of radial-azimuthal wedge cells around the z axis.

    Cells are indexed id = i_r + n_r * (i_t + n_t * i_z); local direction 0
    is radial, 1 azimuthal, 2 axial.  The azimuthal ring starts at
    theta = -pi/2 so the cell layout is mirror symmetric about the x = 0
    plane for even n_t.  Patches: inner, outer, zmin, zmax.
    """
    if min(n_r, n_t, n_z) < 1:
        raise InvalidParameter("cell counts must be >= 1")
    if n_t < 3:
        raise InvalidParameter("n_t must be >= 3")
    if not (0.0 < r_in < r_out):
        raise InvalidParameter("need 0 < r_in < r_out")
    if length <= 0:
        raise InvalidParameter("length must be positive")

    radii = np.linspace(r_in, r_out, n_r + 1)
    thetas = -np.pi / 2.0 + 2.0 * np.pi * np.arange(n_t) / n_t
    zs = np.linspace(0.0, length, n_z + 1)

    def vid(i, j, k):
        return i + (n_r + 1) * ((j % n_t) + n_t * k)

    verts = np.empty(((n_r + 1) * n_t * (n_z + 1), 3))
    for k in range(n_z + 1):
        for j in range(n_t):
            for i in range(n_r + 1):
                verts[vid(i, j, k)] = (radii[i] * np.cos(thetas[j]),
                                       radii[i] * np.sin(thetas[j]), zs[k])

    cells = []
    patch = {}
    for k in range(n_z):
        for j in range(n_t):
            for i in range(n_r):
                c = len(cells)
                cells.append([vid(i + a, j + b, k + d)
                              for d in (0, 1) for b in (0, 1) for a in (0, 1)])
                if i == 0:
                    patch[(c, 0)] = "inner"
                if i == n_r - 1:
                    patch[(c, 1)] = "outer"
                if k == 0:
                    patch[(c, 4)] = "zmin"
                if k == n_z - 1:
                    patch[(c, 5)] = "zmax"
    return build_topology(np.asarray(cells), verts, patch)


def annulus_mirror_pairs(n_r, n_t, n_z):
    """Cell index pairs mapped onto each other by the x -> -x mirror."""
    pairs = []
    for k in range(n_z):
        for j in range(n_t):
            jm = (n_t - 1 - j) % n_t
            for i in range(n_r):
                a = i + n_r * (j + n_t * k)
                b = i + n_r * (jm + n_t * k)
                if a <= b:
                    pairs.append((a, b))
    return pairs


# --- plain-text mesh interchange -------------------------------------------

def save_mesh(topology, path):
    """Write the plain-text mesh format (see module docs / README)."""
    lines = ["hexmesh 1"]
    lines.append(str(topology.vertices.shape[0]))
    for v in topology.vertices:
        lines.append("%.17g %.17g %.17g" % tuple(v))
    lines.append(str(topology.ncells))
    for c in topology.cells:
        lines.append(" ".join(str(int(x)) for x in c))
    lines.append(str(len(topology.patch_names)))
    for pid, name in enumerate(topology.patch_names):
        sel = topology.bnd_patch == pid
        lines.append(f"{name} {int(sel.sum())}")
        for c, f in zip(topology.bnd_cell[sel], topology.bnd_face[sel]):
            lines.append(f"{int(c)} {int(f)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path):
    """Read the plain-text mesh format written by save_mesh."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    it = iter(t for t in tokens if t.strip())
    header = next(it).split()
    if header[0] != "hexmesh":
        raise InvalidParameter(f"{path}: not a hexmesh file")
    nv = int(next(it))
    verts = np.array([[float(x) for x in next(it).split()] for _ in range(nv)])
    nc = int(next(it))
    cells = np.array([[int(x) for x in next(it).split()] for _ in range(nc)],
                     dtype=np.int64)
    if cells.size and (cells.min() < 0 or cells.max() >= nv):
        raise InvalidParameter(f"{path}: cell vertex index out of range")
    patch = {}
    npatch = int(next(it))
    for _ in range(npatch):
        name, count = next(it).split()
        for _ in range(int(count)):
            c, f = (int(x) for x in next(it).split())
            patch[(c, f)] = name
    return build_topology(cells, verts, patch)


def check_mesh(topology, det_eps=1e-12, vol_eps=1e-14):
    """Validate geometry and return a report dict (used by `mesh check`)."""
    geom = build_cell_geometry(cell_vertices(topology), det_eps=det_eps,
                               vol_eps=vol_eps)
    closure = np.abs(geom.face_vectors.sum(axis=1)).max(axis=1)
    area = np.linalg.norm(geom.face_vectors, axis=2).max(axis=1)
    gtb = np.einsum("cki,ckj->cij", geom.gamma, geom.node_vectors.transpose(0, 2, 1))
    eye_err = np.abs(gtb - np.eye(3)).max()
    return {
        "cells": topology.ncells,
        "vertices": topology.vertices.shape[0],
        "interior_links": topology.nlinks,
        "boundary_faces": topology.nboundary,
        "patches": list(topology.patch_names),
        "volume_total": float(geom.volume.sum()),
        "volume_min": float(geom.volume.min()),
        "closure_max_rel": float((closure / area).max()),
        "gamma_identity_err": float(eye_err),
    }
