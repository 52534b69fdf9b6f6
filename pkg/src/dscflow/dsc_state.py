"""Time-staggered field storage, the two-step cycle, and the scattering
decomposition diagnostic.

Node values live at half-integer multiples of the timestep tau, port values
at integer multiples.  Each cycle advances the state by one tau:

    connection -> divergence cleaning -> boundary overwrite ->
    (optional smoothing) -> reflection

Port and node arrays each keep a two-level history ring (current and one
step back), which is all the update instructions ever reach for.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteState

FIELD_NAMES = ("T", "u", "p")

_CKPT_MAGIC = b"DSCFLOW1"
_CKPT_VERSION = 1


@dataclass
class TimeGrid:
    """Step counter and timestep; ports sit at ``time``, nodes tau/2 later."""

    tau: float
    step: int = 0
    time: float = 0.0

    def advance(self):
        self.step += 1
        self.time += self.tau

    @property
    def node_time(self) -> float:
        return self.time + 0.5 * self.tau


class FieldStore:
    """Nodal and port values of T (K), u (m/s) and p (Pa) with history.

    node[name]  : (nc, *comp) values at the current node time
    port[name]  : (nc, 6, *comp) values at the current port time
    *_prev      : the same one full step back (tau for ports, tau for nodes)

    Interior ports are duplicated per cell side; the connection step writes
    the shared value identically to both sides.
    """

    def __init__(self, ncells, T0=0.0):
        self.ncells = ncells
        shapes = {"T": (), "u": (3,), "p": ()}
        self.names = FIELD_NAMES
        self.node = {}
        self.node_prev = {}
        self.port = {}
        self.port_prev = {}
        for name, comp in shapes.items():
            fill = T0 if name == "T" else 0.0
            self.node[name] = np.full((ncells,) + comp, fill, dtype=float)
            self.node_prev[name] = np.full((ncells,) + comp, fill, dtype=float)
            self.port[name] = np.full((ncells, 6) + comp, fill, dtype=float)
            self.port_prev[name] = np.full((ncells, 6) + comp, fill, dtype=float)

    def rotate_ports(self):
        for name in self.names:
            np.copyto(self.port_prev[name], self.port[name])

    def rotate_nodes(self):
        for name in self.names:
            np.copyto(self.node_prev[name], self.node[name])

    def copy(self):
        other = FieldStore(self.ncells)
        for name in self.names:
            np.copyto(other.node[name], self.node[name])
            np.copyto(other.node_prev[name], self.node_prev[name])
            np.copyto(other.port[name], self.port[name])
            np.copyto(other.port_prev[name], self.port_prev[name])
        return other

    def check_finite(self, where, step):
        for group, label in ((self.node, "node"), (self.port, "port")):
            for name, arr in group.items():
                if not np.all(np.isfinite(arr)):
                    raise NonFiniteState(
                        f"non-finite {label} {name} after {where} at step {step}")

    def _array_sequence(self):
        for group in (self.node, self.node_prev, self.port, self.port_prev):
            for name in self.names:
                yield group[name]


def write_checkpoint(path, fields, grid):
    """Binary checkpoint: magic, version u32, ncells u32, step u64,
    time f64, tau f64, then all field arrays as little-endian f64 in the
    fixed order node/node_prev/port/port_prev x (T, u, p)."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<IIQdd", _CKPT_VERSION, fields.ncells,
                             grid.step, grid.time, grid.tau))
        for arr in fields._array_sequence():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_checkpoint(path):
    """Read a checkpoint; returns (FieldStore, TimeGrid)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, ncells, step, time, tau = struct.unpack("<IIQdd", fh.read(32))
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        fields = FieldStore(ncells)
        grid = TimeGrid(tau=tau, step=step, time=time)
        for arr in fields._array_sequence():
            buf = fh.read(arr.size * 8)
            arr[...] = np.frombuffer(buf, dtype="<f8").reshape(arr.shape)
    return fields, grid


def node_boundary_map(pair):
    """The channel involution: swap the port and nodal-image components."""
    a, b = pair
    return (b, a)


class ScatterDiag:
    """Running incident/outgoing decomposition of the port/node process.

    Per channel (cell, face) and field, maintains

        z_in(t)        = z_port(t)       - z_out(t - tau/2)
        z_out(t+tau/2) = z_node(t+tau/2) - z_in(t)

    with zero history before the start.  The reconstruction identities are
    rearrangements of these definitions; ``max_reconstruction_error`` tracks
    their floating-point defect over the run.
    """

    def __init__(self, ncells):
        shapes = {"T": (ncells, 6), "u": (ncells, 6, 3), "p": (ncells, 6)}
        self.z_in = {k: np.zeros(s) for k, s in shapes.items()}
        self.z_out = {k: np.zeros(s) for k, s in shapes.items()}
        self.max_reconstruction_error = 0.0
        self._scale = 1.0

    def _track(self, err, scale):
        self.max_reconstruction_error = max(self.max_reconstruction_error, err)
        self._scale = max(self._scale, scale)

    def on_ports(self, port_vals):
        """Fold in the port state at time t (after all port-phase updates)."""
        for name, zp in port_vals.items():
            z_in = zp - self.z_out[name]
            recon = self.z_out[name] + z_in
            self._track(np.abs(recon - zp).max(), np.abs(zp).max())
            self.z_in[name] = z_in

    def on_nodes(self, node_vals):
        """Fold in the node state at time t + tau/2 (after reflection)."""
        for name, zn in node_vals.items():
            znb = np.broadcast_to(zn[:, None, ...], self.z_in[name].shape)
            z_out = znb - self.z_in[name]
            recon = self.z_in[name] + z_out
            self._track(np.abs(recon - znb).max(), np.abs(znb).max())
            self.z_out[name] = z_out

    def attach(self, fields):
        """Seed with the initial port (t=0) and node (t=tau/2) states."""
        self.on_ports({k: fields.port[k] for k in fields.names})
        self.on_nodes({k: fields.node[k] for k in fields.names})

    def hooks(self, fields):
        """Cycle hooks feeding the recursion from the live field store."""
        return {
            "after_boundary": lambda f, g: self.on_ports(
                {k: f.port[k] for k in f.names}),
            "after_reflection": lambda f, g: self.on_nodes(
                {k: f.node[k] for k in f.names}),
        }


def decompose_scattering(port_seq, node_seq):
    """Offline decomposition of recorded scalar/array sequences.

    ``port_seq[m]`` is the port state at t = m*tau and ``node_seq[m]`` the
    node state at t = (m + 1/2)*tau.  Returns (z_in_seq, z_out_seq) of the
    same lengths, with zero history before the start.
    """
    z_in_seq, z_out_seq = [], []
    z_out_prev = np.zeros_like(np.asarray(port_seq[0], dtype=float))
    for zp, zn in zip(port_seq, node_seq):
        zp = np.asarray(zp, dtype=float)
        zn = np.asarray(zn, dtype=float)
        z_in = zp - z_out_prev
        z_out = zn - z_in
        z_in_seq.append(z_in)
        z_out_seq.append(z_out)
        z_out_prev = z_out
    return z_in_seq, z_out_seq


def step_cycle(grid, fields, *, connection, reflection, cleaning=None,
               boundary=None, smoothing=None, hooks=None):
    """Advance the state by one timestep.

    Phase order: connection (ports to t+tau), divergence cleaning, boundary
    overwrite of boundary ports, optional smoothing of the nodal velocity,
    reflection (nodes to t+3tau/2).  History rings rotate as each half is
    written.  Raises NonFiniteState if any field goes NaN/Inf.
    """
    hooks = hooks or {}

    def fire(name):
        fn = hooks.get(name)
        if fn is not None:
            fn(fields, grid)

    fields.rotate_ports()
    connection(fields)
    fields.check_finite("connection", grid.step)
    fire("after_connection")

    report = None
    if cleaning is not None:
        report = cleaning(fields)
        fields.check_finite("cleaning", grid.step)
        fire("after_cleaning")

    if boundary is not None:
        boundary(fields)
        fields.check_finite("boundary", grid.step)
    fire("after_boundary")

    if smoothing is not None and smoothing.due(grid.step):
        smoothing(fields)

    fields.rotate_nodes()
    reflection(fields)
    fields.check_finite("reflection", grid.step)
    fire("after_reflection")

    grid.advance()
    return report
