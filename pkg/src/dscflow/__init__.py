"""Explicit two-step port/node solver for quasi-incompressible convection
on non-orthogonal hexahedral meshes."""

from . import boundary, boussinesq, dsc_state, errors, gradops, hexmesh, pressure, simcli
from .boundary import BoundaryApplier, BoundaryCondition
from .boussinesq import FluidProperties, Reflector, stable_timestep
from .dsc_state import FieldStore, ScatterDiag, TimeGrid, step_cycle
from .gradops import Connector
from .hexmesh import build_cell_geometry, build_topology, gen_annulus, gen_box
from .pressure import Cleaner, SorConfig
from .simcli import SimConfig, Simulation, load_config

__version__ = "0.1.0"
