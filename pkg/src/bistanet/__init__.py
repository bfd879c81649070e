"""Simulation, analysis and training of bistable flow networks."""

from .errors import *  # noqa: F401,F403
from .law import DEFAULT_LAW, BistableLaw, State
from .network import FlowNetwork, TubeGeometry, laplacian_from_conductance, project_laplacian

__version__ = "0.1.0"
