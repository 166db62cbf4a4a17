"""Reduced-precision neighbor search and SPH with cell-relative coordinates."""
from .fp16 import Binary16, Precision, round_to
from .grid import CellGrid, RelCoords, rebin, to_relative, update_relative
from .model import Domain, ParticleSystem, build_lattice, build_random_uniform
from .nnps import NeighborTable, all_list, cell_link_list, mismatch_report, rcll, spatial_sort
from .estimators import FixedRadiusNeighbors

__version__ = "0.1.0"

__all__ = [
    "Binary16",
    "Precision",
    "round_to",
    "CellGrid",
    "RelCoords",
    "rebin",
    "to_relative",
    "update_relative",
    "Domain",
    "ParticleSystem",
    "build_lattice",
    "build_random_uniform",
    "NeighborTable",
    "all_list",
    "cell_link_list",
    "rcll",
    "spatial_sort",
    "mismatch_report",
    "FixedRadiusNeighbors",
]
