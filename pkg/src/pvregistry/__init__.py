"""Address-level PV registry from probability grids and 3D rooftops, with official-registry reconciliation."""

from .buildings import Address, BuildingDataset, RooftopSurface, parse_buildings, spatial_query
from .raster import ProbabilityMap, BinaryMask, PvPolygon, parse_grid, threshold, vectorize
from .registry import Constants, PvInstance, RegistryEntry, aggregate, assign
from .reconcile import OfficialEntry, ReconciliationReport, build_report, parse_official

__version__ = "0.1.0"

__all__ = [
    "Address", "BuildingDataset", "RooftopSurface", "parse_buildings", "spatial_query",
    "ProbabilityMap", "BinaryMask", "PvPolygon", "parse_grid", "threshold", "vectorize",
    "Constants", "PvInstance", "RegistryEntry", "aggregate", "assign",
    "OfficialEntry", "ReconciliationReport", "build_report", "parse_official",
]
