"""Fingerprint simulation, dictionary matching and multi-resolution search."""
from .bloch import Simulator, simulate_fingerprint
from .dictionary import (Axis, Dictionary, ParameterGrid, brute_force_scan, brute_force_search,
                         grid_from_ranges)
from .fingerprint import TissueParams, cc
from .sequence import Schedule, build_schedule
from .zoom import QuantResult, ZoomConfig, quantify, quantify_slice, search_df, zoom_1d, zoom_2d

__version__ = "0.1.0"

__all__ = [
    "Axis", "Dictionary", "ParameterGrid", "QuantResult", "Schedule", "Simulator",
    "TissueParams", "ZoomConfig", "brute_force_scan", "brute_force_search", "build_schedule",
    "cc", "grid_from_ranges", "quantify", "quantify_slice", "search_df", "simulate_fingerprint",
    "zoom_1d", "zoom_2d",
]
