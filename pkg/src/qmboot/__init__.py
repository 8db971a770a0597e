"""Numerical bootstrap for anharmonic oscillators and double wells."""

from .bootstrap import DEFAULT_TOL, BasisSpec, BootstrapError, BootstrapMatrix, build_matrix, is_feasible
from .opalg import OperatorPoly, PolynomialPotential, derive_recursion, normal_order, reduce_mixed_moment
from .scan import FeasibilityGrid, Island, SearchBox, extract_islands, locate_islands, refine, scan, scan_energy
from .spectra import GapCurve, GapSample, SolveConfig, SpectrumPoint, gap, solve_point, susceptibility, sweep

__all__ = [
    "DEFAULT_TOL",
    "BasisSpec",
    "BootstrapError",
    "BootstrapMatrix",
    "FeasibilityGrid",
    "GapCurve",
    "GapSample",
    "Island",
    "OperatorPoly",
    "PolynomialPotential",
    "SearchBox",
    "SolveConfig",
    "SpectrumPoint",
    "build_matrix",
    "derive_recursion",
    "extract_islands",
    "gap",
    "is_feasible",
    "locate_islands",
    "normal_order",
    "reduce_mixed_moment",
    "refine",
    "scan",
    "scan_energy",
    "solve_point",
    "susceptibility",
    "sweep",
]
