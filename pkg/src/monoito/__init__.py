"""Itô calculus for monotone-boundary test functions, optimal stopping and pathwise comparison."""

from __future__ import annotations

from .boundary import MonotoneSurface, RegionLabel, affine_surface, constant_surface, tabulated_surface
from .comparison import ComparisonInstance, Modulus, compare_paths, simulate_pair
from .ledger import ItoLedger, assemble_ensemble, assemble_ledger, residual_study
from .mollify import MollifierConfig, TestFunction, scan_L_bound
from .sde import BVDriverSpec, DiffusionSpec, simulate_ensemble, simulate_path
from .stopping import StoppingGrid, StoppingProblem, dynkin_check, extract_boundary, solve_value

__version__ = "0.1.0"

__all__ = [
    "BVDriverSpec", "ComparisonInstance", "DiffusionSpec", "ItoLedger", "Modulus", "MollifierConfig",
    "MonotoneSurface", "RegionLabel", "StoppingGrid", "StoppingProblem", "TestFunction", "affine_surface",
    "assemble_ensemble", "assemble_ledger", "compare_paths", "constant_surface", "dynkin_check",
    "extract_boundary", "residual_study", "scan_L_bound", "simulate_ensemble", "simulate_pair",
    "simulate_path", "solve_value", "tabulated_surface",
]
