"""Mean-field games with focusing coupling on the flat torus.

Solvers (a short-time fixed-point iteration and a convexified energy
minimisation), weak-solution certificates, a two-equilibria experiment
and a-priori estimate monitors, all on a spectral space-time grid.
"""

from .diagnostics import ExponentTable, check_gn2, check_lower_bound, exponents
from .fokker_planck import FlowPair, constraint_residual, fp_solve, kinetic_energy
from .grid import Grid, read_field, write_field
from .hjb import hjb_solve, hjb_subsolution_residual
from .model import ModelSpec, Regime, classify_regime
from .nonuniqueness import CompetitorSpec, build_competitor, check_nonucond, nonuniqueness_experiment
from .picard import picard_solve, psi_map
from .problem import BlowUpError, Problem, cosine_bump, uniform
from .variational import Certificate, energy, minimize_convex, minimize_energy, recover_and_certify

__version__ = "0.1.0"

__all__ = [
    "Grid", "read_field", "write_field",
    "ModelSpec", "Regime", "classify_regime",
    "Problem", "BlowUpError", "uniform", "cosine_bump",
    "FlowPair", "fp_solve", "kinetic_energy", "constraint_residual",
    "hjb_solve", "hjb_subsolution_residual",
    "picard_solve", "psi_map",
    "energy", "minimize_convex", "minimize_energy", "recover_and_certify", "Certificate",
    "CompetitorSpec", "build_competitor", "check_nonucond", "nonuniqueness_experiment",
    "ExponentTable", "exponents", "check_gn2", "check_lower_bound",
]
