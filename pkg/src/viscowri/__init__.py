"""Frequency-domain viscoacoustic wavefield-reconstruction inversion."""
from .admm import (BatchPlan, History, InversionOptions, IrWri, Penalties, check_stop,
                   run_inversion, tune_penalties)
from .grid import (Acquisition, BoxBounds, Circle, Grid2D, GridError, Rectangle, field_from_regions,
                   make_grid, slowness_sq_to_velocity, velocity_to_slowness_sq)
from .helmholtz import (Discretization, HelmholtzOperator, ResolutionError, SingularMatrixError,
                        SolverError, assemble, factorize, point_sources, sampling_operator)
from .physics import DEFAULT_LAW, AttenuationLaw, beta, complex_slowness_sq, rho
from .scenario import (Scenario, add_noise, build_inclusion_scenario, generate_data, misfit_scan,
                       synthesize_seismogram)
from .survey import SurveyData

__version__ = "0.1.0"

__all__ = [
    "Acquisition", "AttenuationLaw", "BatchPlan", "BoxBounds", "Circle", "DEFAULT_LAW",
    "Discretization", "Grid2D", "GridError", "HelmholtzOperator", "History", "InversionOptions",
    "IrWri", "Penalties", "Rectangle", "ResolutionError", "Scenario", "SingularMatrixError",
    "SolverError", "SurveyData", "add_noise", "assemble", "beta", "build_inclusion_scenario",
    "check_stop", "complex_slowness_sq", "factorize", "field_from_regions", "generate_data",
    "make_grid", "misfit_scan", "point_sources", "rho", "run_inversion", "sampling_operator",
    "slowness_sq_to_velocity", "synthesize_seismogram", "tune_penalties", "velocity_to_slowness_sq",
]
