"""kamflow: numerical conjugacy engine for perturbed constant flows on the n-torus.

Given a diophantine frequency vector and a small perturbation of the constant
field, the package constructs the modifying constant term and the coordinate
transform straightening the modified flow, verifying every norm inequality the
construction relies on at each step.
"""

from .diophantine import FrequencyData
from .fourier import (
    FourierSeries,
    JacobianField,
    TorusMapField,
    TorusTransform,
    compose,
    multiply,
    project,
)
from .scheme import RunResult, Schedule, build_schedule, generate_perturbation, run
from .step import StepInput, solve_step
from .verify import conjugacy_residual, lemma_audit, orbit_conjugacy_check

__version__ = "0.1.0"

__all__ = [
    "FourierSeries",
    "TorusMapField",
    "JacobianField",
    "TorusTransform",
    "FrequencyData",
    "Schedule",
    "RunResult",
    "StepInput",
    "build_schedule",
    "compose",
    "conjugacy_residual",
    "generate_perturbation",
    "lemma_audit",
    "multiply",
    "orbit_conjugacy_check",
    "project",
    "run",
    "solve_step",
    "__version__",
]
