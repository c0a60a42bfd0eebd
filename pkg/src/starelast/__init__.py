"""Semi-analytic method-of-lines solver for 2D linear elasticity on composite
star-shaped decompositions with multiple stress singularities, and a
TV-regularized inverse solver for piecewise-constant Lame coefficients."""

from .geometry import (BoundarySegment, ConfigurationError, DecomposedDomain,
                       GeometryError, InterfaceSpec, MaterialSector, Point2,
                       SubdomainSpec, build_angular_mesh, domain_from_json,
                       match_interfaces, to_cartesian)
from .assembly import AssemblyError, SemiDiscreteSystem, assemble
from .modal import ModalBasis, SpectralError, build_basis, gamma3_of
from .forward import (BoundaryData, ForwardSolution, SolverError,
                      convergence_study, interface_residuals, norms,
                      solve_forward)
from .inverse import (AdamConfig, InverseProblem, InversionResult,
                      Measurement, ParamField, eval_objective, grad_objective,
                      l1_errors, run_inversion, synthesize_measurement)

__version__ = "0.1.0"

__all__ = [
    "BoundarySegment", "ConfigurationError", "DecomposedDomain",
    "GeometryError", "InterfaceSpec", "MaterialSector", "Point2",
    "SubdomainSpec", "build_angular_mesh", "domain_from_json",
    "match_interfaces", "to_cartesian",
    "AssemblyError", "SemiDiscreteSystem", "assemble",
    "ModalBasis", "SpectralError", "build_basis", "gamma3_of",
    "BoundaryData", "ForwardSolution", "SolverError", "convergence_study",
    "interface_residuals", "norms", "solve_forward",
    "AdamConfig", "InverseProblem", "InversionResult", "Measurement",
    "ParamField", "eval_objective", "grad_objective", "l1_errors",
    "run_inversion", "synthesize_measurement",
    "__version__",
]
