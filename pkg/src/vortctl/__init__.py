"""Vorticity Navier-Stokes on triangulated polygons, stabilized by oblique-projection feedback.

Modules
-------
mesh        conforming support-aligned triangulations and red refinement
fem         P1 mass/stiffness assembly, Dirichlet elimination, SPD solves
vorticity   stream function, velocity and skew-symmetric convection
actuators   rectangle and triangle actuator families
control     oblique projections, feedback operator, Poincare-like constant
sim         IMEX time marching of target / controlled / observer pairs
io, cli     configuration files, artifact writers and the ``vortctl`` command
"""
from .actuators import (ActuatorFamily, ActuatorLayout, build_rectangle_family, build_triangle_family,
                        gram_diag_check, rectangle_layout, triangle_layout)
from .control import FeedbackOperator, ObliqueProjector, monotonicity_certificate, xi_estimate
from .fem import FEMSpace, apply_dirichlet, assemble_mass, assemble_stiffness, solve_spd
from .mesh import DomainSpec, Mesh, build_mesh, refine, refine_n
from .sim import SimConfig, SimRun, Simulator, estimate_decay, run_pair
from .vorticity import Vorticity

__all__ = [
    "ActuatorFamily", "ActuatorLayout", "build_rectangle_family", "build_triangle_family", "gram_diag_check",
    "rectangle_layout", "triangle_layout", "FeedbackOperator", "ObliqueProjector", "monotonicity_certificate",
    "xi_estimate", "FEMSpace", "apply_dirichlet", "assemble_mass", "assemble_stiffness", "solve_spd",
    "DomainSpec", "Mesh", "build_mesh", "refine", "refine_n", "SimConfig", "SimRun", "Simulator",
    "estimate_decay", "run_pair", "Vorticity",
]
__version__ = "0.1.0"
