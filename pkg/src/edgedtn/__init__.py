"""Scattering poles of perfectly conducting obstacles.

Lowest-order edge elements on a tetrahedral mesh of the region between the
obstacle and a sphere of radius R, a truncated spherical-harmonic DtN map on
that sphere, and a contour-integral indicator search for the eigenvalues of

    F(kappa) = S - kappa^2 M - i kappa E(kappa).
"""

__version__ = "0.1.0"

from .ball_oracle import OracleRoot, SearchRegion, convergence_orders, exact_ball_resonances
from .dtn import DtnHandle, TraceMatrix, materialize_dE, materialize_E
from .edge_fem import assemble, assemble_mass, assemble_stiffness, assemble_trace_matrix, build_dof_map
from .linalg import ResonanceOperator, build_F, factorize, solve
from .mesh import TetMesh, build_ball_shell, load_msh, validate
from .resonance_sim import SimParams, locate_resonances

__all__ = [
    "DtnHandle", "OracleRoot", "ResonanceOperator", "SearchRegion", "SimParams", "TetMesh", "TraceMatrix",
    "assemble", "assemble_mass", "assemble_stiffness", "assemble_trace_matrix", "build_F", "build_dof_map",
    "build_ball_shell", "convergence_orders", "exact_ball_resonances", "factorize", "load_msh",
    "locate_resonances", "materialize_E", "materialize_dE", "solve", "validate",
]
