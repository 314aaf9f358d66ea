"""junctionflow: equivariant multi-well gradient flow on ball lattices.

Reflection-group algebra, invariant multi-well potentials with a convex
monotonicity gauge, zero-flux lattice operators, constrained gradient
descent to junction-type critical points, decay/positivity diagnostics,
and a radial comparison-profile harness.
"""

from . import cli, comparison, coxeter, diagnostics, flow, grid, potential
from .kernels import BACKEND as kernel_backend

__version__ = "0.1.0"

__all__ = [
    "cli",
    "comparison",
    "coxeter",
    "diagnostics",
    "flow",
    "grid",
    "potential",
    "kernel_backend",
    "__version__",
]
