"""Aggregation-diffusion predator-prey system in one dimension.

Finite-volume and particle solvers, Wasserstein diagnostics, constructive
multi-bump steady states and a scenario runner.
"""

from .density import Density1D, Grid1D, PseudoInverse, SpeciesPair
from .kernels import Kernel, KernelTriple

__all__ = ["Density1D", "Grid1D", "Kernel", "KernelTriple", "PseudoInverse", "SpeciesPair"]
__version__ = "0.1.0"
