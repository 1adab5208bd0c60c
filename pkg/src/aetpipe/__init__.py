"""Acousto-electric tomography on the unit disk.

FEM forward modeling of interior power densities, Karhunen-Loeve priors,
L1/L2 likelihoods with adaptive pCN sampling, and the analytical two-step
reconstruction, plus a configuration-driven batch CLI.
"""

__version__ = "0.1.0"
