"""Numerical laboratory for linear Schrodinger equations with complex potentials.

Spectral split-step solvers, the pseudoconformal (Appell) change of
variables, Carleman weight machinery and observability diagnostics.
"""

__version__ = "0.1.0"
