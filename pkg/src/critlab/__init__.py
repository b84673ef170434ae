"""Generalized principal eigenvalues, criticality and path functionals for elliptic operators."""
__version__ = "0.1.0"
