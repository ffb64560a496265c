"""Discretization, minimization and asymptotic checks for a 1D cholesteric Ginzburg-Landau energy."""

__version__ = "0.1.0"
