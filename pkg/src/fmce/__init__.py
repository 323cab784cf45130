"""Loss-curve convergence analysis and feature-map convergence scoring."""

__version__ = "0.1.0"
