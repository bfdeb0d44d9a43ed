"""Myocardial fiber tractography, representation learning, and clustering on
synthetic cardiac phantoms with analytic ground truth."""

__version__ = "0.1.0"
