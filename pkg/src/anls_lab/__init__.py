"""Plateau diagnostics and Active Neuron Least Squares for univariate two-layer ReLU networks."""

__version__ = "0.1.0"
