"""Graph classification with Gaussian-induced convolution and coarsening."""

__version__ = "0.1.0"
