"""Upper bounds for uniform Lyapunov exponents and attractor dimension via
metric-weighted symbolic images of dynamical systems."""

__version__ = "0.1.0"
