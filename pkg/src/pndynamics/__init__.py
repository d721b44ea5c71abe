"""Multi-well nonlocal Allen-Cahn dynamics: layer profiles, particle
systems, phase-field simulation and checks of the particle limit."""

__version__ = "0.1.0"
