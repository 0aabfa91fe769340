"""Critical killed branching random walk: calibration, simulation and exact lattice oracles."""

__version__ = "0.1.0"
