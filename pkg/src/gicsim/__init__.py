"""SE(3)-invariant impedance control, simulation, and learning toolkit."""

__version__ = "0.1.0"
