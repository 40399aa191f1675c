"""Leader-follower density control with role plasticity."""

__version__ = "0.1.0"
