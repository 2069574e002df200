"""Impact-aware nonprehensile catching: estimation, planning, hierarchical control and simulation."""

__version__ = "0.1.0"
