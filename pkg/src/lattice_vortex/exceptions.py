class LatticeVortexError(Exception):
    pass


class CompatibilityError(LatticeVortexError):
    """Vorticity with nonzero lattice mean: not a sum of closed loops."""


class InfeasibleConstraintError(LatticeVortexError):
    """The enstrophy bound cannot accommodate the requested energy."""


class DegenerateHistogramError(LatticeVortexError):
    """Demon energies carry no temperature information."""


class InsufficientSamplesError(LatticeVortexError):
    pass


class BracketError(LatticeVortexError):
    """No pair of tabulated records straddles the requested inverse temperature."""


class ConfigError(LatticeVortexError):
    """Invalid or inconsistent run configuration."""
