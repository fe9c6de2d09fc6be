"""Exception types shared across the package."""


class NspError(Exception):
    """Base class for all package errors."""


class InvalidSpec(NspError):
    """Domain specification violates its invariants."""


class UnsupportedBoundary(NspError):
    """No analytic chart is available for the requested boundary."""


class DegenerateMap(NspError):
    """Collar map Jacobian fails to stay positive even at minimal depth."""


class OutOfCollar(NspError):
    """Field data does not live on the collar grid of the map."""


class Incompatible(NspError):
    """Neumann data violates the solvability condition."""


class NoConvergence(NspError):
    """Iterative linear solver hit its iteration cap."""


class NewtonDiverged(NspError):
    """Newton line search exhausted without residual decrease."""


class NonpositiveDensity(NspError):
    """Density iterate or state left the positive cone."""


class CFLViolation(NspError):
    """Time step exceeds the advective stability bound."""


class DegenerateState(NspError):
    """Ratio diagnostic requested on a state with vanishing denominator."""


class ResolutionTooLow(NspError):
    """Grid too coarse for the requested derivative order."""


class ChartCoverage(NspError):
    """A boundary cutoff leaks outside its chart set."""


class InsufficientData(NspError):
    """Not enough samples in the fit window."""


class NonpositiveEnergy(NspError):
    """Log-linear fit requested on a series with E <= 0 inside the window."""


class ConfigError(NspError):
    """Run configuration failed schema or invariant validation (exit code 2)."""


class RunError(NspError):
    """Experiment failed at runtime (exit code 1)."""
