class ConfigurationError(ValueError):
    """Invalid model, simulation, or experiment configuration."""


class HorizonCapError(RuntimeError):
    """A sampled infectious period exceeded the configured hard cap."""


class ThinningBoundError(RuntimeError):
    """A thinning acceptance ratio exceeded one (the rate bound is wrong)."""


class NumericalError(RuntimeError):
    """Quadrature or linear-algebra failure (non-PSD block, singular step)."""


class GridMismatchError(ValueError):
    """Two path objects live on different time grids."""
