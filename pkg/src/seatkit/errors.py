"""Exception hierarchy for the seatkit library.

Errors are grouped by the subsystem that raises them; all inherit from
SeatkitError so callers can catch the whole family.
"""


class SeatkitError(Exception):
    """Base class for all seatkit errors."""


class NoConvergence(SeatkitError):
    """A root finder failed to converge (saddle search, level-set solve)."""


class DegenerateSaddle(SeatkitError):
    """The located critical point is not a non-degenerate saddle."""


class ChartError(SeatkitError):
    """Base class for energy-angle chart failures."""


class OutsideChart(ChartError):
    """Point is outside the charted outer domain (h <= 0 or h > h_max)."""


class NoIntersection(ChartError):
    """The bisector ray does not meet the requested level set in range."""


class EventNotFound(ChartError):
    """An orbit failed to return to the transversal within the time budget."""


class EnergyDrift(ChartError):
    """Energy conservation along an unperturbed orbit exceeded tolerance."""


class StepUnderflow(ChartError):
    """A finite-difference step cannot be taken without leaving the chart."""


class LoopNotClosed(SeatkitError):
    """A separatrix branch did not re-approach the saddle (no figure eight)."""


class NonPositiveTheta(SeatkitError):
    """A computed Theta_i is not positive; the standing assumption fails."""


class ThetaSignError(SeatkitError):
    """The averaged energy flow is not directed toward the separatrix."""


class CutoffTooLarge(SeatkitError):
    """The integration cutoff h_cut is not below the initial energy."""


class StepFailure(SeatkitError):
    """The perturbed-system integrator failed to advance."""


class EventMissed(SeatkitError):
    """Event bracketing was lost during perturbed-system integration."""


class NoCrossing(SeatkitError):
    """Trajectory reached H < 0 without ever crossing the transversal."""


class AmbiguousCapture(SeatkitError):
    """Post-crossing point too close to the separatrix to classify."""


class ConfigError(SeatkitError):
    """Invalid experiment configuration."""
