"""Exception hierarchy shared by every subpackage."""


class SoftMpcError(Exception):
    """Base class for all errors raised by softmpc."""


class NonFiniteInput(SoftMpcError, ValueError):
    """An input array contains NaN or inf."""


class NegativePressure(SoftMpcError, ValueError):
    """A chamber pressure vector has a negative entry."""


class SingularInertia(SoftMpcError, ArithmeticError):
    """The curvature-space inertia matrix is singular or badly conditioned."""


class NotConverged(SoftMpcError, ArithmeticError):
    """An iterative solver stopped before reaching its tolerance."""


class InfeasibleProblem(SoftMpcError):
    """An optimization problem has no feasible point.

    ``family`` names the constraint family that failed when it can be
    identified (e.g. ``"input_bounds"``, ``"terminal"``).
    """

    def __init__(self, message, family=None):
        super().__init__(message)
        self.family = family


class RefTooShort(SoftMpcError, ValueError):
    """A reference window has fewer than N + 1 samples."""


class NoFeasibleBox(SoftMpcError):
    """The constraint-box search never accepted a candidate."""


class ScenarioError(SoftMpcError, ValueError):
    """A scenario or finder file failed to parse or validate.

    ``where`` is a dotted key path or ``line:col`` position.
    """

    def __init__(self, message, where=None):
        text = f"{where}: {message}" if where else message
        super().__init__(text)
        self.where = where


class ScenarioAbort(SoftMpcError):
    """A closed-loop run stopped early (e.g. the plant state blew up)."""
