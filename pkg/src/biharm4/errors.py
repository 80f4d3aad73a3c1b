"""Exception hierarchy shared by all modules."""


class Biharm4Error(Exception):
    """Base class for every error raised by the package."""


class NonZeroMean(Biharm4Error):
    """An inverse elliptic operator was applied to a field with nonzero mean."""


class OutsideTube(Biharm4Error):
    """A point is too far from the target manifold to be projected."""


class NotOnManifold(Biharm4Error):
    """A point (or map value) does not lie on the target manifold."""


class NotOnSphere(NotOnManifold):
    """A map does not take values in the unit sphere."""


class CalibrationAmbiguous(Biharm4Error):
    """The variational oracle could not single out one sign convention."""


class NotDivergenceFree(Biharm4Error):
    """A field that must be divergence free is not."""


class NoConvergence(Biharm4Error):
    """A fixed-point iteration stalled or diverged."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class NotSmallEnough(Biharm4Error):
    """The smallness hypothesis of a perturbative construction fails."""


class StepRejected(Biharm4Error):
    """A flow step could not be accepted after all retries."""


class RadiusOutOfRange(Biharm4Error):
    """A concentration radius outside the admissible range was requested."""


class ConfigError(Biharm4Error):
    """An invalid run configuration."""
