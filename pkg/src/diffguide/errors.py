"""Typed errors raised by the library.

Plain ``ValueError`` is used for ordinary argument validation; the classes
here mark conditions that callers are expected to branch on.
"""


class DiffguideError(Exception):
    """Base class for library-specific errors."""


class DegenerateStepError(DiffguideError):
    """A schedule step with alpha_bar at 0 or 1 makes the kernel undefined."""


class ZeroSupportError(DiffguideError):
    """Observed tokens have probability zero under the data distribution."""


class BranchCutError(DiffguideError):
    """Rotation log map requested at or beyond the principal branch (angle ~ pi)."""


class NotDifferentiable(DiffguideError):
    """Reward or value model does not expose a gradient.

    Derivative-based samplers catch this and refuse the model; derivative-free
    samplers never ask.
    """


class UnsupportedValueModelError(DiffguideError):
    """Sampler needs a capability (gradients, relaxed inputs) the model lacks."""


class DegenerateWeightsError(DiffguideError):
    """Every importance weight is zero (log-weight -inf)."""


class StallError(DiffguideError):
    """Refinement constraint rejected every proposal for too long."""
