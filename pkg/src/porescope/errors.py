"""Exception hierarchy.

Input problems derive from ``InputError`` and computational failures from
``ComputationError`` so the CLI can map them to exit codes 2 and 1.
"""


class PorescopeError(Exception):
    """Base class for all package errors."""


class InputError(PorescopeError, ValueError):
    """Bad or inconsistent input data."""


class ComputationError(PorescopeError, RuntimeError):
    """A numerical procedure failed."""


# voxel
class SizeMismatch(InputError):
    pass


class InconsistentSlices(InputError):
    pass


class MissingSidecar(InputError):
    pass


class EmptyPoreSpace(ComputationError):
    pass


class SectionTooThin(InputError):
    pass


# pnm
class NoSpanningPath(ComputationError):
    pass


class DisconnectedNetwork(ComputationError):
    pass


class SolverDiverged(ComputationError):
    pass


# flowfield
class MalformedHeader(InputError):
    pass


class NonMonotonePlanes(InputError):
    pass


class InsufficientPlanes(InputError):
    pass


# streamline
class ClosedPath(InputError):
    pass


class DegenerateXY(InputError):
    pass


class TooFewSamples(InputError):
    pass


class MissingSamples(InputError):
    pass


class ZeroVariance(InputError):
    pass


# regime
class InsufficientPoints(InputError):
    pass


class IllConditioned(ComputationError):
    pass
