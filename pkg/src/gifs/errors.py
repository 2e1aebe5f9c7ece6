"""Exception hierarchy shared by the library and the command line."""


class GifsError(Exception):
    """Base class for every error raised by this package."""

    exit_status = 1


class UsageError(GifsError, ValueError):
    """Bad arguments: shape/arity mismatch, violated preconditions."""

    exit_status = 2


class ResourceError(GifsError):
    """A sampling or enumeration budget would be exceeded."""

    exit_status = 3


class DivergenceError(GifsError):
    """The attractor iteration stopped contracting."""

    exit_status = 4


class DisconnectionError(GifsError):
    """No chain exists between the requested sets.

    ``components`` holds the two groups of labels the search split into:
    the one reachable from the source and everything else.
    """

    exit_status = 5

    def __init__(self, message, components=((), ())):
        super().__init__(message)
        self.components = components


class ConstructionError(DisconnectionError):
    """Arc refinement hit a node whose child family is not connected."""

    def __init__(self, message, node=None, components=((), ())):
        super().__init__(message, components)
        self.node = node


class ConsistencyError(GifsError):
    """An internal invariant of a construction was violated."""

    exit_status = 1
