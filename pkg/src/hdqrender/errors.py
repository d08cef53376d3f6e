"""Exception types shared across the renderer.

The CLI maps these onto exit codes: configuration problems exit with 2,
I/O problems with 3 and invariant violations with 4.
"""


class HdqError(Exception):
    """Base class for all package errors."""


class ConfigError(HdqError):
    """Malformed scene, pose or render configuration."""


class FormatError(HdqError, IOError):
    """An image or scene file could not be decoded."""

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class EmptyNeighborhoodError(HdqError):
    pass


class DegenerateWarpError(HdqError):
    """The blended skinning matrix is too close to singular to invert."""

    def __init__(self, condition):
        self.condition = condition
        super().__init__(f"blended transform is near-singular (cond ~ {condition:.3g})")


class InvalidNormalError(HdqError):
    pass


class NotOnSurfaceError(HdqError):
    pass


class SolverError(HdqError):
    pass


class InvariantError(HdqError):
    """An internal consistency check failed."""
