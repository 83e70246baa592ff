"""Exception types shared across the package."""


class ZoomsplatError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(ZoomsplatError, ValueError):
    """An argument violates an operation's precondition."""


class DegenerateGeometryError(ZoomsplatError):
    """Geometry collapsed to a configuration with no defined answer."""


class LayerOwnershipError(ZoomsplatError):
    """A primitive or layer was used in a way that violates layer lifecycle rules."""


class RoiUndefinedError(ZoomsplatError):
    """No region of interest exists for the given camera rig."""


class UndefinedMetricError(ZoomsplatError):
    """A metric has no defined value for the given inputs (e.g. empty masks)."""


class SceneLoadError(ZoomsplatError):
    """A scene or camera file failed to parse or validate."""


class TransportError(ZoomsplatError):
    """The remote super-resolution endpoint could not be reached."""


class ProtocolError(ZoomsplatError):
    """The remote endpoint answered with a malformed payload."""


class ContractViolationError(ZoomsplatError):
    """A provider returned output that violates the response contract."""


class OptimizationDivergedError(ZoomsplatError):
    """Training loss became non-finite; carries a diagnostic snapshot."""

    def __init__(self, message: str, iteration: int, diagnostics: dict):
        super().__init__(message)
        self.iteration = iteration
        self.diagnostics = diagnostics
