class ReliefKitError(Exception):
    """Base class for errors raised on bad input data."""


class MeshFormatError(ReliefKitError, ValueError):
    pass


class DataError(ReliefKitError, ValueError):
    pass


class SolverError(ReliefKitError, RuntimeError):
    pass
