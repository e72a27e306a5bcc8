"""Exception hierarchy shared by all modules."""


class MarkerSlamError(Exception):
    """Base class for every error raised by this package."""


class DataError(MarkerSlamError):
    """Bad input data: malformed files, inconsistent worlds, map integrity."""


class NumericalError(MarkerSlamError):
    """A numerical routine could not produce a valid result."""


class DuplicateId(DataError):
    pass


class DanglingReference(DataError):
    pass


class BehindCamera(NumericalError):
    pass


class DegenerateRoom(NumericalError):
    pass


class MisclassifiedWalls(NumericalError):
    pass


class AmbiguousRoomGeometry(DataError):
    pass


class SingularSystem(NumericalError):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class MarkerOffWall(DataError):
    pass


class DuplicateMarkerId(DuplicateId):
    pass


class TrajectoryCollision(DataError):
    pass


class OutOfOrderFrame(DataError):
    pass


class EmptyOverlap(DataError):
    pass


class MalformedLine(DataError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class ConfigError(DataError):
    """Config/dictionary parse failure; message carries file and line."""
