"""Exception hierarchy shared by all qkd810 modules."""


class Qkd810Error(Exception):
    """Base class for every error raised by this package."""


# fiber modes
class FiberError(Qkd810Error):
    pass


class NoGuidedMode(FiberError):
    pass


class ConvergenceFailure(FiberError):
    pass


class NotMultimode(FiberError):
    pass


class WrongMode(FiberError):
    pass


class GridMismatch(FiberError):
    pass


class InfeasibleTargets(FiberError):
    pass


# coincidence analysis
class NoPeak(Qkd810Error):
    pass


# key analysis
class DomainError(Qkd810Error, ValueError):
    pass


class InsufficientData(Qkd810Error):
    pass


class NoCrossover(Qkd810Error):
    pass


# tag files
class TagFormatError(Qkd810Error):
    pass


class BadMagic(TagFormatError):
    pass


class UnsortedRecords(TagFormatError):
    pass


class TruncatedFile(TagFormatError):
    pass


class BadHeader(TagFormatError):
    pass


class BadRecord(TagFormatError):
    pass


# sync protocol
class SyncError(Qkd810Error):
    pass


class VersionMismatch(SyncError):
    pass


class ProtocolViolation(SyncError):
    pass


class Timeout(SyncError):
    pass


# scenarios
class ConfigError(Qkd810Error):
    """Invalid scenario configuration; ``field`` names the offending key path."""

    def __init__(self, message, field=None):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}" if field else message)
