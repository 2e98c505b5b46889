"""Exception hierarchy shared across the package."""


class LRLabError(Exception):
    """Base class for all errors raised by lrlab."""


# core numerics
class DimensionError(LRLabError, ValueError):
    pass


class ShapeError(LRLabError, ValueError):
    pass


class LabelError(LRLabError, IndexError):
    pass


class UsageError(LRLabError, RuntimeError):
    pass


class StateError(LRLabError, ValueError):
    pass


# models
class BuildError(LRLabError, ValueError):
    pass


class InputError(LRLabError, ValueError):
    pass


class DataError(LRLabError, ValueError):
    pass


class CheckpointError(LRLabError, ValueError):
    pass


class MagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class ConsistencyError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


# data
class ArgumentError(LRLabError, ValueError):
    pass


class PlanError(LRLabError, ValueError):
    pass


class IdxError(LRLabError, ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxCountError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


# attacks / detector / pipeline
class ConfigError(LRLabError, ValueError):
    pass


class TapError(LRLabError, ValueError):
    pass


class CalibrationError(LRLabError, ValueError):
    pass


class MissingArtifactError(LRLabError, FileNotFoundError):
    pass


class EmptyAdversarialSetError(LRLabError):
    pass
