"""Exception hierarchy.

Every error raised by the engine derives from :class:`CogniSNNError`. The
``exit_code`` attribute is what the command line returns when the error
escapes a subcommand (1 usage/config, 2 data, 3 engine).
"""


class CogniSNNError(Exception):
    exit_code = 3


# configuration / usage
class ConfigError(CogniSNNError, ValueError):
    exit_code = 1


class InvalidSpec(ConfigError):
    pass


# graph topology
class DegenerateGraph(CogniSNNError):
    pass


class PathwayExplosion(CogniSNNError):
    pass


class MismatchedGraph(CogniSNNError, ValueError):
    pass


class KOutOfRange(ConfigError):
    pass


# tensors
class ShapeMismatch(CogniSNNError, ValueError):
    pass


class NonPositiveOutput(ShapeMismatch):
    pass


class IndivisibleDimension(ShapeMismatch):
    pass


class IncompatibleDimensions(ShapeMismatch):
    pass


class LabelOutOfRange(CogniSNNError, ValueError):
    pass


class NotScalarLoss(CogniSNNError, ValueError):
    pass


# executor / training
class NoActiveInput(CogniSNNError):
    pass


class HeadMismatch(CogniSNNError):
    pass


class EmptySelection(CogniSNNError):
    pass


# data
class DataError(CogniSNNError):
    exit_code = 2


class DataEmpty(DataError):
    pass


class RhoTooLarge(DataError, ValueError):
    pass


class CorruptFile(DataError):
    pass


class BadMagic(CorruptFile):
    pass
