"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to:
2 configuration, 3 input, 4 numeric/degenerate, 5 checkpoint.
"""

from __future__ import annotations


class AfkitError(Exception):
    exit_code = 1


class AfkitWarning(UserWarning):
    pass


# configuration -------------------------------------------------------------

class ConfigError(AfkitError):
    exit_code = 2


class DuplicateKey(ConfigError):
    pass


class UnknownTask(ConfigError):
    pass


class MissingRequiredKey(ConfigError):
    pass


class InvalidPredicate(ConfigError):
    pass


class EvaluatorStatisticMismatch(ConfigError):
    pass


class ConfigSyntaxError(ConfigError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


# input ---------------------------------------------------------------------

class InputError(AfkitError):
    exit_code = 3


class EmptyInput(InputError):
    pass


class MalformedRecord(InputError):
    pass


class NoFilesMatched(InputError):
    pass


class EmptyBin(InputError):
    pass


class NewickSyntaxError(InputError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class DuplicateLeafLabel(InputError):
    pass


class LeafSetMismatch(InputError):
    pass


class TooFewTaxa(InputError):
    pass


class MatrixFormatError(InputError):
    pass


# numeric -------------------------------------------------------------------

class NumericError(AfkitError):
    exit_code = 4


class MixedKinds(NumericError):
    pass


class DegenerateBackground(NumericError):
    pass


class ZeroMean(NumericError):
    pass


class NegativeInput(NumericError):
    pass


class NonFiniteMatrix(NumericError):
    pass


class EmptyPool(NumericError):
    pass


class MemoryBudgetExceeded(NumericError):
    pass


# checkpointing -------------------------------------------------------------

class CheckpointError(AfkitError):
    exit_code = 5


class FingerprintMismatch(CheckpointError):
    pass


# warnings ------------------------------------------------------------------

class SketchUnderfull(AfkitWarning):
    pass


class DegenerateVariance(AfkitWarning):
    pass


class NoMatches(AfkitWarning):
    pass


class SaturatedDistance(AfkitWarning):
    pass


class CorruptRunFile(AfkitWarning):
    pass


class ConfigWarning(AfkitWarning):
    pass
