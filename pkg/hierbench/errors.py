"""
Error types for hierbench.

Validation failures map to CLI exit code 1; I/O failures (OSError, bad JSON)
map to exit code 2.
"""


class HierBenchError(Exception):
    """Base class for every error raised by hierbench"""


class ValidationFailure(HierBenchError):
    """Input violates a structural or numeric precondition"""

    exit_code = 1


# Hierarchy

class TreeError(ValidationFailure):
    """Label tree violates the stratification invariants"""

    def __init__(self, message: str, nodes=None):
        super().__init__(message)
        self.nodes = list(nodes) if nodes is not None else []


class MultipleRoots(TreeError):
    pass


class OrphanNode(TreeError):
    pass


class UnbalancedLeaves(TreeError):
    pass


class CycleDetected(TreeError):
    pass


class ConflictingParent(TreeError):
    pass


class HeightOutOfRange(ValidationFailure):
    pass


class NotALeaf(ValidationFailure):
    pass


# Network

class DimensionMismatch(ValidationFailure):
    pass


class NonFiniteInput(ValidationFailure):
    pass


class ShapeMismatch(ValidationFailure):
    pass


# Attacks

class TargetNotInMask(ValidationFailure):
    pass


class DegenerateMask(HierBenchError):
    """Masked loss has a singleton denominator, so the attack has no signal"""


class InvalidAttackSpec(ValidationFailure):
    pass


# Curriculum

class TooFewIterations(ValidationFailure):
    pass


class HeadSizeMismatch(ValidationFailure):
    pass


class ConfigInvalid(ValidationFailure):
    pass


# Bench / data

class LabelOutOfRange(ValidationFailure):
    pass


class DimTooSmall(ValidationFailure):
    pass
