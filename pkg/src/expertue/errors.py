"""Exception hierarchy.

Every error carries a stable ``code`` (the class name) and an optional
``context`` mapping so the CLI can emit a machine-readable error document.
"""

from __future__ import annotations

from typing import Any


class ExpertUEError(ValueError):
    """Base class for all validation and domain errors raised by the package."""

    def __init__(self, message: str, **context: Any) -> None:
        super().__init__(message)
        self.message = message
        self.context = context

    @property
    def code(self) -> str:
        return type(self).__name__

    def to_dict(self) -> dict[str, Any]:
        return {"code": self.code, "message": self.message, "context": self.context}


# core
class RowNotSimplex(ExpertUEError):
    pass


class NegativeProbability(ExpertUEError):
    pass


class ShapeMismatch(ExpertUEError):
    pass


class DuplicateUnit(ExpertUEError):
    pass


# decompose
class EmptyEnsemble(ExpertUEError):
    pass


class NonSquare(ExpertUEError):
    pass


class AlphaOutOfRange(ExpertUEError):
    pass


class MethodMemberMismatch(ExpertUEError):
    pass


class NegativeMutualInformation(ExpertUEError):
    pass


class UnknownMethod(ExpertUEError):
    pass


# labels
class AllAbstained(ExpertUEError):
    pass


class UnknownCategoricalLabel(ExpertUEError):
    pass


class ScaleWithoutCertaintyBands(ExpertUEError):
    pass


class NoOverlap(ExpertUEError):
    pass


class KOutOfRange(ExpertUEError):
    pass


class InvalidScale(ExpertUEError):
    pass


class VoteOutOfScale(ExpertUEError):
    pass


# evaluation
class EmptyRetainedSet(ExpertUEError):
    pass


class MissingScore(ExpertUEError):
    pass


class GridMismatch(ExpertUEError):
    pass


class RMaxNotOnGrid(ExpertUEError):
    pass


class InvalidGrid(ExpertUEError):
    pass


class SingleClass(ExpertUEError):
    pass


class MaskShapeMismatch(ExpertUEError):
    pass


class OracleViolation(ExpertUEError):
    pass


# models
class NonFiniteLoss(ExpertUEError):
    pass


class SizeMismatch(ExpertUEError):
    pass


class DimMismatch(ExpertUEError):
    pass


class InvalidSpec(ExpertUEError):
    pass


# synth / sim
class InvalidShape(ExpertUEError):
    pass


class ScaleIncompatible(ExpertUEError):
    pass


class ParamOutOfRange(ExpertUEError):
    pass


# io
class RaggedEnsemble(ExpertUEError):
    pass


class MissingScaleDescriptor(ExpertUEError):
    pass


class UnknownHeader(ExpertUEError):
    pass


class IoFailure(ExpertUEError):
    pass


class MissingUnit(ExpertUEError):
    pass


# cli
class UsageError(ExpertUEError):
    pass
