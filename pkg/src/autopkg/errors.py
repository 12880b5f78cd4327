"""Exception hierarchy shared across the package."""

from __future__ import annotations


class AutoPKGError(Exception):
    """Base class for every error raised by autopkg."""


# graph store


class GraphError(AutoPKGError):
    pass


class EmptyName(GraphError):
    pass


class DuplicateName(GraphError):
    def __init__(self, message: str, existing: int | None = None):
        super().__init__(message)
        self.existing = existing


class CrossNodeConflict(GraphError):
    def __init__(self, message: str, owner: int | None = None):
        super().__init__(message)
        self.owner = owner


class UnknownNode(GraphError):
    pass


class KindMismatch(GraphError):
    pass


class UnlicensedAssertion(GraphError):
    pass


class DoubleTyping(GraphError):
    pass


class UntypedValue(GraphError):
    """A Value node was requested without its typing AttributeKey."""


class AmbiguousName(GraphError):
    def __init__(self, message: str, matches: list[int]):
        super().__init__(message)
        self.matches = matches


class InvariantViolation(GraphError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems[:5]) + (" ..." if len(problems) > 5 else ""))
        self.problems = problems


class ParseError(AutoPKGError):
    """Malformed snapshot / corpus / interchange input.

    ``position`` is a human readable locator (``line 3 col 7`` or a JSON path).
    """

    def __init__(self, message: str, position: str | None = None):
        super().__init__(f"{message} at {position}" if position else message)
        self.position = position


# retrieval / backends


class ProviderFailure(AutoPKGError):
    def __init__(self, message: str, node_id: int | None = None):
        super().__init__(message if node_id is None else f"{message} (node {node_id})")
        self.node_id = node_id


class BackendFailure(AutoPKGError):
    pass


class ImageLimitExceeded(BackendFailure):
    pass


# KGD action parsing


class ActionError(AutoPKGError):
    pass


class UnparseableAction(ActionError):
    pass


class UnknownTarget(ActionError):
    pass


class IllegalAction(ActionError):
    pass


# agent output parsing


class OutputParseError(AutoPKGError):
    pass


class TypeParseError(OutputParseError):
    pass


class TableParseError(OutputParseError):
    pass


class JsonParseError(OutputParseError):
    pass


# evaluation


class DomainError(AutoPKGError, ValueError):
    pass


class MissingPrior(DomainError):
    pass


class LengthMismatch(DomainError):
    pass


class EmptyInput(DomainError):
    pass


class ConfigError(AutoPKGError):
    pass
