"""Exception types raised across the toolkit.

Every error derives from :class:`AtomstError` (itself a ``ValueError``) so
callers can catch domain failures with one clause.
"""

from __future__ import annotations


class AtomstError(ValueError):
    """Base class for all domain errors."""


class EmptyTable(AtomstError):
    pass


class EmptyBundle(AtomstError):
    pass


class UnknownSuffix(AtomstError):
    pass


class MissingRequiredColumn(AtomstError):
    def __init__(self, column: str, kind: str):
        super().__init__(f"{kind} table is missing required column {column!r}")
        self.column = column
        self.kind = kind


class MalformedRow(AtomstError):
    def __init__(self, line: int | None, reason: str):
        where = f"line {line}" if line is not None else "unknown line"
        super().__init__(f"{where}: {reason}")
        self.line = line
        self.reason = reason


class BadCoordinates(MalformedRow):
    pass


class BadTimestamp(MalformedRow):
    pass


class HeterogeneousRecords(AtomstError):
    pass


class DuplicateKey(AtomstError):
    pass


class IrregularGrid(AtomstError):
    pass


class DuplicateCell(AtomstError):
    pass


class DuplicateEdge(AtomstError):
    pass


class UnknownWeightColumn(AtomstError):
    pass


class NegativeWeight(AtomstError):
    pass


class UnknownEntity(AtomstError):
    pass


class SeriesTooShort(AtomstError):
    pass


class EmptySplit(AtomstError):
    def __init__(self, sizes: tuple[int, int, int]):
        super().__init__(f"split produced an empty partition: train/valid/test = {sizes}")
        self.sizes = sizes


class ShapeMismatch(AtomstError):
    pass


class AllMasked(AtomstError):
    pass


class NoTrainingData(AtomstError):
    pass


class SingularSystem(AtomstError):
    pass


class DuplicateObservation(AtomstError):
    pass


class UnparseableTimestamp(AtomstError):
    pass


class MissingMappingColumn(AtomstError):
    pass


class RaggedRow(AtomstError):
    pass


class MissingCell(AtomstError):
    pass
