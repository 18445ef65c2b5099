"""Exception hierarchy shared by all runtime modules."""

from __future__ import annotations


class GenescError(Exception):
    """Base class for every error this package raises deliberately."""


class ValidationError(GenescError):
    """A declared structure violates one of its invariants."""


# --- entity construction -------------------------------------------------

class DuplicateIdError(GenescError):
    pass


class ArityMismatchError(GenescError):
    pass


class UnknownKernelError(GenescError):
    pass


class UnknownDatatypeError(GenescError):
    pass


class SelfRelationError(GenescError):
    pass


class IdCollisionError(GenescError):
    pass


class PortTypeMismatchError(GenescError):
    pass


class DanglingWireError(GenescError):
    pass


# --- graph ----------------------------------------------------------------

class UnresolvedRelationTargetError(GenescError):
    pass


class CyclicHardConstraintsError(GenescError):
    def __init__(self, cycles: list[list[str]]):
        self.cycles = cycles
        super().__init__(f"hard-constraint cycles: {cycles}")


# --- manifest and segment formats ------------------------------------------

class ManifestError(GenescError):
    """Base for manifest parsing and resolution failures."""


class ManifestSyntaxError(ManifestError):
    def __init__(self, message: str, line: int, col: int):
        self.line = line
        self.col = col
        super().__init__(f"{message} (line {line}, col {col})")


class UnresolvedNameError(ManifestError):
    pass


class DuplicateDeclarationError(ManifestError):
    pass


class SegmentError(GenescError):
    """Base for graph-segment serialization failures."""


class BadMagicError(SegmentError):
    pass


class VersionUnsupportedError(SegmentError):
    pass


class ChecksumMismatchError(SegmentError):
    pass


class TruncatedRecordError(SegmentError):
    pass


# --- runtime ----------------------------------------------------------------

class InputShapeMismatchError(GenescError):
    pass


class KernelPanicError(GenescError):
    """A kernel raised during execution; the run was aborted."""

    def __init__(self, task: tuple[str, int], cause: BaseException,
                 report=None, dump_path=None):
        self.task = task
        self.cause = cause
        self.report = report
        self.dump_path = dump_path
        super().__init__(f"kernel failed in task {task[0]}#{task[1]}: {cause!r}")


class ColorViolationSignal(GenescError):
    """A task touched a colored cell it does not own."""

    def __init__(self, cell_id: str, accessor: str, owner):
        self.cell_id = cell_id
        self.accessor = accessor
        self.owner = owner
        super().__init__(
            f"color violation on cell '{cell_id}': {accessor} is not owner {owner}")


class TimestampDomainMismatchError(GenescError):
    pass


class UnknownTaskInTraceError(GenescError):
    pass


class IoFailureError(GenescError):
    pass


# --- demos -------------------------------------------------------------------

class CoincidentBodiesError(GenescError):
    pass
