"""Exception hierarchy shared by every gdfarm subsystem.

Each error carries a short ``code`` that is used verbatim on the wire
(``ERR <code> <message>`` on the catalog control channel, status bytes on
the data plane) so a remote failure can be re-raised as the same class.
"""


class GfarmError(Exception):
    code = "Error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


# catalog
class CatalogError(GfarmError):
    code = "CatalogError"


class DuplicateName(CatalogError):
    code = "DuplicateName"


class GapInFragmentIndices(CatalogError):
    code = "GapInFragmentIndices"


class EmptyFragmentSet(CatalogError):
    code = "EmptyFragmentSet"


class UnknownFile(CatalogError):
    code = "UnknownFile"


class UnknownFragmentIndex(CatalogError):
    code = "UnknownFragmentIndex"


class ChecksumMismatch(CatalogError):
    code = "ChecksumMismatch"


class LastReplica(CatalogError):
    code = "LastReplica"


class UnknownReplica(CatalogError):
    code = "UnknownReplica"


class UnknownNode(CatalogError):
    code = "UnknownNode"


class CorruptRecord(CatalogError):
    code = "CorruptRecord"


class BadRequest(GfarmError):
    code = "BadRequest"


class CatalogUnreachable(GfarmError):
    code = "CatalogUnreachable"


# storage
class StorageError(GfarmError):
    code = "StorageError"


class Exists(StorageError):
    code = "Exists"


class NotFound(StorageError):
    code = "NotFound"


class RangeError(StorageError):
    code = "RangeError"


class DiskFull(StorageError):
    code = "DiskFull"


class IoFailure(StorageError):
    code = "IoFailure"


class NodeUnreachable(StorageError):
    code = "NodeUnreachable"


# eventio
class EventIOError(GfarmError):
    code = "EventIOError"


class BadMagic(EventIOError):
    code = "BadMagic"


class CrcMismatch(EventIOError):
    code = "CrcMismatch"

    def __init__(self, message: str = "", block: int | None = None):
        super().__init__(message)
        self.block = block


class UnknownCollection(EventIOError):
    code = "UnknownCollection"


class InconsistentDirectory(EventIOError):
    code = "InconsistentDirectory"


class NonContiguousEventIds(EventIOError):
    code = "NonContiguousEventIds"


# transfer / scheduler / bench
class NoDestination(GfarmError):
    code = "NoDestination"


class PartialFailure(GfarmError):
    code = "PartialFailure"

    def __init__(self, message: str = "", report=None):
        super().__init__(message)
        self.report = report


class NoNodesAvailable(GfarmError):
    code = "NoNodesAvailable"


class ZeroRate(GfarmError):
    code = "ZeroRate"


class MissingFile(GfarmError):
    code = "MissingFile"


# schemac
class SchemaError(GfarmError):
    code = "SchemaError"

    def __init__(self, message: str = "", line: int = 0):
        super().__init__(message)
        self.line = line


class UnterminatedBlock(SchemaError):
    code = "UnterminatedBlock"


class MalformedDirective(SchemaError):
    code = "MalformedDirective"


class ValidationFailed(SchemaError):
    code = "ValidationFailed"

    def __init__(self, message: str = "", diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


class TemplateNotFound(SchemaError):
    code = "TemplateNotFound"


def _all_subclasses(cls):
    for sub in cls.__subclasses__():
        yield sub
        yield from _all_subclasses(sub)


ERRORS_BY_CODE: dict[str, type[GfarmError]] = {
    c.code: c for c in [GfarmError, *_all_subclasses(GfarmError)]
}


def from_code(code: str, message: str) -> GfarmError:
    """Rebuild a remote error from its wire code."""
    return ERRORS_BY_CODE.get(code, GfarmError)(message)

