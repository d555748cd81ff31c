"""Exception types shared across the package."""


class OmniborError(Exception):
    """Base class for all errors raised by this package."""


class ManifestFormatError(OmniborError):
    """A manifest violates a construction invariant (ordering, duplicates,
    mixed algorithms) and was refused by the serializer."""


class ManifestParseError(OmniborError):
    """Manifest bytes could not be parsed.  Carries the 1-based line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)
        self.line = line


class StoreCorruptionError(OmniborError):
    """A stored object exists but its bytes do not match its address."""


class NotFoundError(OmniborError):
    """A required object (manifest, mapping entry, metadata) is absent."""


class CycleError(OmniborError):
    """Manifest references form a cycle.  `cycle` lists the OID hex chain."""

    def __init__(self, cycle):
        super().__init__("manifest cycle: " + " -> ".join(cycle))
        self.cycle = list(cycle)


class ElfFormatError(OmniborError):
    """Bytes are not valid ELF, or a note stream is malformed/truncated."""


class RawLogParseError(OmniborError):
    """A raw build log line could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)
        self.line = line


class AnalysisError(OmniborError):
    """A build command could not be analyzed (unresolvable library,
    missing depfile, missing .incbin target, ...)."""


class CveDbError(OmniborError):
    """The CVE database document is malformed."""


class CorpusError(OmniborError):
    """A corpus operation failed (bad record, unreadable archive, ...)."""
