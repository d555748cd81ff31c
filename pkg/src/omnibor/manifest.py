"""Input manifests: the per-artifact record of direct build inputs.

A manifest is a small text document listing the gitoids of every direct
input of one build step, one per line, sorted.  Inputs that were
themselves built (and so have their own manifest) carry a ``bom`` link
naming that manifest's id.  The manifest's own gitoid (its OID) is the
gitoid of the serialized bytes, which makes the structure a Merkle DAG:
any change to a leaf changes every manifest above it.

Wire format, byte-exact::

    gitoid:blob:sha1\n
    blob <child hex>\n
    blob <child hex> bom <manifest hex>\n

Records are sorted ascending by child hex and unique; all hex in one
manifest belongs to one algorithm; lines end in LF only.

The ManifestStore lays manifests out under a root directory as
``objects/gitoid_blob_<algo>/<hex[:2]>/<hex[2:]>`` keyed by OID, plus a
``mapping/`` tree of the same shape keyed by *artifact* gitoid whose
single line names the manifest OID for that artifact.  The mapping is
what lets later build steps (and graph walks) find a child's manifest
without replaying the build log.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from .errors import ManifestFormatError, ManifestParseError, StoreCorruptionError
from .gitoid import ArtifactId, HashAlgorithm, gitoid_of_bytes

HEADER_PREFIX = "gitoid:blob:"


@dataclass(frozen=True, order=True)
class ManifestRecord:
    """One input: the child artifact's gitoid, plus the OID of the child's
    own manifest when the child was itself built from tracked inputs."""

    child: ArtifactId
    bom: Optional[ArtifactId] = None

    def __post_init__(self):
        if self.bom is not None and self.bom.algorithm is not self.child.algorithm:
            raise ManifestFormatError(
                "bom id algorithm %s does not match child %s"
                % (self.bom.algorithm.value, self.child.algorithm.value)
            )

    def line(self) -> str:
        if self.bom is None:
            return "blob %s" % self.child.hex
        return "blob %s bom %s" % (self.child.hex, self.bom.hex)


@dataclass(frozen=True)
class InputManifest:
    """An algorithm plus sorted, de-duplicated records.

    `headerless` marks manifests parsed from bytes that lacked the
    header line; it does not participate in equality and serialization
    always emits the header.
    """

    algorithm: HashAlgorithm
    records: Tuple[ManifestRecord, ...]
    headerless: bool = field(default=False, compare=False)

    @classmethod
    def build(
        cls,
        algorithm: HashAlgorithm,
        records: Iterable[ManifestRecord],
    ) -> "InputManifest":
        """Sort and de-duplicate records, merging bom links.

        Two records for the same child merge; a record carrying a bom
        link wins over one without.  Two different bom links for one
        child are contradictory and refused.
        """
        merged: Dict[str, ManifestRecord] = {}
        for record in records:
            if record.child.algorithm is not algorithm:
                raise ManifestFormatError(
                    "record algorithm %s does not match manifest %s"
                    % (record.child.algorithm.value, algorithm.value)
                )
            seen = merged.get(record.child.hex)
            if seen is None or (seen.bom is None and record.bom is not None):
                merged[record.child.hex] = record
            elif seen.bom is not None and record.bom is not None and seen.bom != record.bom:
                raise ManifestFormatError(
                    "conflicting bom links for child %s" % record.child.hex
                )
        ordered = tuple(merged[key] for key in sorted(merged))
        return cls(algorithm, ordered)

    def child_ids(self) -> List[ArtifactId]:
        return [record.child for record in self.records]


def serialize(manifest: InputManifest) -> bytes:
    """Serialize to canonical bytes.  Refuses invariant violations rather
    than silently repairing them."""
    lines = ["%s%s" % (HEADER_PREFIX, manifest.algorithm.value)]
    previous = None
    for record in manifest.records:
        if record.child.algorithm is not manifest.algorithm:
            raise ManifestFormatError(
                "record algorithm %s does not match manifest %s"
                % (record.child.algorithm.value, manifest.algorithm.value)
            )
        if previous is not None:
            if record.child.hex == previous:
                raise ManifestFormatError("duplicate child %s" % record.child.hex)
            if record.child.hex < previous:
                raise ManifestFormatError(
                    "records not sorted: %s after %s" % (record.child.hex, previous)
                )
        previous = record.child.hex
        lines.append(record.line())
    return ("\n".join(lines) + "\n").encode("ascii")


def parse(data: bytes) -> InputManifest:
    """Parse manifest bytes.

    The header line is optional on input (some displays truncate it);
    without it the algorithm is inferred from the first record's hex
    length and the result is flagged `headerless`.  All other deviations
    (bad hex, mixed lengths, unknown prefixes, unsorted or duplicate
    records, missing final newline) raise ManifestParseError naming the
    1-based line number.
    """
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise ManifestParseError("not ASCII: %s" % exc) from None
    if text and not text.endswith("\n"):
        raise ManifestParseError(
            "missing final newline", line=text.count("\n") + 1
        )
    lines = text.split("\n")[:-1]

    algorithm: Optional[HashAlgorithm] = None
    headerless = True
    start = 0
    if lines and lines[0].startswith(HEADER_PREFIX):
        name = lines[0][len(HEADER_PREFIX):]
        try:
            algorithm = HashAlgorithm.from_name(name)
        except ValueError as exc:
            raise ManifestParseError(str(exc), line=1) from None
        headerless = False
        start = 1

    records: List[ManifestRecord] = []
    previous: Optional[str] = None
    for index in range(start, len(lines)):
        line = lines[index]
        lineno = index + 1
        parts = line.split(" ")
        if parts[0] != "blob" or len(parts) not in (2, 4) or (
            len(parts) == 4 and parts[2] != "bom"
        ):
            raise ManifestParseError("unrecognized record %r" % line, line=lineno)
        try:
            child = ArtifactId.from_hex(parts[1])
        except ValueError as exc:
            raise ManifestParseError(str(exc), line=lineno) from None
        if algorithm is None:
            algorithm = child.algorithm
        elif child.algorithm is not algorithm:
            raise ManifestParseError(
                "record hex length does not match %s" % algorithm.value, line=lineno
            )
        bom = None
        if len(parts) == 4:
            try:
                bom = ArtifactId.from_hex(parts[3])
            except ValueError as exc:
                raise ManifestParseError(str(exc), line=lineno) from None
            if bom.algorithm is not algorithm:
                raise ManifestParseError(
                    "bom hex length does not match %s" % algorithm.value, line=lineno
                )
        if previous is not None:
            if parts[1] == previous:
                raise ManifestParseError("duplicate child %s" % parts[1], line=lineno)
            if parts[1] < previous:
                raise ManifestParseError("records not sorted", line=lineno)
        previous = parts[1]
        records.append(ManifestRecord(child, bom))

    if algorithm is None:
        raise ManifestParseError("empty manifest with no header", line=1)
    return InputManifest(algorithm, tuple(records), headerless=headerless)


def oid_of(manifest: InputManifest) -> ArtifactId:
    """The manifest's own identifier: the gitoid of its serialized bytes."""
    return gitoid_of_bytes(serialize(manifest), manifest.algorithm)


def _shard(root: str, kind: str, artifact_id: ArtifactId) -> str:
    return os.path.join(
        root,
        kind,
        "gitoid_blob_%s" % artifact_id.algorithm.value,
        artifact_id.hex[:2],
        artifact_id.hex[2:],
    )


def _write_atomic(path: str, data: bytes) -> None:
    directory = os.path.dirname(path)
    os.makedirs(directory, exist_ok=True)
    fd, temp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(temp_path, path)
    except BaseException:
        try:
            os.unlink(temp_path)
        except OSError:
            pass
        raise


class ManifestStore:
    """Content-addressed manifest storage under one root directory."""

    def __init__(self, root: str | os.PathLike):
        self.root = os.fspath(root)

    # -- objects ---------------------------------------------------------

    def path_for(self, oid: ArtifactId) -> str:
        return _shard(self.root, "objects", oid)

    def put(self, manifest: InputManifest) -> ArtifactId:
        """Store a manifest; returns its OID.

        Idempotent: re-storing identical content is a no-op.  A file
        already present at the address with *different* bytes means the
        store is corrupt and raises.
        """
        data = serialize(manifest)
        oid = gitoid_of_bytes(data, manifest.algorithm)
        path = self.path_for(oid)
        if os.path.exists(path):
            with open(path, "rb") as handle:
                existing = handle.read()
            if existing != data:
                raise StoreCorruptionError(
                    "object %s exists with different content" % oid.hex
                )
            return oid
        _write_atomic(path, data)
        return oid

    def get(self, oid: ArtifactId) -> Optional[InputManifest]:
        """Fetch a manifest by OID.  Absent objects return None; present
        objects whose bytes no longer hash to the OID raise."""
        path = self.path_for(oid)
        try:
            with open(path, "rb") as handle:
                data = handle.read()
        except FileNotFoundError:
            return None
        actual = gitoid_of_bytes(data, oid.algorithm)
        if actual != oid:
            raise StoreCorruptionError(
                "object %s fails verification (hashes to %s)" % (oid.hex, actual.hex)
            )
        return parse(data)

    # -- artifact -> manifest mapping ------------------------------------

    def mapping_path_for(self, artifact_id: ArtifactId) -> str:
        return _shard(self.root, "mapping", artifact_id)

    def mapping_put(self, artifact_id: ArtifactId, oid: ArtifactId) -> None:
        """Record that `artifact_id`'s own input manifest is `oid`.
        Last writer wins (a rebuilt artifact re-maps to its new manifest)."""
        if oid.algorithm is not artifact_id.algorithm:
            raise ManifestFormatError(
                "mapping algorithms differ: %s vs %s"
                % (artifact_id.algorithm.value, oid.algorithm.value)
            )
        _write_atomic(self.mapping_path_for(artifact_id), (oid.hex + "\n").encode("ascii"))

    def mapping_get(self, artifact_id: ArtifactId) -> Optional[ArtifactId]:
        try:
            with open(self.mapping_path_for(artifact_id), "rb") as handle:
                text = handle.read().decode("ascii").strip()
        except FileNotFoundError:
            return None
        oid = ArtifactId.from_hex(text)
        if oid.algorithm is not artifact_id.algorithm:
            raise StoreCorruptionError(
                "mapping for %s names a %s oid" % (artifact_id.hex, oid.algorithm.value)
            )
        return oid
