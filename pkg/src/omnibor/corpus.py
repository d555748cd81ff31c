"""Shared corpus linking artifact ids to package identities.

Every record keys one blob by its sha256 gitoid URI and carries package
metadata (purl, version, known vulnerabilities) plus two containment
edges: which blobs a package contains and which packages a blob is
contained by.  Indexing a zip archive adds its member files flat; a
nested archive is indexed as an opaque blob of the outer one.

Composition analysis answers "what is inside this archive I have never
seen": its members (descending one level into nested archives) are
matched against every indexed package's member set, scoring each
package by the share of its members present.
"""

from __future__ import annotations

import io
import json
import os
import time
import zipfile
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set

from .errors import CorpusError
from .gitoid import ArtifactId, HashAlgorithm, gitoid_of_bytes, \
    gitoid_of_file, parse_id

RECORD_SCHEMA_VERSION = 1
MATCH_THRESHOLD_PERCENT = 50

TYPE_PACKAGE = "package"
TYPE_FILE = "file"


def overlap_percent(shared: int, total: int) -> int:
    """Integer percentage of `shared` out of `total`, with halves
    rounding up, computed without floating point."""
    if total == 0:
        return 0
    return (200 * shared + total) // (2 * total)


def _uri_of(artifact_id: ArtifactId) -> str:
    if artifact_id.algorithm is not HashAlgorithm.SHA256:
        raise CorpusError("corpus identifiers use sha256 gitoids")
    return artifact_id.uri


def _coerce_uri(key) -> str:
    if isinstance(key, ArtifactId):
        return _uri_of(key)
    try:
        return _uri_of(parse_id(key))
    except ValueError as exc:
        raise CorpusError(str(exc))


@dataclass
class CorpusRecord:
    identifier: str
    filename: str = ""
    record_type: str = TYPE_FILE
    contains: List[str] = field(default_factory=list)
    contained_by: List[str] = field(default_factory=list)
    purl: Optional[str] = None
    version: str = ""
    vulnerabilities: List[str] = field(default_factory=list)
    filetype: str = ""
    other: Dict[str, str] = field(default_factory=dict)
    timestamp: int = 0  # milliseconds since the epoch

    def to_json(self) -> dict:
        return {
            "identifier": self.identifier,
            "contains": list(self.contains),
            "containedBy": list(self.contained_by),
            "metadata": {
                "filename": self.filename,
                "purl": self.purl,
                "vulnerabilities": list(self.vulnerabilities),
                "filetype": self.filetype,
                "other": dict(self.other),
                "version": self.version,
            },
            "timestamp": self.timestamp,
            "version": RECORD_SCHEMA_VERSION,
            "type": self.record_type,
        }

    @classmethod
    def from_json(cls, data: dict) -> "CorpusRecord":
        try:
            metadata = data.get("metadata", {})
            record = cls(
                identifier=data["identifier"],
                filename=metadata.get("filename", ""),
                record_type=data.get("type", TYPE_FILE),
                contains=list(data.get("contains", [])),
                contained_by=list(data.get("containedBy", [])),
                purl=metadata.get("purl"),
                version=metadata.get("version", ""),
                vulnerabilities=list(metadata.get("vulnerabilities",
                                                  [])),
                filetype=metadata.get("filetype", ""),
                other=dict(metadata.get("other", {})),
                timestamp=int(data.get("timestamp", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError("malformed corpus record: %s" % exc)
        _coerce_uri(record.identifier)
        return record


def _now_ms() -> int:
    return int(time.time() * 1000)


class Corpus:
    def __init__(self) -> None:
        self.records: Dict[str, CorpusRecord] = {}

    def __len__(self) -> int:
        return len(self.records)

    def lookup(self, key) -> Optional[CorpusRecord]:
        return self.records.get(_coerce_uri(key))

    def upsert(self, record: CorpusRecord) -> CorpusRecord:
        """Insert or merge: containment edges union, metadata fields
        fill in where the stored record is silent."""
        stored = self.records.get(record.identifier)
        if stored is None:
            self.records[record.identifier] = record
            return record
        for uri in record.contains:
            if uri not in stored.contains:
                stored.contains.append(uri)
        for uri in record.contained_by:
            if uri not in stored.contained_by:
                stored.contained_by.append(uri)
        for cve in record.vulnerabilities:
            if cve not in stored.vulnerabilities:
                stored.vulnerabilities.append(cve)
        stored.purl = stored.purl or record.purl
        stored.version = stored.version or record.version
        stored.filename = stored.filename or record.filename
        stored.filetype = stored.filetype or record.filetype
        if record.record_type == TYPE_PACKAGE:
            stored.record_type = TYPE_PACKAGE
        stored.other.update(record.other)
        stored.timestamp = max(stored.timestamp, record.timestamp)
        return stored

    def index_package(self, archive_path: str,
                      purl: Optional[str] = None,
                      version: str = "",
                      vulnerabilities: Sequence[str] = (),
                      timestamp: Optional[int] = None) -> CorpusRecord:
        """Index one archive: a package record for the archive blob and
        a file record per member, linked both ways.  Members are taken
        flat: a nested archive is one opaque member blob."""
        if not zipfile.is_zipfile(archive_path):
            raise CorpusError("not a zip archive: %s" % archive_path)
        stamp = _now_ms() if timestamp is None else timestamp
        package_uri = _uri_of(
            gitoid_of_file(archive_path, HashAlgorithm.SHA256))
        member_uris: List[str] = []
        member_records: List[CorpusRecord] = []
        with zipfile.ZipFile(archive_path) as archive:
            for info in archive.infolist():
                if info.is_dir():
                    continue
                data = archive.read(info.filename)
                uri = _uri_of(gitoid_of_bytes(data,
                                              HashAlgorithm.SHA256))
                member_uris.append(uri)
                member_records.append(CorpusRecord(
                    identifier=uri,
                    filename=os.path.basename(info.filename),
                    record_type=TYPE_FILE,
                    contained_by=[package_uri],
                    filetype=_filetype(info.filename, data),
                    timestamp=stamp))
        package = self.upsert(CorpusRecord(
            identifier=package_uri,
            filename=os.path.basename(archive_path),
            record_type=TYPE_PACKAGE,
            contains=list(dict.fromkeys(member_uris)),
            purl=purl,
            version=version,
            vulnerabilities=list(vulnerabilities),
            filetype="zip",
            timestamp=stamp))
        for member in member_records:
            self.upsert(member)
        return package

    def packages(self) -> List[CorpusRecord]:
        return [r for r in self.records.values()
                if r.record_type == TYPE_PACKAGE]

    def save(self, path: str) -> None:
        body = {
            "version": RECORD_SCHEMA_VERSION,
            "records": [self.records[uri].to_json()
                        for uri in sorted(self.records)],
        }
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(body, handle, indent=2, sort_keys=True)
            handle.write("\n")

    @classmethod
    def load(cls, path: str) -> "Corpus":
        with open(path, "r", encoding="utf-8") as handle:
            try:
                body = json.load(handle)
            except json.JSONDecodeError as exc:
                raise CorpusError("corpus file is not JSON: %s" % exc)
        if not isinstance(body, dict) or \
                not isinstance(body.get("records"), list):
            raise CorpusError("corpus file must hold a records list")
        corpus = cls()
        for item in body["records"]:
            corpus.upsert(CorpusRecord.from_json(item))
        return corpus


def _filetype(name: str, data: bytes) -> str:
    if zipfile.is_zipfile(io.BytesIO(data)):
        return "zip"
    suffix = os.path.splitext(name)[1].lstrip(".")
    return suffix or "file"


def archive_member_ids(archive_path: str,
                       nested_levels: int = 1) -> Set[str]:
    """Member gitoid URIs of an archive, descending `nested_levels`
    deep into members that are themselves zip archives."""
    if not zipfile.is_zipfile(archive_path):
        raise CorpusError("not a zip archive: %s" % archive_path)
    with open(archive_path, "rb") as handle:
        return _member_ids(handle.read(), nested_levels)


def _member_ids(archive_bytes: bytes, nested_levels: int) -> Set[str]:
    found: Set[str] = set()
    with zipfile.ZipFile(io.BytesIO(archive_bytes)) as archive:
        for info in archive.infolist():
            if info.is_dir():
                continue
            data = archive.read(info.filename)
            found.add(_uri_of(gitoid_of_bytes(data,
                                              HashAlgorithm.SHA256)))
            if nested_levels > 0 and zipfile.is_zipfile(io.BytesIO(data)):
                found |= _member_ids(data, nested_levels - 1)
    return found


@dataclass(frozen=True)
class PackageMatch:
    record: CorpusRecord
    percent: int

    def render(self) -> str:
        if self.record.vulnerabilities:
            tail = ", ".join(self.record.vulnerabilities)
        else:
            tail = "No CVEs"
        return "%s, %d %%, %s" % (self.record.filename, self.percent,
                                  tail)


@dataclass
class CompositionReport:
    archive: str
    identifier: str
    matches: List[PackageMatch] = field(default_factory=list)

    def render(self) -> str:
        lines = ["%s:" % self.archive]
        if not self.matches:
            lines.append("  no known packages matched")
        lines += ["  %s" % match.render() for match in self.matches]
        return "\n".join(lines)


def composition_analysis(archive_path: str, corpus: Corpus,
                         threshold: int = MATCH_THRESHOLD_PERCENT
                         ) -> CompositionReport:
    """Score every indexed package by how much of it appears inside the
    archive; report those at or above the threshold, strongest first."""
    member_ids = archive_member_ids(archive_path, nested_levels=1)
    identifier = _uri_of(gitoid_of_file(archive_path,
                                        HashAlgorithm.SHA256))
    matches: List[PackageMatch] = []
    for package in corpus.packages():
        total = len(package.contains)
        shared = sum(1 for uri in package.contains
                     if uri in member_ids)
        percent = overlap_percent(shared, total)
        if package.identifier == identifier:
            percent = 100
        if percent >= threshold:
            matches.append(PackageMatch(package, percent))
    matches.sort(key=lambda m: (-m.percent, m.record.filename,
                                m.record.identifier))
    return CompositionReport(
        archive=os.path.basename(archive_path),
        identifier=identifier, matches=matches)
