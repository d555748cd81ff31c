"""Raw build log: one record per observed build step.

Wire format, one block per record, blank-line separated:

    outfile: <hex> path: <abspath>
    infile: <hex> path: <abspath>
    dynlib: <hex> path: <abspath>
    build_cmd: <command line>
    ==== End of raw info for PID <pid> process

A log file carries a single hash algorithm; builds that track both write
twin files (the sha256 twin beside the sha1 log, suffixed ".sha256").
In memory a record holds per-file ids for every algorithm that was
computed, and writing projects onto one.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from .errors import RawLogParseError
from .gitoid import ArtifactId, HashAlgorithm

TERMINATOR_PREFIX = "==== End of raw info for PID "
TERMINATOR_SUFFIX = " process"
_TERMINATOR_RE = re.compile(
    r"^==== End of raw info for PID (\d+) process$")
_PATH_SEP = " path: "

SHA256_LOG_SUFFIX = ".sha256"


def log_path_for(base_path: str, algorithm: HashAlgorithm) -> str:
    """Twin log naming: sha1 at the base path, sha256 beside it."""
    if algorithm is HashAlgorithm.SHA1:
        return base_path
    return base_path + SHA256_LOG_SUFFIX


@dataclass(frozen=True)
class FileRef:
    """A file observed during a build step, with its gitoid under each
    algorithm that was computed."""

    path: str
    ids: Dict[HashAlgorithm, ArtifactId] = field(hash=False)

    def __post_init__(self) -> None:
        if not os.path.isabs(self.path):
            raise ValueError("FileRef path must be absolute: %r" % self.path)
        for algorithm, artifact_id in self.ids.items():
            if artifact_id.algorithm is not algorithm:
                raise ValueError("id filed under wrong algorithm")

    def id_for(self, algorithm: HashAlgorithm) -> ArtifactId:
        try:
            return self.ids[algorithm]
        except KeyError:
            raise KeyError(
                "no %s id recorded for %s" % (algorithm.value, self.path))


@dataclass(frozen=True)
class RawBuildRecord:
    pid: int
    build_cmd: str
    outfile: FileRef
    infiles: Tuple[FileRef, ...] = ()
    dynlibs: Tuple[FileRef, ...] = ()

    def algorithms(self) -> Tuple[HashAlgorithm, ...]:
        common = set(self.outfile.ids)
        for ref in (*self.infiles, *self.dynlibs):
            common &= set(ref.ids)
        return tuple(a for a in HashAlgorithm if a in common)


def _format_ref(kind: str, ref: FileRef, algorithm: HashAlgorithm) -> str:
    return "%s: %s%s%s" % (kind, ref.id_for(algorithm).hex, _PATH_SEP,
                           ref.path)


def serialize_record(record: RawBuildRecord,
                     algorithm: HashAlgorithm) -> str:
    if "\n" in record.build_cmd:
        raise ValueError("build_cmd must be a single line")
    lines = [_format_ref("outfile", record.outfile, algorithm)]
    lines += [_format_ref("infile", ref, algorithm)
              for ref in record.infiles]
    lines += [_format_ref("dynlib", ref, algorithm)
              for ref in record.dynlibs]
    lines.append("build_cmd: %s" % record.build_cmd)
    lines.append("%s%d%s" % (TERMINATOR_PREFIX, record.pid,
                             TERMINATOR_SUFFIX))
    return "\n".join(lines) + "\n"


def write_raw_log(records: Iterable[RawBuildRecord],
                  algorithm: HashAlgorithm) -> bytes:
    blocks = [serialize_record(r, algorithm) for r in records]
    return "\n".join(blocks).encode("utf-8")


def append_record(log_path: str, record: RawBuildRecord,
                  algorithm: HashAlgorithm) -> None:
    """Append one record block with a single O_APPEND write, so records
    from concurrent build steps never interleave."""
    block = serialize_record(record, algorithm)
    if os.path.exists(log_path) and os.path.getsize(log_path) > 0:
        block = "\n" + block
    fd = os.open(log_path, os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644)
    try:
        os.write(fd, block.encode("utf-8"))
    finally:
        os.close(fd)


def _parse_ref(payload: str, line_no: int,
               algorithm_seen: Optional[HashAlgorithm]
               ) -> Tuple[FileRef, HashAlgorithm]:
    sep = payload.find(_PATH_SEP)
    if sep == -1:
        raise RawLogParseError("missing ' path: ' separator", line_no)
    hex_part = payload[:sep]
    path = payload[sep + len(_PATH_SEP):]
    try:
        artifact_id = ArtifactId.from_hex(hex_part)
    except ValueError as exc:
        raise RawLogParseError(str(exc), line_no)
    if algorithm_seen is not None and artifact_id.algorithm is not algorithm_seen:
        raise RawLogParseError(
            "mixed hash algorithms in one log (%s after %s)"
            % (artifact_id.algorithm.value, algorithm_seen.value), line_no)
    if not os.path.isabs(path):
        raise RawLogParseError("path is not absolute: %r" % path, line_no)
    return FileRef(path, {artifact_id.algorithm: artifact_id}), \
        artifact_id.algorithm


def parse_raw_log(data: bytes) -> List[RawBuildRecord]:
    """Parse one log file.  Errors carry the 1-based line number."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise RawLogParseError("log is not valid UTF-8: %s" % exc, 0)

    records: List[RawBuildRecord] = []
    algorithm: Optional[HashAlgorithm] = None
    outfile: Optional[FileRef] = None
    infiles: List[FileRef] = []
    dynlibs: List[FileRef] = []
    build_cmd: Optional[str] = None
    in_record = False
    start_line = 0

    for line_no, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            if in_record:
                raise RawLogParseError(
                    "record starting at line %d not terminated" % start_line,
                    line_no)
            continue
        terminator = _TERMINATOR_RE.match(line)
        if terminator:
            if not in_record or outfile is None:
                raise RawLogParseError("terminator without a record", line_no)
            if build_cmd is None:
                raise RawLogParseError("record has no build_cmd line",
                                       line_no)
            records.append(RawBuildRecord(
                pid=int(terminator.group(1)), build_cmd=build_cmd,
                outfile=outfile, infiles=tuple(infiles),
                dynlibs=tuple(dynlibs)))
            outfile, build_cmd = None, None
            infiles, dynlibs = [], []
            in_record = False
            continue
        key, sep, payload = line.partition(": ")
        if not sep:
            raise RawLogParseError("malformed line: %r" % line, line_no)
        if not in_record:
            in_record = True
            start_line = line_no
        if key == "outfile":
            if outfile is not None:
                raise RawLogParseError("second outfile in one record",
                                       line_no)
            outfile, algorithm = _parse_ref(payload, line_no, algorithm)
        elif key == "infile":
            if outfile is None:
                raise RawLogParseError("infile before outfile", line_no)
            if build_cmd is not None:
                raise RawLogParseError("infile after build_cmd", line_no)
            ref, algorithm = _parse_ref(payload, line_no, algorithm)
            infiles.append(ref)
        elif key == "dynlib":
            if outfile is None:
                raise RawLogParseError("dynlib before outfile", line_no)
            if build_cmd is not None:
                raise RawLogParseError("dynlib after build_cmd", line_no)
            ref, algorithm = _parse_ref(payload, line_no, algorithm)
            dynlibs.append(ref)
        elif key == "build_cmd":
            if outfile is None:
                raise RawLogParseError("build_cmd before outfile", line_no)
            if build_cmd is not None:
                raise RawLogParseError("second build_cmd in one record",
                                       line_no)
            build_cmd = payload
        else:
            raise RawLogParseError("unknown record key %r" % key, line_no)

    if in_record:
        raise RawLogParseError(
            "record starting at line %d not terminated" % start_line,
            len(text.split("\n")))
    return records


def merge_twin_records(primary: List[RawBuildRecord],
                       twin: List[RawBuildRecord]) -> List[RawBuildRecord]:
    """Fold per-algorithm twin logs back into dual-id records.  Records
    are matched positionally; path sequences must agree."""
    if len(primary) != len(twin):
        raise RawLogParseError(
            "twin logs disagree: %d records vs %d"
            % (len(primary), len(twin)), 0)
    merged = []
    for left, right in zip(primary, twin):
        merged.append(RawBuildRecord(
            pid=left.pid, build_cmd=left.build_cmd,
            outfile=_merge_ref(left.outfile, right.outfile),
            infiles=tuple(_merge_ref(a, b)
                          for a, b in _zip_refs(left.infiles, right.infiles)),
            dynlibs=tuple(_merge_ref(a, b)
                          for a, b in _zip_refs(left.dynlibs,
                                                right.dynlibs))))
    return merged


def _zip_refs(left: Tuple[FileRef, ...], right: Tuple[FileRef, ...]):
    if len(left) != len(right):
        raise RawLogParseError("twin logs disagree on record shape", 0)
    return zip(left, right)


def _merge_ref(left: FileRef, right: FileRef) -> FileRef:
    if left.path != right.path:
        raise RawLogParseError(
            "twin logs disagree on path: %r vs %r"
            % (left.path, right.path), 0)
    ids = dict(left.ids)
    ids.update(right.ids)
    return FileRef(left.path, ids)
