"""Turn raw build logs into stored input manifests, metadata, and
embedded identifiers.

Work happens in two phases over the log's records, in log order:

  1. per record, per algorithm: build the output's input manifest
     (resolving each input's own manifest through the mapping index),
     store it, point the mapping at it, and write a metadata document;

  2. embed manifest ids into the outputs that still exist with their
     recorded bytes.

Embedding changes an output's bytes, which is exactly why it waits for
phase two: every manifest must see the ids the build actually consumed.
"""

from __future__ import annotations

import os
import shlex
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from . import elfnote
from .analyze import ToolKind, classify, compile_dependency_pass
from .errors import AnalysisError, OmniborError, RawLogParseError
from .gitoid import ArtifactId, HashAlgorithm, gitoids_of_file
from .manifest import InputManifest, ManifestRecord, ManifestStore, \
    _write_atomic
from .rawlog import (FileRef, RawBuildRecord, log_path_for,
                     merge_twin_records, parse_raw_log)

EMBED_NONE = "none"
EMBED_EXECUTABLES = "exe-so"
EMBED_ALL_ELF = "all"
EMBED_MODES = (EMBED_NONE, EMBED_EXECUTABLES, EMBED_ALL_ELF)

_EXECUTABLE_TYPES = (elfnote.ET_EXEC, elfnote.ET_DYN)


@dataclass
class PostProcessResult:
    records: int
    manifests: Dict[HashAlgorithm, int]
    metadata_files: int
    embedded: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)


def metadata_path(omnibor_dir: str, context: str,
                  artifact_id: ArtifactId) -> str:
    return os.path.join(omnibor_dir, "metadata", context,
                        "gitoid_blob_%s" % artifact_id.algorithm.value,
                        artifact_id.hex)


def _metadata_block(record: RawBuildRecord,
                    algorithm: HashAlgorithm) -> str:
    lines = ["outfile: %s path: %s"
             % (record.outfile.id_for(algorithm).hex,
                record.outfile.path)]
    lines += ["infile: %s path: %s" % (ref.id_for(algorithm).hex,
                                       ref.path)
              for ref in record.infiles]
    lines += ["dynlib: %s path: %s" % (ref.id_for(algorithm).hex,
                                       ref.path)
              for ref in record.dynlibs]
    lines.append("build_cmd: %s" % record.build_cmd)
    return "\n".join(lines) + "\n"


def emit_record(store: ManifestStore, omnibor_dir: str, context: str,
                record: RawBuildRecord,
                algorithms: Sequence[HashAlgorithm]
                ) -> Dict[HashAlgorithm, ArtifactId]:
    """Phase-one handling of one record: manifests, mapping entries and
    metadata for every requested algorithm.  Returns the manifest OIDs."""
    oids: Dict[HashAlgorithm, ArtifactId] = {}
    for algorithm in algorithms:
        children = []
        for ref in record.infiles:
            child = ref.id_for(algorithm)
            children.append(ManifestRecord(
                child=child, bom=store.mapping_get(child)))
        manifest = InputManifest.build(algorithm, children)
        oid = store.put(manifest)
        oids[algorithm] = oid
        out_id = record.outfile.id_for(algorithm)
        store.mapping_put(out_id, oid)
        _write_atomic(metadata_path(omnibor_dir, context, out_id),
                      _metadata_block(record, algorithm)
                      .encode("utf-8"))
    return oids


def _note_embedded(omnibor_dir: str, context: str,
                   record: RawBuildRecord,
                   algorithms: Sequence[HashAlgorithm],
                   new_ids: Dict[HashAlgorithm, ArtifactId]) -> None:
    for algorithm in algorithms:
        path = metadata_path(omnibor_dir, context,
                             record.outfile.id_for(algorithm))
        line = "embedded_outfile: %s path: %s\n" % (
            new_ids[algorithm].hex, record.outfile.path)
        with open(path, "a", encoding="utf-8") as handle:
            handle.write(line)


def _should_embed(mode: str, path: str) -> bool:
    if mode == EMBED_NONE:
        return False
    with open(path, "rb") as handle:
        head = handle.read(64)
    if not elfnote.is_elf(head):
        return False
    if mode == EMBED_ALL_ELF:
        return True
    return elfnote.elf_file_type(head) in _EXECUTABLE_TYPES


def embed_into_output(path: str,
                      oids: Dict[HashAlgorithm, ArtifactId],
                      replace: bool = False) -> None:
    mode = os.stat(path).st_mode & 0o7777
    with open(path, "rb") as handle:
        data = handle.read()
    updated = elfnote.embed_elf(data, oids, replace=replace)
    _write_atomic(path, updated)
    os.chmod(path, mode)


def _reconstruct_cwd(record: RawBuildRecord,
                     argv: Sequence[str]) -> Optional[str]:
    """Recover the directory a logged command ran in.  The recorded
    output path is absolute while argv names it relatively; peeling the
    relative part off the absolute one yields the working directory."""
    out_arg = None
    for i, arg in enumerate(argv):
        if arg == "-o" and i + 1 < len(argv):
            out_arg = argv[i + 1]
    if out_arg is None:
        out_arg = os.path.basename(record.outfile.path)
    out_abs = record.outfile.path
    if os.path.isabs(out_arg):
        return os.path.dirname(out_abs)
    suffix = os.path.normpath(out_arg)
    if out_abs.endswith(os.sep + suffix):
        return out_abs[:-len(suffix) - 1] or os.sep
    return os.path.dirname(out_abs)


def _refresh_full_deps(record: RawBuildRecord,
                       warnings: List[str]) -> RawBuildRecord:
    """Re-run the compiler's dependency pass for a compile record and
    fold in any inputs the original build did not log (a build that
    used -MMD never saw its system headers).  Recorded inputs keep
    their recorded ids; only newly discovered files are hashed now."""
    argv = shlex.split(record.build_cmd)
    if classify(argv) != ToolKind.COMPILE:
        return record
    cwd = _reconstruct_cwd(record, argv)
    if cwd is None or not os.path.isdir(cwd):
        warnings.append("cannot re-derive inputs for %s: working "
                        "directory unknown" % record.outfile.path)
        return record
    try:
        dep_map = compile_dependency_pass(argv, cwd)
    except (AnalysisError, OSError) as exc:
        warnings.append("dependency re-pass failed for %s: %s"
                        % (record.outfile.path, exc))
        return record
    known = {ref.path for ref in record.infiles}
    extra: List[FileRef] = []
    for deps in dep_map.values():
        for dep in deps:
            if dep in known or not os.path.isfile(dep):
                continue
            known.add(dep)
            extra.append(FileRef(dep, gitoids_of_file(dep)))
    if not extra:
        return record
    return RawBuildRecord(
        pid=record.pid, build_cmd=record.build_cmd,
        outfile=record.outfile,
        infiles=record.infiles + tuple(extra),
        dynlibs=record.dynlibs)


def load_log_records(log_path: str) -> List[RawBuildRecord]:
    """Read a raw log and, when its sha256 twin sits beside it, merge
    the two into dual-id records."""
    with open(log_path, "rb") as handle:
        primary = parse_raw_log(handle.read())
    twin_path = log_path_for(log_path, HashAlgorithm.SHA256)
    if twin_path != log_path and os.path.isfile(twin_path):
        with open(twin_path, "rb") as handle:
            twin = parse_raw_log(handle.read())
        return merge_twin_records(primary, twin)
    return primary


def post_process(log_path: str, omnibor_dir: str,
                 embed: str = EMBED_EXECUTABLES,
                 context: Optional[str] = None,
                 full_deps: bool = False) -> PostProcessResult:
    """Consume a raw build log into an artifact tree rooted at
    omnibor_dir: objects/ (manifests), mapping/ (artifact to manifest),
    metadata/ (per-step documents), then embed ids into outputs."""
    if embed not in EMBED_MODES:
        raise ValueError("unknown embed mode %r" % embed)
    records = load_log_records(log_path)
    if context is None:
        context = os.path.basename(log_path)
    store = ManifestStore(omnibor_dir)
    result = PostProcessResult(records=len(records),
                               manifests={a: 0 for a in HashAlgorithm},
                               metadata_files=0)

    if not records:
        return result
    algorithms = records[0].algorithms()
    for record in records:
        if record.algorithms() != algorithms:
            raise RawLogParseError(
                "records carry inconsistent algorithm sets", 0)

    oids_per_record: List[Dict[HashAlgorithm, ArtifactId]] = []
    for record in records:
        if full_deps:
            record = _refresh_full_deps(record, result.warnings)
        oids = emit_record(store, omnibor_dir, context, record,
                           algorithms)
        oids_per_record.append(oids)
        for algorithm in algorithms:
            result.manifests[algorithm] += 1
            result.metadata_files += 1

    # Embedding targets: the last record per output path speaks for the
    # file's final bytes.
    last_for_path: Dict[str, int] = {}
    for index, record in enumerate(records):
        last_for_path[record.outfile.path] = index

    for index, record in enumerate(records):
        if last_for_path[record.outfile.path] != index:
            continue
        path = record.outfile.path
        if not os.path.isfile(path):
            result.warnings.append("output vanished: %s" % path)
            continue
        current = gitoids_of_file(path, algorithms)
        if any(current[a] != record.outfile.id_for(a)
               for a in algorithms):
            result.warnings.append(
                "output changed since the build, not embedding: %s"
                % path)
            continue
        try:
            if not _should_embed(embed, path):
                continue
            embed_into_output(path, oids_per_record[index])
        except (OmniborError, ValueError, OSError) as exc:
            result.warnings.append("embedding failed for %s: %s"
                                   % (path, exc))
            continue
        new_ids = gitoids_of_file(path, algorithms)
        for algorithm in algorithms:
            store.mapping_put(new_ids[algorithm],
                              oids_per_record[index][algorithm])
        _note_embedded(omnibor_dir, context, record, algorithms,
                       new_ids)
        result.embedded.append(path)
    return result
