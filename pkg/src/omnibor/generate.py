"""Direct recording of build steps, for tools that know their own
inputs and outputs and do not need tracing.

A caller (a compiler plugin, a code generator, a packaging script)
reports one finished step; this module hashes the files, builds and
stores the input manifests, maintains the mapping and metadata trees,
and optionally embeds the manifest ids into the output.  With no
configured output directory the whole thing is a no-op, so callers can
leave the integration permanently enabled.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from . import elfnote
from .embed import embed_comment, sidecar_write
from .errors import OmniborError
from .gitoid import ArtifactId, HashAlgorithm, gitoids_of_file
from .manifest import ManifestStore, _write_atomic
from .postprocess import _note_embedded, emit_record, metadata_path
from .rawlog import FileRef, RawBuildRecord

OMNIBOR_DIR_ENV = "OMNIBOR_DIR"

EMBED_CHOICES = ("none", "elf", "comment", "sidecar")

DEFAULT_CONTEXT = "direct"


def configured_dir(omnibor_dir: Optional[str] = None) -> Optional[str]:
    """The artifact tree to write into: an explicit argument wins over
    the OMNIBOR_DIR environment variable; neither means disabled."""
    if omnibor_dir is not None:
        return omnibor_dir
    value = os.environ.get(OMNIBOR_DIR_ENV, "")
    return value or None


@dataclass
class StepResult:
    record: RawBuildRecord
    manifest_oids: Dict[HashAlgorithm, ArtifactId]
    embedded: bool = False
    final_ids: Dict[HashAlgorithm, ArtifactId] = field(
        default_factory=dict)
    sidecar: Optional[str] = None


def record_build_step(outfile: str, infiles: Sequence[str],
                      build_cmd: str = "",
                      dynlibs: Sequence[str] = (),
                      omnibor_dir: Optional[str] = None,
                      embed: str = "none",
                      comment_style: str = "hash",
                      context: str = DEFAULT_CONTEXT,
                      pid: Optional[int] = None
                      ) -> Optional[StepResult]:
    """Record one completed build step.  Returns None (and touches
    nothing) when no artifact tree is configured."""
    if embed not in EMBED_CHOICES:
        raise ValueError("unknown embed choice %r" % embed)
    root = configured_dir(omnibor_dir)
    if root is None:
        return None

    def ref(path: str) -> FileRef:
        absolute = os.path.abspath(path)
        return FileRef(absolute, gitoids_of_file(absolute))

    record = RawBuildRecord(
        pid=os.getpid() if pid is None else pid,
        build_cmd=build_cmd or ("generated %s"
                                % os.path.basename(outfile)),
        outfile=ref(outfile),
        infiles=tuple(ref(p) for p in infiles),
        dynlibs=tuple(ref(p) for p in dynlibs))

    store = ManifestStore(root)
    algorithms = tuple(HashAlgorithm)
    oids = emit_record(store, root, context, record, algorithms)
    result = StepResult(record=record, manifest_oids=oids,
                        final_ids=dict(record.outfile.ids))

    if embed == "none":
        return result
    out_path = record.outfile.path
    if embed == "sidecar":
        result.sidecar = sidecar_write(
            os.path.join(root, "sidecars"),
            record.outfile.ids[HashAlgorithm.SHA1],
            oids[HashAlgorithm.SHA1])
        sidecar_write(os.path.join(root, "sidecars"),
                      record.outfile.ids[HashAlgorithm.SHA256],
                      oids[HashAlgorithm.SHA256])
        return result

    with open(out_path, "rb") as handle:
        data = handle.read()
    if embed == "elf":
        if not elfnote.is_elf(data):
            raise OmniborError("%s is not an ELF file" % out_path)
        existing = elfnote.extract_elf(data)
        if existing == oids:
            result.embedded = True  # identical ids already present
            return result
        updated = elfnote.embed_elf(data, oids,
                                    replace=bool(existing))
    else:
        updated = data
        for algorithm in algorithms:
            updated = embed_comment(updated, oids[algorithm],
                                    comment_style)
        if updated == data:
            result.embedded = True
            return result

    mode = os.stat(out_path).st_mode & 0o7777
    _write_atomic(out_path, updated)
    os.chmod(out_path, mode)
    result.embedded = True
    result.final_ids = gitoids_of_file(out_path)
    for algorithm in algorithms:
        store.mapping_put(result.final_ids[algorithm], oids[algorithm])
    _note_embedded(root, context, record, algorithms, result.final_ids)
    return result


def lookup_manifest_oid(artifact_path: str, omnibor_dir: str,
                        algorithm: HashAlgorithm = HashAlgorithm.SHA1
                        ) -> Optional[ArtifactId]:
    """Manifest OID for an artifact on disk, via the mapping index."""
    store = ManifestStore(omnibor_dir)
    artifact_id = gitoids_of_file(artifact_path, (algorithm,))[algorithm]
    return store.mapping_get(artifact_id)
