"""Identifier embedding for non-ELF artifacts: comment trailers and
sidecar files.

Text artifacts carry their manifest id as a final comment line,
``OmniBOR-gitoid: <uri>`` wrapped in one of three comment styles.
Artifacts that admit neither notes nor comments get a sidecar file:
a file named by the artifact's own gitoid hex whose single line is the
manifest id URI.
"""

from __future__ import annotations

import os
import re
from typing import Dict, Optional

from .gitoid import ArtifactId, HashAlgorithm, parse_uri
from .manifest import _write_atomic

COMMENT_KEY = b"OmniBOR-gitoid: "

COMMENT_STYLES = ("hash", "slash", "block")

_STYLE_WRAPPERS = {
    "hash": (b"# ", b""),
    "slash": (b"// ", b""),
    "block": (b"/* ", b" */"),
}

_COMMENT_RE = re.compile(rb"OmniBOR-gitoid: (gitoid:blob:[a-z0-9]+:[0-9a-f]+)")


def comment_line(oid: ArtifactId, style: str = "hash") -> bytes:
    try:
        prefix, suffix = _STYLE_WRAPPERS[style]
    except KeyError:
        raise ValueError("unknown comment style %r (want one of %s)"
                         % (style, ", ".join(COMMENT_STYLES))) from None
    return prefix + COMMENT_KEY + oid.uri.encode("ascii") + suffix + b"\n"


def embed_comment(text: bytes, oid: ArtifactId, style: str = "hash") -> bytes:
    """Append the trailer comment; idempotent for an identical line."""
    line = comment_line(oid, style)
    if line in text:
        return text
    if text and not text.endswith(b"\n"):
        text += b"\n"
    return text + line


def read_comment(text: bytes) -> Dict[HashAlgorithm, ArtifactId]:
    """Recover embedded ids from comment lines anywhere in the text.
    The last line per algorithm wins (later embeds supersede)."""
    found: Dict[HashAlgorithm, ArtifactId] = {}
    for match in _COMMENT_RE.finditer(text):
        try:
            oid = parse_uri(match.group(1).decode("ascii"))
        except ValueError:
            continue
        found[oid.algorithm] = oid
    return found


def sidecar_path(directory: str | os.PathLike, artifact_id: ArtifactId) -> str:
    return os.path.join(os.fspath(directory), artifact_id.hex)


def sidecar_write(directory: str | os.PathLike, artifact_id: ArtifactId,
                  oid: ArtifactId) -> str:
    """Write the sidecar naming `artifact_id`'s manifest; returns its path."""
    path = sidecar_path(directory, artifact_id)
    _write_atomic(path, (oid.uri + "\n").encode("ascii"))
    return path


def sidecar_lookup(directory: str | os.PathLike,
                   artifact_id: ArtifactId) -> Optional[ArtifactId]:
    try:
        with open(sidecar_path(directory, artifact_id), "rb") as handle:
            text = handle.read().decode("ascii").strip()
    except FileNotFoundError:
        return None
    return parse_uri(text)
