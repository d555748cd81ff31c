"""Content-addressed artifact identifiers (gitoids).

A gitoid is the hash of a git blob object.  The preimage is the ASCII
prefix ``blob``, one space, the decimal byte length of the content, a
NUL byte, then the content itself.  Hashing that preimage with sha1 or
sha256 yields the same value ``git hash-object`` prints, so any git
binary doubles as a reference implementation.

Identifiers render as lowercase hex or as URIs of the form
``gitoid:blob:<algorithm>:<hex>``.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from enum import Enum
from typing import BinaryIO, Dict, Iterable, Tuple

URI_PREFIX = "gitoid:blob:"

_CHUNK_SIZE = 1 << 20


class HashAlgorithm(Enum):
    """Supported gitoid hash algorithms."""

    SHA1 = "sha1"
    SHA256 = "sha256"

    @property
    def digest_size(self) -> int:
        return 20 if self is HashAlgorithm.SHA1 else 32

    @property
    def hex_length(self) -> int:
        return self.digest_size * 2

    def new_hasher(self):
        return hashlib.new(self.value)

    @classmethod
    def from_name(cls, name: str) -> "HashAlgorithm":
        for algo in cls:
            if algo.value == name:
                return algo
        raise ValueError("unknown hash algorithm: %r" % (name,))

    @classmethod
    def from_hex_length(cls, length: int) -> "HashAlgorithm":
        for algo in cls:
            if algo.hex_length == length:
                return algo
        raise ValueError("no hash algorithm has %d-char hex digests" % (length,))


BOTH_ALGORITHMS: Tuple[HashAlgorithm, ...] = (HashAlgorithm.SHA1, HashAlgorithm.SHA256)

_HEX_DIGITS = frozenset("0123456789abcdef")


@dataclass(frozen=True, order=True)
class ArtifactId:
    """A gitoid: hash algorithm plus raw digest bytes.

    Ordering and equality follow (algorithm name, digest), so sorting a
    list of ids of one algorithm sorts by hex.
    """

    algorithm: HashAlgorithm
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != self.algorithm.digest_size:
            raise ValueError(
                "%s digest must be %d bytes, got %d"
                % (self.algorithm.value, self.algorithm.digest_size, len(self.digest))
            )

    @property
    def hex(self) -> str:
        return self.digest.hex()

    @property
    def uri(self) -> str:
        return "%s%s:%s" % (URI_PREFIX, self.algorithm.value, self.hex)

    @classmethod
    def from_hex(cls, text: str, algorithm: HashAlgorithm | None = None) -> "ArtifactId":
        """Parse a lowercase hex digest; infer the algorithm from its length
        unless one is given explicitly."""
        if not text or not set(text) <= _HEX_DIGITS:
            raise ValueError("invalid gitoid hex: %r" % (text,))
        inferred = HashAlgorithm.from_hex_length(len(text))
        if algorithm is not None and algorithm is not inferred:
            raise ValueError(
                "hex length %d does not match algorithm %s"
                % (len(text), algorithm.value)
            )
        return cls(inferred, bytes.fromhex(text))

    def __str__(self) -> str:
        return self.uri


def _blob_header(length: int) -> bytes:
    return b"blob %d\x00" % length


def gitoid_of_bytes(data: bytes, algorithm: HashAlgorithm = HashAlgorithm.SHA1) -> ArtifactId:
    """Gitoid of an in-memory byte string."""
    hasher = algorithm.new_hasher()
    hasher.update(_blob_header(len(data)))
    hasher.update(data)
    return ArtifactId(algorithm, hasher.digest())


def gitoid_of_stream(
    stream: BinaryIO,
    length: int,
    algorithms: Iterable[HashAlgorithm] = BOTH_ALGORITHMS,
) -> Dict[HashAlgorithm, ArtifactId]:
    """Gitoids of `length` bytes read from `stream`, all algorithms in one pass.

    Raises OSError-free ValueError if the stream ends early: the header
    commits to `length`, so a short read would silently mis-identify.
    """
    hashers = {algo: algo.new_hasher() for algo in algorithms}
    header = _blob_header(length)
    for hasher in hashers.values():
        hasher.update(header)
    remaining = length
    while remaining > 0:
        chunk = stream.read(min(_CHUNK_SIZE, remaining))
        if not chunk:
            raise ValueError("stream ended %d bytes short of declared length" % remaining)
        for hasher in hashers.values():
            hasher.update(chunk)
        remaining -= len(chunk)
    return {algo: ArtifactId(algo, h.digest()) for algo, h in hashers.items()}


def gitoids_of_file(
    path: str | os.PathLike,
    algorithms: Iterable[HashAlgorithm] = BOTH_ALGORITHMS,
) -> Dict[HashAlgorithm, ArtifactId]:
    """Gitoids of a file's contents for several algorithms, single read."""
    size = os.stat(path).st_size
    with open(path, "rb") as stream:
        return gitoid_of_stream(stream, size, algorithms)


def gitoid_of_file(
    path: str | os.PathLike,
    algorithm: HashAlgorithm = HashAlgorithm.SHA1,
) -> ArtifactId:
    """Gitoid of a file's contents, streamed in chunks."""
    return gitoids_of_file(path, (algorithm,))[algorithm]


def render_uri(artifact_id: ArtifactId) -> str:
    """Render ``gitoid:blob:<algorithm>:<hex>``."""
    return artifact_id.uri


def parse_uri(text: str) -> ArtifactId:
    """Parse a gitoid URI.  Rejects unknown schemes, algorithms, uppercase or
    wrong-length hex."""
    if not text.startswith(URI_PREFIX):
        raise ValueError("not a gitoid URI: %r" % (text,))
    rest = text[len(URI_PREFIX):]
    algo_name, sep, hex_part = rest.partition(":")
    if not sep:
        raise ValueError("gitoid URI missing hex part: %r" % (text,))
    algorithm = HashAlgorithm.from_name(algo_name)
    artifact_id = ArtifactId.from_hex(hex_part)
    if artifact_id.algorithm is not algorithm:
        raise ValueError("hex length does not match %s in %r" % (algo_name, text))
    return artifact_id


def parse_id(text: str) -> ArtifactId:
    """Parse either a bare hex digest or a gitoid URI."""
    if text.startswith(URI_PREFIX):
        return parse_uri(text)
    return ArtifactId.from_hex(text)
