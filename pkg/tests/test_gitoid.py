"""Identifier tests: frozen values, the git oracle, URIs, properties."""

import random
import subprocess

import pytest

from omnibor.gitoid import (
    BOTH_ALGORITHMS,
    ArtifactId,
    HashAlgorithm,
    gitoid_of_bytes,
    gitoid_of_file,
    gitoids_of_file,
    parse_id,
    parse_uri,
    render_uri,
)

from conftest import HASH_CORPUS

EMPTY_SHA1 = "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
HELLO_SHA1 = "ce013625030ba8dba906f756967f9e9ca394464a"


def test_frozen_known_values():
    assert gitoid_of_bytes(b"").hex == EMPTY_SHA1
    assert gitoid_of_bytes(b"hello\n").hex == HELLO_SHA1
    assert gitoid_of_bytes(b"", HashAlgorithm.SHA256).hex != EMPTY_SHA1
    assert len(gitoid_of_bytes(b"", HashAlgorithm.SHA256).hex) == 64


def corpus_files():
    files = sorted(HASH_CORPUS.iterdir())
    assert len(files) >= 50
    return files


def test_sha1_matches_git_oracle_over_corpus():
    files = corpus_files()
    listing = "".join(str(p) + "\n" for p in files)
    out = subprocess.run(
        ["git", "hash-object", "--stdin-paths"],
        input=listing, capture_output=True, text=True, check=True,
    ).stdout.split()
    assert len(out) == len(files)
    for path, expected in zip(files, out):
        assert gitoid_of_file(path).hex == expected, path.name


def test_sha256_matches_git_oracle(tmp_path):
    subprocess.run(["git", "init", "-q", "--object-format=sha256", str(tmp_path)],
                   check=True)
    files = corpus_files()[:12]
    listing = "".join(str(p) + "\n" for p in files)
    out = subprocess.run(
        ["git", "hash-object", "--stdin-paths"],
        input=listing, capture_output=True, text=True, check=True,
        cwd=tmp_path,
    ).stdout.split()
    for path, expected in zip(files, out):
        assert gitoid_of_file(path, HashAlgorithm.SHA256).hex == expected, path.name


def test_file_and_bytes_agree_and_streaming_chunks(tmp_path):
    data = random.Random(7).randbytes(3 * (1 << 20) + 17)
    path = tmp_path / "big.bin"
    path.write_bytes(data)
    both = gitoids_of_file(path)
    for algo in BOTH_ALGORITHMS:
        assert both[algo] == gitoid_of_bytes(data, algo)


def test_determinism():
    data = b"same input"
    assert gitoid_of_bytes(data) == gitoid_of_bytes(data)


def test_uri_rendering_and_parsing():
    oid = gitoid_of_bytes(b"hello\n")
    uri = render_uri(oid)
    assert uri == "gitoid:blob:sha1:" + HELLO_SHA1
    assert parse_uri(uri) == oid
    oid256 = gitoid_of_bytes(b"hello\n", HashAlgorithm.SHA256)
    assert parse_uri(oid256.uri) == oid256
    assert parse_id(HELLO_SHA1) == oid
    assert parse_id(uri) == oid


@pytest.mark.parametrize("bad", [
    "gitoid:blob:sha1:" + "G" * 40,
    "gitoid:blob:sha1:" + "A" * 40,          # uppercase refused
    "gitoid:blob:sha1:" + "a" * 39,
    "gitoid:blob:sha1:" + "a" * 64,          # wrong length for algo
    "gitoid:blob:md5:" + "a" * 32,
    "gitoid:tree:sha1:" + "a" * 40,
    "gitoid:blob:sha1",
    "sha1:" + "a" * 40,
    "",
])
def test_uri_rejects_malformed(bad):
    with pytest.raises(ValueError):
        parse_uri(bad)


def test_artifact_id_validates_digest_length():
    with pytest.raises(ValueError):
        ArtifactId(HashAlgorithm.SHA1, b"\x00" * 19)
    with pytest.raises(ValueError):
        ArtifactId.from_hex("a" * 40, HashAlgorithm.SHA256)


def test_injectivity_over_random_inputs():
    rng = random.Random(0xFEED)
    inputs = set()
    while len(inputs) < 10_000:
        inputs.add(rng.randbytes(rng.randrange(64)))
    digests = {gitoid_of_bytes(data).digest for data in inputs}
    assert len(digests) == len(inputs)


def test_length_prefix_separates_ambiguous_contents():
    # "blob 2\0ab" vs "blob 3\0abc": the header commits to the length,
    # so prefix-related contents never collide structurally
    assert gitoid_of_bytes(b"ab") != gitoid_of_bytes(b"ab\x00")


def test_stream_short_read_raises(tmp_path):
    from omnibor.gitoid import gitoid_of_stream
    import io
    with pytest.raises(ValueError):
        gitoid_of_stream(io.BytesIO(b"abc"), 10)
