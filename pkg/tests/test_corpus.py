"""Corpus indexing, lookup, persistence, and composition analysis."""

import json
import zipfile

import pytest

from omnibor.corpus import (Corpus, CorpusRecord, archive_member_ids,
                            composition_analysis, overlap_percent)
from omnibor.errors import CorpusError
from omnibor.gitoid import HashAlgorithm, gitoid_of_bytes, gitoid_of_file


def make_zip(path, members):
    with zipfile.ZipFile(path, "w") as archive:
        for name, data in members.items():
            archive.writestr(name, data)
    return str(path)


def member_uri(data):
    if isinstance(data, str):
        data = data.encode()
    return gitoid_of_bytes(data, HashAlgorithm.SHA256).uri


LIB_MEMBERS = {"lib/core.py": "core = 1\n",
               "lib/util.py": "util = 2\n",
               "lib/extra.py": "extra = 3\n",
               "README": "docs\n"}


# -- rounding ----------------------------------------------------------------

@pytest.mark.parametrize("shared,total,expected", [
    (0, 5, 0), (5, 5, 100), (1, 2, 50), (1, 3, 33), (2, 3, 67),
    (1, 8, 13), (1, 200, 1), (1, 400, 0), (9, 10, 90), (0, 0, 0),
    (199, 200, 100), (399, 400, 100), (201, 402, 50),
])
def test_overlap_percent_rounds_half_up(shared, total, expected):
    assert overlap_percent(shared, total) == expected


def test_overlap_percent_matches_naive_rounding():
    for total in range(1, 60):
        for shared in range(total + 1):
            exact = 100 * shared / total
            expected = int(exact + 0.5)
            assert overlap_percent(shared, total) == expected, \
                (shared, total)


# -- indexing ----------------------------------------------------------------

def test_index_package_records(tmp_path):
    path = make_zip(tmp_path / "lib-1.0.zip", LIB_MEMBERS)
    corpus = Corpus()
    package = corpus.index_package(
        path, purl="pkg:generic/lib@1.0", version="1.0",
        vulnerabilities=["CVE-2020-1111"], timestamp=1700000000000)
    assert package.identifier == \
        gitoid_of_file(path, HashAlgorithm.SHA256).uri
    assert package.record_type == "package"
    assert package.filename == "lib-1.0.zip"
    assert len(package.contains) == 4
    assert len(corpus) == 5

    member = corpus.lookup(member_uri(LIB_MEMBERS["lib/core.py"]))
    assert member is not None
    assert member.record_type == "file"
    assert member.filename == "core.py"
    assert member.contained_by == [package.identifier]
    assert member.timestamp == 1700000000000

    body = package.to_json()
    assert body["metadata"]["purl"] == "pkg:generic/lib@1.0"
    assert body["metadata"]["vulnerabilities"] == ["CVE-2020-1111"]
    assert body["containedBy"] == []
    assert body["version"] == 1
    assert body["type"] == "package"
    assert body["timestamp"] == 1700000000000


def test_index_is_flat_over_nested_archives(tmp_path):
    inner = make_zip(tmp_path / "inner.zip", {"deep.txt": "deep"})
    outer = make_zip(tmp_path / "outer.zip",
                     {"inner.zip": open(inner, "rb").read(),
                      "top.txt": "top"})
    corpus = Corpus()
    package = corpus.index_package(outer)
    assert len(package.contains) == 2
    # the nested archive is an opaque member; its own member is not a
    # corpus record
    assert corpus.lookup(member_uri("deep")) is None
    inner_record = corpus.lookup(
        gitoid_of_file(inner, HashAlgorithm.SHA256).uri)
    assert inner_record.filetype == "zip"


def test_index_rejects_non_zip(tmp_path):
    path = tmp_path / "not.zip"
    path.write_bytes(b"plain bytes")
    with pytest.raises(CorpusError, match="not a zip"):
        Corpus().index_package(str(path))


def test_lookup_key_forms(tmp_path):
    path = make_zip(tmp_path / "lib.zip", LIB_MEMBERS)
    corpus = Corpus()
    package = corpus.index_package(path)
    artifact_id = gitoid_of_file(path, HashAlgorithm.SHA256)
    assert corpus.lookup(artifact_id) is package
    assert corpus.lookup(artifact_id.uri) is package
    assert corpus.lookup(artifact_id.hex) is package
    with pytest.raises(CorpusError, match="sha256"):
        corpus.lookup(gitoid_of_bytes(b"x", HashAlgorithm.SHA1))
    assert corpus.lookup(gitoid_of_bytes(
        b"unknown", HashAlgorithm.SHA256)) is None


def test_upsert_merges(tmp_path):
    path = make_zip(tmp_path / "lib.zip", LIB_MEMBERS)
    corpus = Corpus()
    first = corpus.index_package(path, version="1.0")
    count = len(corpus)
    second = corpus.index_package(path, purl="pkg:generic/lib@1.0",
                                  vulnerabilities=["CVE-2024-1"])
    assert second is first
    assert len(corpus) == count
    assert len(first.contains) == 4  # no duplicate edges
    assert first.version == "1.0"
    assert first.purl == "pkg:generic/lib@1.0"
    assert first.vulnerabilities == ["CVE-2024-1"]


def test_save_load_round_trip(tmp_path):
    path = make_zip(tmp_path / "lib.zip", LIB_MEMBERS)
    corpus = Corpus()
    corpus.index_package(path, purl="pkg:generic/lib@1.0",
                         timestamp=1700000000000)
    out = tmp_path / "corpus.json"
    corpus.save(str(out))
    loaded = Corpus.load(str(out))
    assert len(loaded) == len(corpus)

    def snapshot(c):
        return sorted(json.dumps(r.to_json(), sort_keys=True)
                      for r in c.records.values())
    assert snapshot(loaded) == snapshot(corpus)


def test_load_rejects_malformed(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    with pytest.raises(CorpusError, match="records list"):
        Corpus.load(str(bad))
    bad.write_text("{not json")
    with pytest.raises(CorpusError, match="not JSON"):
        Corpus.load(str(bad))
    bad.write_text('{"records": [{"identifier": "zz"}]}')
    with pytest.raises(CorpusError):
        Corpus.load(str(bad))


# -- member enumeration ------------------------------------------------------

def test_archive_member_ids_descends_one_level(tmp_path):
    innermost = make_zip(tmp_path / "innermost.zip",
                         {"core.txt": "center"})
    inner = make_zip(tmp_path / "inner.zip",
                     {"mid.txt": "middle",
                      "innermost.zip": open(innermost, "rb").read()})
    outer = make_zip(tmp_path / "outer.zip",
                     {"top.txt": "top",
                      "inner.zip": open(inner, "rb").read()})
    ids = archive_member_ids(outer, nested_levels=1)
    assert member_uri("top") in ids
    assert member_uri("middle") in ids  # one level down
    assert member_uri("center") not in ids  # two levels down
    with open(innermost, "rb") as handle:
        assert member_uri(handle.read()) in ids


# -- composition analysis ----------------------------------------------------

def test_composition_analysis_overlap(tmp_path):
    lib = make_zip(tmp_path / "lib-1.0.zip", LIB_MEMBERS)
    corpus = Corpus()
    corpus.index_package(lib, vulnerabilities=["CVE-2020-1111"])

    bundle = make_zip(tmp_path / "bundle.zip", {
        "vendored/core.py": LIB_MEMBERS["lib/core.py"],
        "vendored/util.py": LIB_MEMBERS["lib/util.py"],
        "vendored/extra.py": LIB_MEMBERS["lib/extra.py"],
        "app.py": "app = 0\n",
    })
    report = composition_analysis(bundle, corpus)
    assert len(report.matches) == 1
    match = report.matches[0]
    assert match.percent == 75
    assert match.record.filename == "lib-1.0.zip"
    assert "CVE-2020-1111" in match.render()
    assert match.render() == "lib-1.0.zip, 75 %, CVE-2020-1111"


def test_composition_analysis_threshold(tmp_path):
    lib = make_zip(tmp_path / "lib.zip", LIB_MEMBERS)
    corpus = Corpus()
    corpus.index_package(lib)
    bundle = make_zip(tmp_path / "bundle.zip", {
        "only.py": LIB_MEMBERS["lib/core.py"]})
    report = composition_analysis(bundle, corpus)
    assert report.matches == []  # 25 % is below the cut
    report = composition_analysis(bundle, corpus, threshold=25)
    assert [m.percent for m in report.matches] == [25]


def test_composition_analysis_identical_archive(tmp_path):
    lib = make_zip(tmp_path / "lib.zip", LIB_MEMBERS)
    corpus = Corpus()
    corpus.index_package(lib)
    copy = tmp_path / "copy.zip"
    copy.write_bytes(open(lib, "rb").read())
    report = composition_analysis(str(copy), corpus)
    assert report.matches[0].percent == 100


def test_composition_analysis_sees_into_nested_zip(tmp_path):
    lib = make_zip(tmp_path / "lib.zip", LIB_MEMBERS)
    corpus = Corpus()
    corpus.index_package(lib)
    vendored = make_zip(tmp_path / "vendored.zip", {
        "core.py": LIB_MEMBERS["lib/core.py"],
        "util.py": LIB_MEMBERS["lib/util.py"],
        "extra.py": LIB_MEMBERS["lib/extra.py"],
        "README": LIB_MEMBERS["README"]})
    bundle = make_zip(tmp_path / "bundle.zip",
                      {"vendored.zip": open(vendored, "rb").read()})
    report = composition_analysis(bundle, corpus)
    assert report.matches[0].percent == 100


def test_composition_report_renders_no_cves(tmp_path):
    lib = make_zip(tmp_path / "clean-2.1.zip", LIB_MEMBERS)
    corpus = Corpus()
    corpus.index_package(lib)
    copy = tmp_path / "check.zip"
    copy.write_bytes(open(lib, "rb").read())
    report = composition_analysis(str(copy), corpus)
    text = report.render()
    assert "check.zip:" in text
    assert "clean-2.1.zip, 100 %, No CVEs" in text

    empty = composition_analysis(str(copy), Corpus())
    assert "no known packages matched" in empty.render()
