"""Command-line behavior: output shapes, exit codes, store plumbing."""

import json
import os
import subprocess
import sys
import zipfile

import pytest

from omnibor.cli import main
from omnibor.gitoid import HashAlgorithm, gitoid_of_file, gitoids_of_file

EMPTY_SHA1 = "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
EMPTY_SHA256 = ("473a0f4c3be8a93681a267e3b1e9a7dcda11854"
                "36fe141f7749120a303721813")


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def project(tmp_path):
    (tmp_path / "hdr.h").write_text("int add(int a, int b);\n")
    (tmp_path / "add.c").write_text(
        '#include "hdr.h"\nint add(int a, int b) { return a + b; }\n')
    return tmp_path


@pytest.fixture
def tree(tmp_path):
    return str(tmp_path / "tree")


# -- id ------------------------------------------------------------------

def test_id_empty_file_both_algorithms(capsys, tmp_path):
    path = tmp_path / "empty"
    path.write_bytes(b"")
    code, out, _ = run(capsys, "id", str(path))
    assert code == 0
    assert out == "sha1 %s\nsha256 %s\n" % (EMPTY_SHA1, EMPTY_SHA256)


def test_id_single_algorithm_bare_value(capsys, tmp_path):
    path = tmp_path / "empty"
    path.write_bytes(b"")
    code, out, _ = run(capsys, "id", str(path), "--algo", "sha1")
    assert (code, out) == (0, EMPTY_SHA1 + "\n")
    code, out, _ = run(capsys, "id", str(path), "--algo", "sha256",
                       "--uri")
    assert out == "gitoid:blob:sha256:%s\n" % EMPTY_SHA256


def test_id_missing_file_is_domain_error(capsys, tmp_path):
    code, out, err = run(capsys, "id", str(tmp_path / "absent"))
    assert code == 1
    assert out == ""
    assert "error:" in err


def test_unknown_algo_is_usage_error(capsys, tmp_path):
    with pytest.raises(SystemExit) as excinfo:
        main(["id", str(tmp_path), "--algo", "md5"])
    assert excinfo.value.code == 2


def test_bad_oid_argument_is_usage_error(capsys, tree):
    with pytest.raises(SystemExit) as excinfo:
        main(["manifest", "show", "zz", "--omnibor-dir", tree])
    assert excinfo.value.code == 2


def test_missing_store_dir_is_usage_error(capsys, monkeypatch, project):
    monkeypatch.delenv("OMNIBOR_DIR", raising=False)
    code, _, err = run(capsys, "manifest", "create",
                       "--output", str(project / "add.c"),
                       "--inputs", str(project / "hdr.h"))
    assert code == 2
    assert "usage error:" in err


# -- manifest ----------------------------------------------------------------

def create_step(capsys, tree, output, inputs):
    code, out, _ = run(capsys, "manifest", "create", "--omnibor-dir",
                       tree, "--output", str(output), "--inputs",
                       *[str(p) for p in inputs])
    assert code == 0
    oids = dict(line.split() for line in out.splitlines())
    return oids["sha1"], oids["sha256"]


def test_manifest_round_trip(capsys, project, tree):
    sha1_oid, _ = create_step(capsys, tree, project / "add.c",
                              [project / "hdr.h"])
    code, out, _ = run(capsys, "manifest", "show", sha1_oid,
                       "--omnibor-dir", tree)
    assert code == 0
    hdr_hex = gitoid_of_file(str(project / "hdr.h"),
                             HashAlgorithm.SHA1).hex
    assert out == "gitoid:blob:sha1\nblob %s\n" % hdr_hex
    code, out, _ = run(capsys, "manifest", "verify", sha1_oid,
                       "--omnibor-dir", tree)
    assert (code, out) == (0, "ok %s\n" % sha1_oid)


def test_manifest_show_unknown_is_domain_error(capsys, tree):
    code, out, err = run(capsys, "manifest", "show", EMPTY_SHA1,
                         "--omnibor-dir", tree)
    assert (code, out) == (1, "")
    assert "no manifest stored" in err


def test_manifest_env_var_names_the_tree(capsys, monkeypatch, project,
                                         tree):
    monkeypatch.setenv("OMNIBOR_DIR", tree)
    code, out, _ = run(capsys, "manifest", "create",
                       "--output", str(project / "add.c"),
                       "--inputs", str(project / "hdr.h"))
    assert code == 0
    assert os.path.isdir(tree)


def test_manifest_verify_detects_corruption(capsys, project, tree):
    sha1_oid, _ = create_step(capsys, tree, project / "add.c",
                              [project / "hdr.h"])
    from omnibor.manifest import ManifestStore
    path = ManifestStore(tree).path_for(
        __import__("omnibor.gitoid", fromlist=["parse_id"])
        .parse_id(sha1_oid))
    with open(path, "ab") as handle:
        handle.write(b"blob %s\n" % (b"0" * 40))
    code, _, err = run(capsys, "manifest", "verify", sha1_oid,
                       "--omnibor-dir", tree)
    assert code == 1
    assert "corrupt" in err


# -- adg ---------------------------------------------------------------------

@pytest.fixture
def chain(capsys, project, tree):
    """add.c+hdr.h -> add.o (a copy), then add.o -> lib (a copy)."""
    obj = project / "add.o"
    obj.write_bytes((project / "add.c").read_bytes() + b"\0obj")
    lib = project / "lib"
    lib.write_bytes(obj.read_bytes() + b"\0lib")
    create_step(capsys, tree, obj, [project / "add.c",
                                    project / "hdr.h"])
    lib_oid, _ = create_step(capsys, tree, lib, [obj])
    return {"lib": lib, "obj": obj, "lib_oid": lib_oid}


def hex_of(path):
    return gitoid_of_file(str(path), HashAlgorithm.SHA1).hex


def test_adg_build_counts(capsys, project, tree, chain):
    code, out, _ = run(capsys, "adg", "build", chain["lib_oid"],
                       "--omnibor-dir", tree)
    assert code == 0
    assert out == "nodes 3\nedges 3\nleaves 2\n"


def test_adg_root_accepts_artifact_gitoid(capsys, project, tree, chain):
    code, out, _ = run(capsys, "adg", "build", hex_of(chain["lib"]),
                       "--omnibor-dir", tree)
    assert code == 0
    assert out.startswith("nodes 3\n")


def test_adg_leaves_sorted(capsys, project, tree, chain):
    code, out, _ = run(capsys, "adg", "leaves", chain["lib_oid"],
                       "--omnibor-dir", tree)
    expected = sorted([hex_of(project / "add.c"),
                       hex_of(project / "hdr.h")])
    assert out.splitlines() == expected


def test_adg_contains_witness(capsys, project, tree, chain):
    code, out, _ = run(capsys, "adg", "contains", chain["lib_oid"],
                       hex_of(project / "add.c"), "--omnibor-dir", tree)
    assert code == 0
    assert out.splitlines() == [hex_of(chain["obj"]),
                                hex_of(project / "add.c")]


def test_adg_contains_absent_exits_one(capsys, tree, chain):
    code, out, err = run(capsys, "adg", "contains", chain["lib_oid"],
                         EMPTY_SHA1, "--omnibor-dir", tree)
    assert (code, out) == (1, "")
    assert "not reached" in err


def test_adg_export_and_diff(capsys, project, tree, chain):
    code, out, _ = run(capsys, "adg", "export", chain["lib_oid"],
                       "--omnibor-dir", tree)
    assert code == 0
    assert len(out.splitlines()) == 3
    assert all(" -> " in line for line in out.splitlines())

    code, out, _ = run(capsys, "adg", "diff", chain["lib_oid"],
                       chain["lib_oid"], "--omnibor-dir", tree)
    assert (code, out) == (0, "")

    obj_oid, _ = create_step(capsys, tree, chain["obj"],
                             [project / "add.c", project / "hdr.h"])
    code, out, _ = run(capsys, "adg", "diff", chain["lib_oid"], obj_oid,
                       "--omnibor-dir", tree)
    assert code == 0
    assert "only-left %s" % hex_of(chain["obj"]) in out


# -- embed / extract / sidecar ------------------------------------------------

GCC = "gcc"


@pytest.fixture
def built_object(capsys, project, tree):
    subprocess.run([GCC, "-c", "add.c", "-o", "add.o"],
                   cwd=project, check=True)
    obj = project / "add.o"
    create_step(capsys, tree, obj, [project / "add.c",
                                    project / "hdr.h"])
    return obj


def test_embed_then_extract(capsys, project, tree, built_object):
    code, out, _ = run(capsys, "embed", str(built_object),
                       "--omnibor-dir", tree)
    assert code == 0
    assert out.splitlines()[0].startswith("SHA1 GitOID: ")
    assert out.splitlines()[1].startswith("SHA256 GitOID: ")

    code, second, _ = run(capsys, "embed", str(built_object),
                          "--omnibor-dir", tree)
    assert (code, second) == (0, out)  # idempotent

    code, extracted, _ = run(capsys, "extract", str(built_object))
    assert (code, extracted) == (0, out)


def test_extract_without_note_exits_one(capsys, project, tree,
                                        built_object):
    code, out, err = run(capsys, "extract", str(built_object))
    assert (code, out) == (1, "")
    assert "no omnibor note" in err


def test_extract_non_elf_is_domain_error(capsys, project):
    code, _, err = run(capsys, "extract", str(project / "add.c"))
    assert code == 1
    assert "not an ELF image" in err


def test_embed_unrecorded_file_is_domain_error(capsys, project, tree):
    os.makedirs(tree, exist_ok=True)
    code, _, err = run(capsys, "embed", str(project / "add.c"),
                       "--omnibor-dir", tree)
    assert code == 1
    assert "no manifest recorded" in err


def test_sidecar_round_trip(capsys, project, tree, built_object):
    code, out, _ = run(capsys, "sidecar", "write", str(built_object),
                       "--omnibor-dir", tree)
    assert code == 0
    paths = out.splitlines()
    assert len(paths) == 2 and all(os.path.isfile(p) for p in paths)

    code, out, _ = run(capsys, "sidecar", "lookup", str(built_object),
                       "--omnibor-dir", tree)
    assert code == 0
    assert out.startswith("gitoid:blob:sha1:")


def test_sidecar_lookup_missing_exits_one(capsys, project, tree):
    os.makedirs(tree, exist_ok=True)
    code, _, err = run(capsys, "sidecar", "lookup",
                       str(project / "add.c"), "--omnibor-dir", tree)
    assert code == 1
    assert "no sidecar" in err


# -- generate ------------------------------------------------------------

def test_generate_without_tree_is_a_quiet_no_op(capsys, monkeypatch,
                                                project):
    monkeypatch.delenv("OMNIBOR_DIR", raising=False)
    code, out, err = run(capsys, "generate",
                         "--output", str(project / "add.c"),
                         "--inputs", str(project / "hdr.h"))
    assert (code, out) == (0, "")
    assert "nothing recorded" in err


def test_generate_matches_manifest_create(capsys, project, tree):
    code, out, _ = run(capsys, "generate", "--omnibor-dir", tree,
                       "--output", str(project / "add.c"),
                       "--inputs", str(project / "hdr.h"))
    assert code == 0
    created = create_step(capsys, tree, project / "add.c",
                          [project / "hdr.h"])
    assert out == "sha1 %s\nsha256 %s\n" % created


# -- wrap / log parse / post-process -------------------------------------

def test_wrap_post_process_pipeline(capfd, monkeypatch, project,
                                    tree):
    monkeypatch.chdir(project)
    (project / "main.c").write_text(
        '#include "hdr.h"\n'
        'int main(void) { return add(2, 2) == 4 ? 0 : 1; }\n')
    log = project / "build.log"
    code = main(["wrap", "--log", str(log), "--",
                 "sh", "-c", "gcc -c add.c && gcc -o prog main.c add.o"])
    captured = capfd.readouterr()
    assert code == 0
    assert "raw log sha1 %s" % log in captured.err
    assert os.path.isfile(str(log) + ".sha256")

    code, out, err = run(capfd, "log", "parse", str(log))
    assert code == 0
    assert "records 2" in err
    assert out.count("==== End of raw info") == 2
    assert "build_cmd: gcc -c add.c" in out

    code, out, err = run(capfd, "post-process", str(log),
                         "--omnibor-dir", tree, "--context", "demo")
    assert code == 0
    assert out == ("records 2\nmanifests sha1 2\nmanifests sha256 2\n"
                   "metadata 4\nembedded 1\n")

    code, out, _ = run(capfd, "extract", str(project / "prog"))
    assert code == 0 and out.startswith("SHA1 GitOID: ")


def test_wrap_without_command_is_usage_error(capsys):
    code, _, err = run(capsys, "wrap", "--")
    assert code == 2
    assert "usage error" in err


def test_wrap_propagates_build_failure(capfd, tmp_path):
    log = tmp_path / "build.log"
    code = main(["wrap", "--log", str(log), "--", "sh", "-c", "exit 3"])
    capfd.readouterr()
    assert code == 3


# -- scan-cve ------------------------------------------------------------

def test_scan_cve_report(capsys, project, tree, chain):
    db = project / "db.json"
    add_hex = hex_of(project / "add.c")
    db.write_text(json.dumps({
        add_hex: {"CVElist": ["CVE-2024-1"]},
        hex_of(project / "hdr.h"): {"CVElist": ["CVE-2020-2"],
                                    "FixedCVElist": ["CVE-2020-2"]},
    }))
    code, out, _ = run(capsys, "scan-cve", "--db", str(db),
                       "--root", hex_of(chain["lib"]),
                       "--omnibor-dir", tree)
    assert code == 0
    report = json.loads(out)
    assert report["CVEList"] == ["CVE-2020-2", "CVE-2024-1"]
    assert report["FixedCVEList"] == ["CVE-2020-2"]
    assert report["OpenCVEs"] == ["CVE-2024-1"]
    witness = report["details"]["CVE-2024-1"][0]["witness"]
    assert witness == [hex_of(chain["obj"]), add_hex]


def test_scan_cve_unknown_root_is_domain_error(capsys, project, tree,
                                               chain):
    db = project / "db.json"
    db.write_text("{}")
    code, _, err = run(capsys, "scan-cve", "--db", str(db),
                       "--root", EMPTY_SHA1, "--omnibor-dir", tree)
    assert code == 1
    assert "no manifest recorded" in err


# -- sbom ----------------------------------------------------------------

def test_sbom_document(capfd, monkeypatch, project, tmp_path):
    monkeypatch.chdir(project)
    (project / "main.c").write_text(
        '#include "hdr.h"\nint main(void) { return add(1, 1) - 2; }\n')
    log = project / "build.log"
    code = main(["wrap", "--log", str(log), "--",
                 "sh", "-c", "gcc -o prog main.c add.c"])
    capfd.readouterr()
    assert code == 0

    subject = tmp_path / "subject.json"
    subject.write_text(json.dumps(
        {"path": str(project / "prog"), "name": "prog",
         "version": "1.0"}))
    mapping = tmp_path / "packages.json"
    mapping.write_text(json.dumps([
        {"name": "demo-src", "version": "0", "prefixes": [str(project)]},
        {"name": "libc6", "version": "2.35",
         "prefixes": ["/lib/x86_64-linux-gnu",
                      "/usr/lib/x86_64-linux-gnu"],
         "purl": "pkg:deb/ubuntu/libc6@2.35"},
    ]))
    code, out, err = run(capfd, "sbom", "--subject", str(subject),
                         "--mapping", str(mapping), "--log", str(log),
                         "--created", "2024-01-01T00:00:00Z")
    assert code == 0
    document = json.loads(out)
    assert document["spdxVersion"] == "SPDX-2.3"
    assert document["creationInfo"]["created"] == "2024-01-01T00:00:00Z"
    names = {p["name"] for p in document["packages"]}
    assert {"prog", "demo-src", "libc6"} <= names
    kinds = {r["relationshipType"] for r in document["relationships"]}
    assert "DESCRIBES" in kinds and "BUILD_DEPENDENCY_OF" in kinds
    assert "unmapped:" in err  # compiler-internal crt objects


def test_sbom_subject_without_path_is_usage_error(capsys, tmp_path):
    subject = tmp_path / "subject.json"
    subject.write_text("{}")
    mapping = tmp_path / "packages.json"
    mapping.write_text("[]")
    log = tmp_path / "log"
    log.write_bytes(b"")
    code, _, err = run(capsys, "sbom", "--subject", str(subject),
                       "--mapping", str(mapping), "--log", str(log))
    assert code == 2
    assert "path" in err


# -- corpus --------------------------------------------------------------

@pytest.fixture
def archive(tmp_path):
    path = tmp_path / "lib-1.0.zip"
    with zipfile.ZipFile(path, "w") as z:
        z.writestr("a.py", "a = 1")
        z.writestr("b.py", "b = 2")
    return path


def test_corpus_index_lookup_analyze(capsys, tmp_path, archive):
    corpus_file = str(tmp_path / "corpus.json")
    code, out, _ = run(capsys, "corpus", "index", str(archive),
                       "--corpus", corpus_file,
                       "--purl", "pkg:generic/lib@1.0",
                       "--vuln", "CVE-2020-1",
                       "--timestamp", "1700000000000")
    assert code == 0
    identifier = out.strip()
    assert identifier == gitoids_of_file(str(archive))[
        HashAlgorithm.SHA256].uri

    code, out, _ = run(capsys, "corpus", "lookup", identifier,
                       "--corpus", corpus_file)
    assert code == 0
    record = json.loads(out)
    assert record["metadata"]["purl"] == "pkg:generic/lib@1.0"
    assert len(record["contains"]) == 2

    copy = tmp_path / "check.zip"
    copy.write_bytes(archive.read_bytes())
    code, out, _ = run(capsys, "corpus", "analyze", str(copy),
                       "--corpus", corpus_file)
    assert code == 0
    assert "lib-1.0.zip, 100 %, CVE-2020-1" in out


def test_corpus_lookup_unknown_exits_one(capsys, tmp_path, archive):
    corpus_file = str(tmp_path / "corpus.json")
    run(capsys, "corpus", "index", str(archive), "--corpus", corpus_file)
    code, out, err = run(capsys, "corpus", "lookup", EMPTY_SHA256,
                         "--corpus", corpus_file)
    assert (code, out) == (1, "")
    assert "no record" in err


# -- module entry point --------------------------------------------------

def test_module_invocation(tmp_path):
    path = tmp_path / "empty"
    path.write_bytes(b"")
    proc = subprocess.run(
        [sys.executable, "-m", "omnibor.cli", "id", str(path)],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout == "sha1 %s\nsha256 %s\n" % (EMPTY_SHA1,
                                                    EMPTY_SHA256)
