"""Command-line front end.

One subcommand per library operation: identifier computation, manifest
management, graph queries, note embedding and extraction, build
wrapping, log post-processing, vulnerability scanning, SBOM rendering,
and the package corpus.  Machine-readable results go to stdout,
diagnostics to stderr.  Exit status is 0 on success, 1 on domain
errors (missing artifacts, corrupt inputs), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Dict, Optional, Sequence

from . import adg as adgmod
from . import elfnote
from .corpus import Corpus, composition_analysis
from .cvescan import find_build_cmd, load_cvedb, scan_adg
from .embed import sidecar_lookup, sidecar_write
from .errors import NotFoundError, OmniborError
from .generate import (DEFAULT_CONTEXT, EMBED_CHOICES, configured_dir,
                       record_build_step)
from .gitoid import (ArtifactId, HashAlgorithm, gitoid_of_bytes,
                     gitoids_of_file, parse_id)
from .manifest import ManifestStore, _write_atomic, parse, serialize
from .postprocess import EMBED_EXECUTABLES, EMBED_MODES, post_process
from .rawlog import parse_raw_log, write_raw_log
from .sbom import PackageDescriptor, generate_sbom
from .wrap import wrap_build

SIDECAR_SUBDIR = "sidecars"


class UsageError(Exception):
    """Bad invocation that argparse could not catch itself."""


def _id_arg(text: str) -> ArtifactId:
    try:
        return parse_id(text)
    except (ValueError, OmniborError) as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _algos_arg(name: str) -> Sequence[HashAlgorithm]:
    if name == "both":
        return tuple(HashAlgorithm)
    return (HashAlgorithm.from_name(name),)


def _store_root(args) -> str:
    root = configured_dir(args.omnibor_dir)
    if root is None:
        raise UsageError(
            "no artifact tree named; pass --omnibor-dir or set OMNIBOR_DIR")
    return root


def _resolve_root(store: ManifestStore, oid: ArtifactId):
    """An on-disk graph root from either side of the mapping: an
    artifact's gitoid resolves through mapping/, a manifest OID is
    accepted directly.  Returns (manifest oid, artifact id or None)."""
    manifest_oid = store.mapping_get(oid)
    if manifest_oid is not None:
        return manifest_oid, oid
    if os.path.isfile(store.path_for(oid)):
        return oid, None
    raise NotFoundError("no manifest recorded for %s" % oid.hex)


def _print_note_ids(ids: Dict[HashAlgorithm, ArtifactId]) -> None:
    for algorithm in HashAlgorithm:
        if algorithm in ids:
            print("%s GitOID: %s"
                  % (algorithm.value.upper(), ids[algorithm].hex))


def _print_manifest_oids(oids: Dict[HashAlgorithm, ArtifactId]) -> None:
    for algorithm in HashAlgorithm:
        if algorithm in oids:
            print("%s %s" % (algorithm.value, oids[algorithm].hex))


# -- subcommand handlers -----------------------------------------------------

def cmd_id(args) -> int:
    algorithms = _algos_arg(args.algo)
    ids = gitoids_of_file(args.file, algorithms)
    for algorithm in algorithms:
        value = ids[algorithm].uri if args.uri else ids[algorithm].hex
        if len(algorithms) == 1:
            print(value)
        else:
            print("%s %s" % (algorithm.value, value))
    return 0


def cmd_manifest_create(args) -> int:
    root = _store_root(args)
    result = record_build_step(args.output, args.inputs,
                               omnibor_dir=root, context=args.context)
    _print_manifest_oids(result.manifest_oids)
    return 0


def cmd_manifest_show(args) -> int:
    store = ManifestStore(_store_root(args))
    manifest = store.get(args.oid)
    if manifest is None:
        raise NotFoundError("no manifest stored for %s" % args.oid.hex)
    sys.stdout.write(serialize(manifest).decode("ascii"))
    return 0


def cmd_manifest_verify(args) -> int:
    store = ManifestStore(_store_root(args))
    path = store.path_for(args.oid)
    try:
        with open(path, "rb") as handle:
            data = handle.read()
    except FileNotFoundError:
        raise NotFoundError("no manifest stored for %s" % args.oid.hex)
    actual = gitoid_of_bytes(data, args.oid.algorithm)
    if actual != args.oid:
        print("corrupt %s (content hashes to %s)"
              % (args.oid.hex, actual.hex), file=sys.stderr)
        return 1
    parse(data)  # raises on malformed content
    print("ok %s" % args.oid.hex)
    return 0


def cmd_adg_build(args) -> int:
    store = ManifestStore(_store_root(args))
    root_oid, _ = _resolve_root(store, args.root)
    graph = adgmod.build_adg(root_oid, store)
    edges = adgmod.export(graph).splitlines()
    print("nodes %d" % len(graph.node_ids()))
    print("edges %d" % len(edges))
    print("leaves %d" % len(adgmod.leaves(graph)))
    return 0


def cmd_adg_leaves(args) -> int:
    store = ManifestStore(_store_root(args))
    root_oid, _ = _resolve_root(store, args.root)
    graph = adgmod.build_adg(root_oid, store)
    for leaf in sorted(adgmod.leaves(graph), key=lambda i: i.hex):
        print(leaf.uri if args.uri else leaf.hex)
    return 0


def cmd_adg_contains(args) -> int:
    store = ManifestStore(_store_root(args))
    root_oid, _ = _resolve_root(store, args.root)
    graph = adgmod.build_adg(root_oid, store)
    witness = adgmod.contains(graph, args.artifact)
    if witness is None:
        print("%s not reached from %s" % (args.artifact.hex,
                                          args.root.hex), file=sys.stderr)
        return 1
    for step in witness:
        print(step.hex)
    return 0


def cmd_adg_diff(args) -> int:
    store = ManifestStore(_store_root(args))
    left_oid, _ = _resolve_root(store, args.left)
    right_oid, _ = _resolve_root(store, args.right)
    result = adgmod.diff(adgmod.build_adg(left_oid, store),
                         adgmod.build_adg(right_oid, store))
    for artifact in result.only_left:
        print("only-left %s" % artifact.hex)
    for artifact in result.only_right:
        print("only-right %s" % artifact.hex)
    return 0


def cmd_adg_export(args) -> int:
    store = ManifestStore(_store_root(args))
    root_oid, _ = _resolve_root(store, args.root)
    sys.stdout.write(adgmod.export(adgmod.build_adg(root_oid, store)))
    return 0


def cmd_embed(args) -> int:
    store = ManifestStore(_store_root(args))
    elf_path = os.path.abspath(args.elf)
    ids = gitoids_of_file(elf_path)
    oids = {}
    for algorithm, artifact_id in ids.items():
        oid = store.mapping_get(artifact_id)
        if oid is not None:
            oids[algorithm] = oid
    if not oids:
        raise NotFoundError("no manifest recorded for %s" % elf_path)
    with open(elf_path, "rb") as handle:
        data = handle.read()
    if not elfnote.is_elf(data):
        raise OmniborError("%s is not an ELF image" % elf_path)
    existing = elfnote.extract_elf(data)
    if existing == oids:
        _print_note_ids(oids)  # wanted ids already present
        return 0
    if existing and not args.replace:
        raise OmniborError(
            "%s already carries a note; use --replace" % elf_path)
    updated = elfnote.embed_elf(data, oids, replace=bool(existing))
    mode = os.stat(elf_path).st_mode & 0o7777
    _write_atomic(elf_path, updated)
    os.chmod(elf_path, mode)
    # embedding changed the bytes; keep the new ids resolvable
    new_ids = gitoids_of_file(elf_path)
    for algorithm, oid in oids.items():
        store.mapping_put(new_ids[algorithm], oid)
    _print_note_ids(oids)
    return 0


def cmd_extract(args) -> int:
    with open(args.elf, "rb") as handle:
        data = handle.read()
    if not elfnote.is_elf(data):
        raise OmniborError("%s is not an ELF image" % args.elf)
    ids = elfnote.extract_elf(data)
    if not ids:
        print("no omnibor note in %s" % args.elf, file=sys.stderr)
        return 1
    _print_note_ids(ids)
    return 0


def cmd_sidecar_write(args) -> int:
    root = _store_root(args)
    store = ManifestStore(root)
    directory = os.path.join(root, SIDECAR_SUBDIR)
    ids = gitoids_of_file(args.file)
    written = []
    for algorithm in HashAlgorithm:
        oid = store.mapping_get(ids[algorithm])
        if oid is not None:
            written.append(sidecar_write(directory, ids[algorithm], oid))
    if not written:
        raise NotFoundError("no manifest recorded for %s" % args.file)
    for path in written:
        print(path)
    return 0


def cmd_sidecar_lookup(args) -> int:
    root = _store_root(args)
    algorithm = HashAlgorithm.from_name(args.algo)
    artifact_id = gitoids_of_file(args.file, (algorithm,))[algorithm]
    oid = sidecar_lookup(os.path.join(root, SIDECAR_SUBDIR), artifact_id)
    if oid is None:
        print("no sidecar for %s" % args.file, file=sys.stderr)
        return 1
    print(oid.uri)
    return 0


def cmd_generate(args) -> int:
    result = record_build_step(
        args.output, args.inputs, build_cmd=args.build_cmd,
        dynlibs=args.dynlibs, omnibor_dir=args.omnibor_dir,
        embed=args.embed, comment_style=args.comment_style,
        context=args.context)
    if result is None:
        print("no artifact tree configured; nothing recorded",
              file=sys.stderr)
        return 0
    _print_manifest_oids(result.manifest_oids)
    if result.sidecar:
        print("sidecar %s" % result.sidecar)
    elif result.embedded:
        print("embedded %s" % os.path.abspath(args.output))
    return 0


def cmd_wrap(args) -> int:
    command = list(args.command)
    if command and command[0] == "--":
        command = command[1:]
    if not command:
        raise UsageError("no build command given after --")
    result = wrap_build(command, args.log)
    for algorithm in HashAlgorithm:
        print("raw log %s %s" % (algorithm.value,
                                 result.log_paths[algorithm]),
              file=sys.stderr)
    return result.returncode


def cmd_log_parse(args) -> int:
    with open(args.log, "rb") as handle:
        records = parse_raw_log(handle.read())
    print("records %d" % len(records), file=sys.stderr)
    if records:
        algorithm = records[0].algorithms()[0]
        sys.stdout.write(write_raw_log(records, algorithm)
                         .decode("utf-8"))
    return 0


def cmd_post_process(args) -> int:
    result = post_process(args.log, _store_root(args), embed=args.embed,
                          context=args.context, full_deps=args.full_deps)
    for warning in result.warnings:
        print("warning: %s" % warning, file=sys.stderr)
    print("records %d" % result.records)
    for algorithm in HashAlgorithm:
        if algorithm in result.manifests:
            print("manifests %s %d" % (algorithm.value,
                                       result.manifests[algorithm]))
    print("metadata %d" % result.metadata_files)
    print("embedded %d" % len(result.embedded))
    return 0


def cmd_scan_cve(args) -> int:
    root = _store_root(args)
    store = ManifestStore(root)
    db = load_cvedb(args.db)
    root_oid, artifact = _resolve_root(store, args.root)
    graph = adgmod.build_adg(root_oid, store)
    target = artifact if artifact is not None else args.root
    report = scan_adg(target, graph, db,
                      build_cmd_lookup=lambda a: find_build_cmd(root, a))
    json.dump(report.to_dict(), sys.stdout, indent=2, sort_keys=True)
    print()
    return 0


def _load_packages(path: str) -> Sequence[PackageDescriptor]:
    with open(path, "r", encoding="utf-8") as handle:
        raw = json.load(handle)
    if isinstance(raw, dict):
        raw = raw.get("packages", [])
    packages = []
    for entry in raw:
        packages.append(PackageDescriptor(
            name=entry["name"], version=entry.get("version", ""),
            prefixes=tuple(entry.get("prefixes", ())),
            purl=entry.get("purl"), supplier=entry.get("supplier")))
    return packages


def cmd_sbom(args) -> int:
    with open(args.subject, "r", encoding="utf-8") as handle:
        subject = json.load(handle)
    try:
        target_path = subject["path"]
    except KeyError:
        raise UsageError("subject description needs a \"path\" field")
    target_package = PackageDescriptor(
        name=subject.get("name", os.path.basename(target_path)),
        version=subject.get("version", ""),
        purl=subject.get("purl"), supplier=subject.get("supplier"))
    with open(args.log, "rb") as handle:
        records = parse_raw_log(handle.read())
    result = generate_sbom(target_path, records,
                           _load_packages(args.mapping),
                           target_package=target_package,
                           doc_name=subject.get("document_name"),
                           created=args.created)
    for path in result.unmapped:
        print("unmapped: %s" % path, file=sys.stderr)
    json.dump(result.document, sys.stdout, indent=2)
    print()
    return 0


def _open_corpus(path: str) -> Corpus:
    if os.path.exists(path):
        return Corpus.load(path)
    return Corpus()


def cmd_corpus_index(args) -> int:
    corpus = _open_corpus(args.corpus)
    record = corpus.index_package(
        args.archive, purl=args.purl, version=args.pkg_version,
        vulnerabilities=args.vuln or (), timestamp=args.timestamp)
    corpus.save(args.corpus)
    print(record.identifier)
    return 0


def cmd_corpus_lookup(args) -> int:
    corpus = Corpus.load(args.corpus)
    record = corpus.lookup(args.id)
    if record is None:
        print("no record for %s" % args.id, file=sys.stderr)
        return 1
    json.dump(record.to_json(), sys.stdout, indent=2)
    print()
    return 0


def cmd_corpus_analyze(args) -> int:
    corpus = Corpus.load(args.corpus)
    report = composition_analysis(args.archive, corpus,
                                  threshold=args.threshold)
    print(report.render())
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="omnibor",
        description="Content-addressed build provenance tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    dir_opt = argparse.ArgumentParser(add_help=False)
    dir_opt.add_argument(
        "--omnibor-dir", metavar="DIR", default=None,
        help="artifact tree root (overrides $OMNIBOR_DIR)")

    p = sub.add_parser("id", help="print a file's gitoid")
    p.add_argument("file")
    p.add_argument("--algo", choices=("sha1", "sha256", "both"),
                   default="both")
    p.add_argument("--uri", action="store_true",
                   help="print gitoid URIs instead of bare hex")
    p.set_defaults(func=cmd_id)

    p = sub.add_parser("manifest", help="manage stored input manifests")
    msub = p.add_subparsers(dest="manifest_command", required=True)
    c = msub.add_parser("create", parents=[dir_opt],
                        help="store the manifest for one build step")
    c.add_argument("--output", required=True)
    c.add_argument("--inputs", nargs="+", required=True, metavar="FILE")
    c.add_argument("--context", default="cli")
    c.set_defaults(func=cmd_manifest_create)
    c = msub.add_parser("show", parents=[dir_opt],
                        help="print a stored manifest")
    c.add_argument("oid", type=_id_arg)
    c.set_defaults(func=cmd_manifest_show)
    c = msub.add_parser("verify", parents=[dir_opt],
                        help="check a stored manifest against its id")
    c.add_argument("oid", type=_id_arg)
    c.set_defaults(func=cmd_manifest_verify)

    p = sub.add_parser("adg", help="build and query dependency graphs")
    asub = p.add_subparsers(dest="adg_command", required=True)
    c = asub.add_parser("build", parents=[dir_opt])
    c.add_argument("root", type=_id_arg)
    c.set_defaults(func=cmd_adg_build)
    c = asub.add_parser("leaves", parents=[dir_opt])
    c.add_argument("root", type=_id_arg)
    c.add_argument("--uri", action="store_true")
    c.set_defaults(func=cmd_adg_leaves)
    c = asub.add_parser("contains", parents=[dir_opt])
    c.add_argument("root", type=_id_arg)
    c.add_argument("artifact", type=_id_arg)
    c.set_defaults(func=cmd_adg_contains)
    c = asub.add_parser("diff", parents=[dir_opt])
    c.add_argument("left", type=_id_arg)
    c.add_argument("right", type=_id_arg)
    c.set_defaults(func=cmd_adg_diff)
    c = asub.add_parser("export", parents=[dir_opt])
    c.add_argument("root", type=_id_arg)
    c.set_defaults(func=cmd_adg_export)

    p = sub.add_parser("embed", parents=[dir_opt],
                       help="write the recorded manifest ids into an "
                            "ELF note")
    p.add_argument("elf")
    p.add_argument("--replace", action="store_true",
                   help="overwrite a differing existing note")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract", help="print the ids embedded in an "
                                       "ELF note")
    p.add_argument("elf")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("sidecar", help="manifest ids next to "
                                       "non-embeddable artifacts")
    ssub = p.add_subparsers(dest="sidecar_command", required=True)
    c = ssub.add_parser("write", parents=[dir_opt])
    c.add_argument("file")
    c.set_defaults(func=cmd_sidecar_write)
    c = ssub.add_parser("lookup", parents=[dir_opt])
    c.add_argument("file")
    c.add_argument("--algo", choices=("sha1", "sha256"), default="sha1")
    c.set_defaults(func=cmd_sidecar_lookup)

    p = sub.add_parser("generate", parents=[dir_opt],
                       help="record one build step directly")
    p.add_argument("--output", required=True)
    p.add_argument("--inputs", nargs="+", required=True, metavar="FILE")
    p.add_argument("--dynlibs", nargs="*", default=(), metavar="FILE")
    p.add_argument("--build-cmd", default="")
    p.add_argument("--embed", choices=EMBED_CHOICES, default="none")
    p.add_argument("--comment-style", default="hash")
    p.add_argument("--context", default=DEFAULT_CONTEXT)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("wrap", help="run a build with logging shims "
                                    "on PATH")
    p.add_argument("--log", default="omnibor.rawlog", metavar="PATH")
    p.add_argument("command", nargs=argparse.REMAINDER,
                   metavar="-- COMMAND")
    p.set_defaults(func=cmd_wrap)

    p = sub.add_parser("log", help="raw build log utilities")
    lsub = p.add_subparsers(dest="log_command", required=True)
    c = lsub.add_parser("parse", help="validate a log and print it "
                                      "normalized")
    c.add_argument("log")
    c.set_defaults(func=cmd_log_parse)

    p = sub.add_parser("post-process", parents=[dir_opt],
                       help="turn a raw log into manifests, mappings, "
                            "metadata and embedded notes")
    p.add_argument("log")
    p.add_argument("--embed", choices=EMBED_MODES,
                   default=EMBED_EXECUTABLES)
    p.add_argument("--full-deps", action="store_true",
                   help="re-run compiler dependency passes to pick up "
                        "system headers")
    p.add_argument("--context", default=None)
    p.set_defaults(func=cmd_post_process)

    p = sub.add_parser("scan-cve", parents=[dir_opt],
                       help="match a built artifact's graph against a "
                            "CVE database")
    p.add_argument("--db", required=True)
    p.add_argument("--root", required=True, type=_id_arg)
    p.set_defaults(func=cmd_scan_cve)

    p = sub.add_parser("sbom", help="render an SPDX document for a "
                                    "built artifact")
    p.add_argument("--subject", required=True,
                   help="JSON file describing the artifact (path, "
                        "name, version, purl)")
    p.add_argument("--mapping", required=True,
                   help="JSON file mapping path prefixes to packages")
    p.add_argument("--log", required=True)
    p.add_argument("--created", default=None,
                   help="timestamp to stamp into the document")
    p.set_defaults(func=cmd_sbom)

    p = sub.add_parser("corpus", help="package corpus indexing and "
                                      "composition analysis")
    csub = p.add_subparsers(dest="corpus_command", required=True)
    c = csub.add_parser("index")
    c.add_argument("archive")
    c.add_argument("--corpus", required=True, metavar="FILE")
    c.add_argument("--purl", default=None)
    c.add_argument("--pkg-version", default="")
    c.add_argument("--vuln", action="append", metavar="CVE")
    c.add_argument("--timestamp", type=int, default=None,
                   help="record timestamp, milliseconds since epoch")
    c.set_defaults(func=cmd_corpus_index)
    c = csub.add_parser("lookup")
    c.add_argument("id")
    c.add_argument("--corpus", required=True, metavar="FILE")
    c.set_defaults(func=cmd_corpus_lookup)
    c = csub.add_parser("analyze")
    c.add_argument("archive")
    c.add_argument("--corpus", required=True, metavar="FILE")
    c.add_argument("--threshold", type=int, default=50)
    c.set_defaults(func=cmd_corpus_analyze)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print("usage error: %s" % exc, file=sys.stderr)
        return 2
    except OmniborError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
