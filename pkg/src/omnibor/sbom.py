"""SPDX 2.3 document generation from recorded build steps.

The build's records say which file paths went into the target; a
caller-supplied package map says which paths belong to which package.
Inputs the build produced itself are intermediate and never mapped.
The target package carries gitoid external references, so a consumer
holding the artifact tree can resolve the SBOM back to exact input
manifests.
"""

from __future__ import annotations

import hashlib
import os.path
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Optional, Sequence, Tuple

from .gitoid import ArtifactId, HashAlgorithm, gitoids_of_file
from .rawlog import RawBuildRecord

TOOL_NAME = "omnibor-toolkit"

try:
    from importlib.metadata import version as _dist_version
    TOOL_VERSION = _dist_version(TOOL_NAME)
except Exception:  # not installed as a distribution
    TOOL_VERSION = "0.1.0"

# one dash per offending character keeps distinct names distinct
_IDSTRING_SANITIZER = re.compile(r"[^A-Za-z0-9.-]")
_HEX64 = re.compile(r"[0-9a-f]{64}\Z")


@dataclass(frozen=True)
class PackageDescriptor:
    """One package a build may draw inputs from.  `prefixes` are the
    filesystem subtrees (or exact files) the package owns."""

    name: str
    version: str = ""
    prefixes: Tuple[str, ...] = ()
    purl: Optional[str] = None
    supplier: Optional[str] = None

    def owns(self, path: str) -> Optional[int]:
        """Length of the longest prefix claiming `path`, or None.
        Compares resolved shapes, so `a/b/../c` falls under `a/c`."""
        candidate = os.path.normpath(path)
        best = None
        for prefix in self.prefixes:
            clean = os.path.normpath(prefix)
            if candidate == clean or candidate.startswith(clean + "/"):
                if best is None or len(clean) > best:
                    best = len(clean)
        return best


def spdx_package_id(name: str, token: str) -> str:
    """The suffix disambiguates same-named packages.  A token that is
    already a content hash keeps its leading 16 digits; any other
    stable token (purl, name@version) is digested first."""
    safe = _IDSTRING_SANITIZER.sub("-", name)
    if _HEX64.match(token):
        suffix = token[:16]
    else:
        suffix = hashlib.sha256(token.encode("utf-8")).hexdigest()[:16]
    return "SPDXRef-Package-%s-%s" % (safe, suffix)


@dataclass
class DependencyMap:
    """Which packages supplied the build's inputs."""

    buildtime: List[PackageDescriptor] = field(default_factory=list)
    runtime: List[PackageDescriptor] = field(default_factory=list)
    unmapped: List[str] = field(default_factory=list)


def _best_owner(path: str, packages: Sequence[PackageDescriptor]
                ) -> Optional[PackageDescriptor]:
    best: Tuple[int, Optional[PackageDescriptor]] = (-1, None)
    for package in packages:
        claimed = package.owns(path)
        if claimed is not None and claimed > best[0]:
            best = (claimed, package)
    return best[1]


def derive_dependencies(records: Sequence[RawBuildRecord],
                        packages: Sequence[PackageDescriptor]
                        ) -> DependencyMap:
    """Split the build's external inputs between packages.  Inputs the
    build itself produced are intermediates and are skipped; dynamic
    library inputs count as runtime dependencies, everything else as
    build-time.  Paths no package claims come back as diagnostics."""
    produced = {record.outfile.path for record in records}
    build_paths: List[str] = []
    runtime_paths: List[str] = []
    seen = set()
    for record in records:
        for ref in record.infiles:
            if ref.path in produced or ref.path in seen:
                continue
            seen.add(ref.path)
            build_paths.append(ref.path)
        for ref in record.dynlibs:
            if ref.path in seen:
                continue
            seen.add(ref.path)
            runtime_paths.append(ref.path)

    result = DependencyMap()
    chosen_build: Dict[str, PackageDescriptor] = {}
    chosen_runtime: Dict[str, PackageDescriptor] = {}
    for path in build_paths:
        owner = _best_owner(path, packages)
        if owner is None:
            result.unmapped.append(path)
        else:
            chosen_build.setdefault(owner.name, owner)
    for path in runtime_paths:
        owner = _best_owner(path, packages)
        if owner is None:
            result.unmapped.append(path)
        else:
            chosen_runtime.setdefault(owner.name, owner)
    result.buildtime = [chosen_build[n] for n in sorted(chosen_build)]
    result.runtime = [chosen_runtime[n] for n in sorted(chosen_runtime)]
    return result


def _package_json(package: PackageDescriptor, spdx_id: str,
                  external_refs: Optional[List[dict]] = None) -> dict:
    entry = {
        "name": package.name,
        "SPDXID": spdx_id,
        "versionInfo": package.version or "NOASSERTION",
        "downloadLocation": "NOASSERTION",
        "filesAnalyzed": False,
        "supplier": package.supplier or "NOASSERTION",
    }
    refs = list(external_refs or [])
    if package.purl:
        refs.append({
            "referenceCategory": "PACKAGE_MANAGER",
            "referenceType": "purl",
            "referenceLocator": package.purl,
        })
    if refs:
        entry["externalRefs"] = refs
    return entry


def _gitoid_refs(ids: Dict[HashAlgorithm, ArtifactId]) -> List[dict]:
    return [{
        "referenceCategory": "PERSISTENT_ID",
        "referenceType": "gitoid",
        "referenceLocator": ids[algorithm].uri,
    } for algorithm in HashAlgorithm if algorithm in ids]


@dataclass
class SbomResult:
    document: dict
    target_spdx_id: str
    unmapped: List[str]


def generate_sbom(target_path: str,
                  records: Sequence[RawBuildRecord],
                  packages: Sequence[PackageDescriptor],
                  target_package: Optional[PackageDescriptor] = None,
                  doc_name: Optional[str] = None,
                  created: Optional[str] = None) -> SbomResult:
    """Build the SPDX document for one built artifact.

    Deterministic except for the timestamp, which callers can inject;
    the document namespace is derived from the artifact's own id, so
    regenerating the SBOM for identical bytes names the same document.
    """
    target_ids = gitoids_of_file(target_path)
    sha256_hex = target_ids[HashAlgorithm.SHA256].hex
    if target_package is None:
        target_package = PackageDescriptor(
            name=target_path.rsplit("/", 1)[-1], version="")
    name = doc_name or target_package.name
    target_id = spdx_package_id(target_package.name, sha256_hex)

    deps = derive_dependencies(records, packages)
    dep_ids = {p.name: spdx_package_id(p.name, p.purl or
                                       "%s@%s" % (p.name, p.version))
               for p in deps.buildtime + deps.runtime}

    package_entries = [_package_json(target_package, target_id,
                                     _gitoid_refs(target_ids))]
    emitted = set()
    for package in deps.runtime + deps.buildtime:
        if package.name in emitted:
            continue
        emitted.add(package.name)
        package_entries.append(
            _package_json(package, dep_ids[package.name]))

    relationships = [{
        "spdxElementId": "SPDXRef-DOCUMENT",
        "relationshipType": "DESCRIBES",
        "relatedSpdxElement": target_id,
    }]
    for package in deps.runtime:
        relationships.append({
            "spdxElementId": target_id,
            "relationshipType": "DEPENDS_ON",
            "relatedSpdxElement": dep_ids[package.name],
        })
    for package in deps.buildtime:
        relationships.append({
            "spdxElementId": dep_ids[package.name],
            "relationshipType": "BUILD_DEPENDENCY_OF",
            "relatedSpdxElement": target_id,
        })

    if created is None:
        created = datetime.now(timezone.utc).strftime(
            "%Y-%m-%dT%H:%M:%SZ")
    document = {
        "spdxVersion": "SPDX-2.3",
        "dataLicense": "CC0-1.0",
        "SPDXID": "SPDXRef-DOCUMENT",
        "name": name,
        "documentNamespace":
            "https://spdx.org/spdxdocs/%s-%s" % (
                _IDSTRING_SANITIZER.sub("-", name), sha256_hex[:16]),
        "creationInfo": {
            "created": created,
            "creators": ["Tool: %s-%s" % (TOOL_NAME, TOOL_VERSION)],
        },
        "packages": package_entries,
        "relationships": relationships,
    }
    return SbomResult(document=document, target_spdx_id=target_id,
                      unmapped=sorted(set(deps.unmapped)))
