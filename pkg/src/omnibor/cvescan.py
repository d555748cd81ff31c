"""CVE scanning over artifact dependency graphs.

The database maps artifact ids to the CVEs they introduce (CVElist) and
the CVEs they fix (FixedCVElist).  Scanning an artifact walks its whole
graph: every node's entry contributes, and a CVE is open for the
artifact when something in the graph introduces it and nothing fixes
it.  Each hit carries a witness chain showing where the matched id sits
under the scanned artifact, so the report can say not just "affected"
but through which build steps.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from .adg import Adg, contains
from .errors import CveDbError
from .gitoid import ArtifactId

DB_INTRODUCED_KEY = "CVElist"
DB_FIXED_KEY = "FixedCVElist"
REPORT_INTRODUCED_KEY = "CVEList"
REPORT_FIXED_KEY = "FixedCVEList"
REPORT_OPEN_KEY = "OpenCVEs"


@dataclass(frozen=True)
class CveEntry:
    introduced: Tuple[str, ...] = ()
    fixed: Tuple[str, ...] = ()


def _parse_db_key(key: str) -> ArtifactId:
    """Database keys name a blob either bare (`<hex>`) or in manifest
    record syntax (`blob <hex>` / `blob <hex> bom <hex>`).  The bom
    qualifier documents which manifest the entry was derived from; the
    blob hex alone identifies the artifact."""
    parts = key.split()
    if parts and parts[0] == "blob":
        # a leading "blob" commits the key to record syntax
        if len(parts) == 2:
            hex_part = parts[1]
        elif len(parts) == 4 and parts[2] == "bom":
            hex_part = parts[1]
        else:
            raise CveDbError("malformed database key: %r" % key)
    elif len(parts) == 1:
        hex_part = parts[0]
    else:
        raise CveDbError("malformed database key: %r" % key)
    try:
        return ArtifactId.from_hex(hex_part)
    except ValueError as exc:
        raise CveDbError("bad artifact id in key %r: %s" % (key, exc))


def load_cvedb(source) -> Dict[ArtifactId, CveEntry]:
    """Load a CVE database from a path, file object, or dict."""
    if isinstance(source, dict):
        raw = source
    elif hasattr(source, "read"):
        raw = json.load(source)
    else:
        with open(source, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
    if not isinstance(raw, dict):
        raise CveDbError("database must be a JSON object")
    db: Dict[ArtifactId, CveEntry] = {}
    for key, value in raw.items():
        artifact_id = _parse_db_key(key)
        if not isinstance(value, dict):
            raise CveDbError("entry for %r must be an object" % key)
        unknown = set(value) - {DB_INTRODUCED_KEY, DB_FIXED_KEY}
        if unknown:
            raise CveDbError("entry for %r has unknown fields %s"
                             % (key, sorted(unknown)))
        introduced = value.get(DB_INTRODUCED_KEY, [])
        fixed = value.get(DB_FIXED_KEY, [])
        for lst in (introduced, fixed):
            if not isinstance(lst, list) or \
                    not all(isinstance(c, str) for c in lst):
                raise CveDbError(
                    "CVE lists for %r must be arrays of strings" % key)
        previous = db.get(artifact_id)
        if previous is not None:
            introduced = sorted(set(previous.introduced) |
                                set(introduced))
            fixed = sorted(set(previous.fixed) | set(fixed))
        db[artifact_id] = CveEntry(tuple(sorted(set(introduced))),
                                   tuple(sorted(set(fixed))))
    return db


@dataclass(frozen=True)
class CveFinding:
    artifact: ArtifactId
    entry: CveEntry
    witness: Tuple[str, ...]  # hex chain from the scanned root down
    build_cmd: Optional[str] = None


@dataclass
class CveReport:
    target: ArtifactId
    findings: List[CveFinding] = field(default_factory=list)

    @property
    def cve_list(self) -> List[str]:
        return sorted({c for f in self.findings
                       for c in f.entry.introduced})

    @property
    def fixed_list(self) -> List[str]:
        return sorted({c for f in self.findings
                       for c in f.entry.fixed})

    @property
    def open_cves(self) -> List[str]:
        return sorted(set(self.cve_list) - set(self.fixed_list))

    def details(self) -> Dict[str, List[dict]]:
        """Per-CVE grouping: which artifacts raised it and through
        which build command each entered the picture."""
        grouped: Dict[str, List[dict]] = {}
        for finding in self.findings:
            item = {"artifact": finding.artifact.hex,
                    "witness": list(finding.witness)}
            if finding.build_cmd:
                item["build_cmd"] = finding.build_cmd
            for cve in finding.entry.introduced:
                grouped.setdefault(cve, []).append(dict(item))
            for cve in finding.entry.fixed:
                grouped.setdefault(cve, []).append(
                    dict(item, fixes=True))
        return {cve: grouped[cve] for cve in sorted(grouped)}

    def to_dict(self) -> dict:
        return {
            "artifact": self.target.hex,
            REPORT_INTRODUCED_KEY: self.cve_list,
            REPORT_FIXED_KEY: self.fixed_list,
            REPORT_OPEN_KEY: self.open_cves,
            "details": self.details(),
        }


def find_build_cmd(omnibor_dir: str,
                   artifact_id: ArtifactId) -> Optional[str]:
    """The build command recorded for an artifact, from any metadata
    context in the tree."""
    base = os.path.join(omnibor_dir, "metadata")
    if not os.path.isdir(base):
        return None
    for context in sorted(os.listdir(base)):
        path = os.path.join(
            base, context,
            "gitoid_blob_%s" % artifact_id.algorithm.value,
            artifact_id.hex)
        if not os.path.isfile(path):
            continue
        with open(path, "r", encoding="utf-8") as handle:
            for line in handle:
                if line.startswith("build_cmd: "):
                    return line[len("build_cmd: "):].rstrip("\n")
    return None


def scan_adg(target: ArtifactId, adg: Adg,
             db: Dict[ArtifactId, CveEntry],
             build_cmd_lookup: Optional[
                 Callable[[ArtifactId], Optional[str]]] = None
             ) -> CveReport:
    """Match every artifact in the graph (and the scanned artifact
    itself) against the database."""
    report = CveReport(target=target)

    def command_for(parent: Optional[ArtifactId]) -> Optional[str]:
        if build_cmd_lookup is None or parent is None:
            return None
        return build_cmd_lookup(parent)

    entry = db.get(target)
    if entry is not None:
        report.findings.append(CveFinding(
            artifact=target, entry=entry, witness=(),
            build_cmd=command_for(target)))

    for node_id in sorted(adg.nodes, key=lambda i: i.hex):
        entry = db.get(node_id)
        if entry is None:
            continue
        witness = contains(adg, node_id) or []
        parent = target if len(witness) <= 1 else witness[-2]
        report.findings.append(CveFinding(
            artifact=node_id, entry=entry,
            witness=tuple(step.hex for step in witness),
            build_cmd=command_for(parent)))
    return report
