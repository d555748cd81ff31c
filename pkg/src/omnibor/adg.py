"""Artifact dependency graphs built from stored manifests.

The graph rooted at a manifest OID is the transitive closure of its
``bom`` links: nodes are artifact gitoids, edges run from a derived
artifact to each input named by its manifest.  Shared inputs appear
once (the structure is a Merkle DAG, not a tree).  Children whose bom
link names a manifest missing from the store simply stay leaves; a
cyclic bom chain is a hard error because Merkle identities cannot
contain themselves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Set, Tuple

from .errors import CycleError, NotFoundError
from .gitoid import ArtifactId
from .manifest import ManifestStore


@dataclass(frozen=True)
class AdgNode:
    """One artifact in the graph.  `manifest_oid` is the resolved bom link
    (set even when the manifest is absent from the store); `children` is
    empty for leaves."""

    artifact_id: ArtifactId
    manifest_oid: Optional[ArtifactId]
    children: Tuple[ArtifactId, ...]


@dataclass(frozen=True)
class Adg:
    root_oid: ArtifactId
    root_children: Tuple[ArtifactId, ...]
    nodes: Dict[ArtifactId, AdgNode]

    def node_ids(self) -> Set[ArtifactId]:
        return set(self.nodes)


def _sorted_ids(ids: Iterable[ArtifactId]) -> List[ArtifactId]:
    return sorted(ids, key=lambda a: a.hex)


def build_adg(root_oid: ArtifactId, store: ManifestStore) -> Adg:
    """Expand the manifest graph under `root_oid`.

    Raises NotFoundError when the root manifest itself is absent and
    CycleError (naming the OID chain) when bom links loop.
    """
    root_manifest = store.get(root_oid)
    if root_manifest is None:
        raise NotFoundError("root manifest %s not in store" % root_oid.hex)

    nodes: Dict[ArtifactId, AdgNode] = {}
    children_of: Dict[str, Tuple[ArtifactId, ...]] = {}

    # Iterative DFS over manifests; frames hold a position inside one
    # manifest's record list so chains deeper than the Python recursion
    # limit still expand.
    frames: List[List] = [[root_oid, root_manifest, 0]]
    path_hexes: List[str] = [root_oid.hex]
    on_path: Set[str] = {root_oid.hex}

    while frames:
        oid, manifest, index = frames[-1]
        if index == len(manifest.records):
            children_of[oid.hex] = tuple(r.child for r in manifest.records)
            frames.pop()
            on_path.discard(oid.hex)
            path_hexes.pop()
            continue
        frames[-1][2] = index + 1
        record = manifest.records[index]
        child, bom = record.child, record.bom

        existing = nodes.get(child)
        if existing is not None and not (existing.manifest_oid is None and bom is not None):
            continue
        if bom is None:
            nodes.setdefault(child, AdgNode(child, None, ()))
            continue
        if bom.hex in on_path:
            raise CycleError(path_hexes + [bom.hex])
        if bom.hex in children_of:
            nodes[child] = AdgNode(child, bom, children_of[bom.hex])
            continue
        child_manifest = store.get(bom)
        if child_manifest is None:
            nodes[child] = AdgNode(child, bom, ())
            continue
        nodes[child] = AdgNode(child, bom, tuple(r.child for r in child_manifest.records))
        frames.append([bom, child_manifest, 0])
        on_path.add(bom.hex)
        path_hexes.append(bom.hex)

    return Adg(root_oid, tuple(r.child for r in root_manifest.records), nodes)


def leaves(graph: Adg) -> Set[ArtifactId]:
    """Artifacts with no expanded inputs of their own."""
    return {node.artifact_id for node in graph.nodes.values() if not node.children}


def contains(graph: Adg, artifact_id: ArtifactId) -> Optional[List[ArtifactId]]:
    """Witness path from the root down to `artifact_id`, or None.

    Deterministic: children are explored in hex order, so the returned
    path is the lexicographically smallest witness (a shorter path wins
    over any extension of it).  A direct input of the root manifest
    yields a single-element path.
    """
    if artifact_id not in graph.nodes:
        return None
    dead: Set[ArtifactId] = set()
    path: List[ArtifactId] = []
    stack = [iter(_sorted_ids(graph.root_children))]
    while stack:
        advanced = False
        for child in stack[-1]:
            if child in dead:
                continue
            path.append(child)
            if child == artifact_id:
                return list(path)
            stack.append(iter(_sorted_ids(graph.nodes[child].children)))
            advanced = True
            break
        if not advanced:
            stack.pop()
            if path:
                dead.add(path.pop())
    return None


@dataclass(frozen=True)
class AdgDiff:
    only_left: Tuple[ArtifactId, ...]
    only_right: Tuple[ArtifactId, ...]


def diff(left: Adg, right: Adg) -> AdgDiff:
    """Artifact ids present in exactly one of the two graphs, sorted."""
    left_ids = left.node_ids()
    right_ids = right.node_ids()
    return AdgDiff(
        tuple(_sorted_ids(left_ids - right_ids)),
        tuple(_sorted_ids(right_ids - left_ids)),
    )


def export(graph: Adg) -> str:
    """Plain-text adjacency dump: one ``parent-hex -> child-hex`` line per
    edge, sorted.  Top-level edges use the root manifest OID as parent
    (the output artifact's own id is not derivable from its manifest)."""
    edges = set()
    for child in graph.root_children:
        edges.add((graph.root_oid.hex, child.hex))
    for node in graph.nodes.values():
        for child in node.children:
            edges.add((node.artifact_id.hex, child.hex))
    lines = ["%s -> %s" % pair for pair in sorted(edges)]
    return "\n".join(lines) + ("\n" if lines else "")
