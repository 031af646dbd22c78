"""Typed multimodal semantic graph: nodes, relations, validation, ablations.

The joint graph holds a scene subgraph (entity nodes plus the pooled-region
super node), a concept subgraph, and a single context super node wired to
both sides.  Every directed edge is stored with its reverse companion
(relation name suffixed ``_inv``) so message passing reaches both endpoints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ValidationError

# Reserved context relations: pooled-region link, question/answer grounding
# links, and the context-to-scene link.
REL_QA_CONCEPT = "qa_concept"
REL_QUESTION = "question"
REL_ANSWER = "answer"
REL_IMAGE = "image"
REL_CROSS_MODAL = "cross_modal"
RESERVED_RELATIONS = (REL_QA_CONCEPT, REL_QUESTION, REL_ANSWER, REL_IMAGE)

INV_SUFFIX = "_inv"


class NodeType(Enum):
    Z = "Z"  # context super node
    P = "P"  # pooled-region super node
    S = "S"  # scene entity
    Q = "Q"  # question entity (open-domain wiring)
    C = "C"  # concept entity


NODE_TYPE_ORDER = (NodeType.Z, NodeType.P, NodeType.S, NodeType.Q, NodeType.C)
N_NODE_TYPES = len(NODE_TYPE_ORDER)

SCENE_SIDE = (NodeType.S, NodeType.P)
CONCEPT_SIDE = (NodeType.C, NodeType.Q)


def node_type_onehot(t: NodeType) -> np.ndarray:
    v = np.zeros(N_NODE_TYPES)
    v[NODE_TYPE_ORDER.index(t)] = 1.0
    return v


def inverse_relation(name: str) -> str:
    if name.endswith(INV_SUFFIX):
        return name[: -len(INV_SUFFIX)]
    return name + INV_SUFFIX


@dataclass
class Node:
    id: str
    node_type: NodeType
    feature: np.ndarray | None = None
    label: str = ""
    feature_ref: str | None = None


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    relation: str


class Graph:
    """Directed typed graph; edges always carry their reverse companion."""

    def __init__(self):
        self.nodes: dict[str, Node] = {}
        self.edges: list[Edge] = []

    def add_node(self, node: Node) -> None:
        if node.id in self.nodes:
            raise ValidationError(f"duplicate node id {node.id!r}")
        self.nodes[node.id] = node

    def add_edge(self, src: str, dst: str, relation: str, reverse: bool = True) -> None:
        if src == dst:
            raise ValidationError(f"self-loop on {src!r} rejected")
        for end in (src, dst):
            if end not in self.nodes:
                raise ValidationError(f"edge endpoint {end!r} does not exist")
        self.edges.append(Edge(src, dst, relation))
        if reverse:
            self.edges.append(Edge(dst, src, inverse_relation(relation)))

    def has_edge(self, src: str, dst: str, relation: str | None = None) -> bool:
        return any(
            e.src == src and e.dst == dst and (relation is None or e.relation == relation)
            for e in self.edges
        )

    def neighborhood(self, node_id: str) -> list[tuple[str, str]]:
        """Senders of incoming edges, paired with the edge relation name."""
        if node_id not in self.nodes:
            raise ValidationError(f"unknown node {node_id!r}")
        return [(e.src, e.relation) for e in self.edges if e.dst == node_id]

    def neighbor_ids(self, node_id: str) -> set[str]:
        return {n for n, _ in self.neighborhood(node_id)}

    def relation_names(self) -> set[str]:
        return {e.relation for e in self.edges}


class MultimodalSemanticGraph(Graph):
    """Scene and concept subgraphs joined by the context super node."""

    def __init__(self):
        super().__init__()
        self.z_id: str | None = None
        self.p_id: str | None = None

    def add_node(self, node: Node) -> None:
        super().add_node(node)
        if node.node_type is NodeType.Z:
            self.z_id = node.id
        elif node.node_type is NodeType.P:
            self.p_id = node.id

    def scene_entity_ids(self) -> list[str]:
        return [n.id for n in self.nodes.values() if n.node_type is NodeType.S]

    def concept_entity_ids(self) -> list[str]:
        return [n.id for n in self.nodes.values() if n.node_type in CONCEPT_SIDE]

    def neighborhood(
        self, node_id: str, modality: str | None = None
    ) -> list[tuple[str, str]]:
        """Neighbors, optionally restricted to one side for the context node.

        ``modality`` in {"scene", "concept"} filters by the neighbor's type;
        it is ignored for non-context nodes.
        """
        pairs = super().neighborhood(node_id)
        if modality is None or self.nodes[node_id].node_type is not NodeType.Z:
            return pairs
        side = SCENE_SIDE if modality == "scene" else CONCEPT_SIDE
        return [(n, r) for n, r in pairs if self.nodes[n].node_type in side]

    # -- validation ----------------------------------------------------------

    def validate(self, n_scene_cap: int = 20, n_concept_cap: int = 60) -> list[str]:
        """Check every structural invariant; returns all violations."""
        violations: list[str] = []
        scene = self.scene_entity_ids()
        concepts = self.concept_entity_ids()
        z_nodes = [n.id for n in self.nodes.values() if n.node_type is NodeType.Z]
        p_nodes = [n.id for n in self.nodes.values() if n.node_type is NodeType.P]

        if len(scene) > n_scene_cap:
            violations.append(f"scene node cap {n_scene_cap} exceeded ({len(scene)})")
        if len(concepts) > n_concept_cap:
            violations.append(f"concept node cap {n_concept_cap} exceeded ({len(concepts)})")
        if len(z_nodes) != 1:
            violations.append(f"expected exactly one context node, found {len(z_nodes)}")
        if len(p_nodes) > 1:
            violations.append(f"expected at most one pooled-region node, found {len(p_nodes)}")

        pair_counts: dict[Edge, int] = {}
        for e in self.edges:
            pair_counts[e] = pair_counts.get(e, 0) + 1
        for e in self.edges:
            companion = Edge(e.dst, e.src, inverse_relation(e.relation))
            if pair_counts.get(companion, 0) < 1:
                violations.append(
                    f"edge {e.src}->{e.dst} ({e.relation}) lacks reverse companion"
                )

        scene_set = set(scene)
        for pid in p_nodes:
            linked = {n for n, r in super().neighborhood(pid) if r in (REL_QA_CONCEPT, inverse_relation(REL_QA_CONCEPT))}
            missing = scene_set - linked
            if missing:
                violations.append(
                    f"pooled-region node not fully connected to scene entities (missing {sorted(missing)})"
                )
        for zid in z_nodes:
            linked = {n for n, r in super().neighborhood(zid) if r in (REL_IMAGE, inverse_relation(REL_IMAGE))}
            missing = scene_set - (linked & scene_set)
            if missing:
                violations.append(
                    f"context node not fully image-linked to scene entities (missing {sorted(missing)})"
                )

        side_of = {NodeType.S: "s", NodeType.P: "s", NodeType.C: "c", NodeType.Q: "c", NodeType.Z: "z"}
        for e in self.edges:
            a = side_of[self.nodes[e.src].node_type]
            b = side_of[self.nodes[e.dst].node_type]
            if {a, b} == {"s", "c"}:
                violations.append(
                    f"direct scene-concept edge {e.src}->{e.dst} ({e.relation})"
                )
            base = e.relation[: -len(INV_SUFFIX)] if e.relation.endswith(INV_SUFFIX) else e.relation
            if base in (REL_QUESTION, REL_ANSWER) and "z" not in (a, b):
                violations.append(
                    f"{base} edge {e.src}->{e.dst} does not touch the context node"
                )
        return violations

    # -- ablation rewiring ---------------------------------------------------

    def to_ablation(
        self,
        variant: str,
        alignment: list[tuple[str, str]] | None = None,
    ) -> Graph:
        """Merge both subgraphs into one edge set around the shared context node.

        ``single`` keeps the edge multiset as-is; ``single_with_cross_modal``
        additionally links each aligned (scene node, concept node) pair.
        """
        if variant not in ("single", "single_with_cross_modal"):
            raise ValidationError(f"unknown ablation variant {variant!r}")
        g = Graph()
        for node in self.nodes.values():
            g.add_node(
                Node(node.id, node.node_type, node.feature, node.label, node.feature_ref)
            )
        g.edges = list(self.edges)
        if variant == "single_with_cross_modal":
            for sv, cv in alignment or []:
                for end in (sv, cv):
                    if end not in g.nodes:
                        raise ValidationError(f"alignment references missing node {end!r}")
                g.add_edge(sv, cv, REL_CROSS_MODAL)
        return g

    # -- JSON round trip (features live in the feature store) ----------------

    def to_json_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "id": n.id,
                    "type": n.node_type.value,
                    "label": n.label,
                    "feature_ref": n.feature_ref,
                }
                for n in self.nodes.values()
            ],
            "edges": [
                {"src": e.src, "dst": e.dst, "relation": e.relation} for e in self.edges
            ],
        }

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1, sort_keys=True))

    @classmethod
    def from_json_dict(cls, d: dict) -> "MultimodalSemanticGraph":
        g = cls()
        for n in d["nodes"]:
            g.add_node(
                Node(n["id"], NodeType(n["type"]), None, n.get("label", ""), n.get("feature_ref"))
            )
        for e in d["edges"]:
            g.edges.append(Edge(e["src"], e["dst"], e["relation"]))
        return g
