"""Construction of the multimodal semantic graph from structured inputs.

Pipeline per QA example: ingest scene triples once per image, then per
answer candidate ground phrases, retrieve and prune a concept subgraph,
link image-local entities, pool the best-matching region features into the
scene-side super node, and wire the context node to both subgraphs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .graph import (
    REL_ANSWER,
    REL_IMAGE,
    REL_QA_CONCEPT,
    REL_QUESTION,
    MultimodalSemanticGraph,
    Node,
    NodeType,
)
from .stores import FeatureSuite, Region, RegionStore, TripleStore

DEFAULT_STOP_LIST = frozenset({"person", "man", "woman", "thing"})
DEFAULT_SEPARATOR = " / "


@dataclass
class BuilderConfig:
    n_scene_cap: int = 20
    n_concept_cap: int = 60
    relevance_threshold: float = 0.6
    top_k_regions: int = 10
    stop_list: frozenset[str] = DEFAULT_STOP_LIST
    link_context_to_pooled: bool = True  # treat the pooled-region node as a scene neighbor of the context node
    separator: str = DEFAULT_SEPARATOR


@dataclass
class SceneTriple:
    subject: str
    predicate: str
    object: str
    subject_ref: str
    object_ref: str
    confidence: float = 1.0


@dataclass
class QaExample:
    id: str
    image_id: str
    question: str
    answers: list[str]
    gold: int
    rationales: list[str] | None = None
    rationale_gold: int | None = None
    answer_class: int | None = None  # open-domain label


@dataclass
class GroundedPhrase:
    text: str
    concept: str
    source: str  # question | answer | image


@dataclass
class BuildReport:
    dropped_triples: list[SceneTriple] = field(default_factory=list)
    pruned_concepts: list[tuple[str, float]] = field(default_factory=list)
    kept_concepts: list[tuple[str, float]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "dropped_triples": [
                [t.subject, t.predicate, t.object] for t in self.dropped_triples
            ],
            "pruned_concepts": [[c, s] for c, s in self.pruned_concepts],
            "kept_concepts": [[c, s] for c, s in self.kept_concepts],
            "warnings": self.warnings,
        }


@dataclass
class SceneSubgraph:
    """Entities and predicate edges before super-node wiring."""

    entities: list[Node]  # type S, ids "s:<k>"
    edges: list[tuple[str, str, str]]  # (src id, relation, dst id)
    labels: list[str]


@dataclass
class ConceptSubgraph:
    nodes: list[Node]  # type C, ids "c:<name>"
    edges: list[tuple[str, str, str]]
    grounded: list[GroundedPhrase]


def concept_node_id(name: str) -> str:
    return f"c:{name}"


# ---------------------------------------------------------------------------
# scene ingestion


def ingest_scene_graph(
    triples: list[SceneTriple],
    features: FeatureSuite,
    cap: int = 20,
) -> tuple[SceneSubgraph, BuildReport]:
    """One node per distinct (label, feature_ref) entity, capped by confidence."""
    if cap < 1:
        raise ValidationError("scene cap must be >= 1")
    report = BuildReport()
    if not triples:
        report.warnings.append("empty scene triple list")
        return SceneSubgraph([], [], []), report

    ordered = sorted(
        enumerate(triples), key=lambda it: (-it[1].confidence, it[0])
    )
    entity_ids: dict[tuple[str, str], str] = {}
    entities: list[Node] = []
    edges: list[tuple[str, str, str]] = []

    def entity_for(label: str, ref: str) -> str | None:
        key = (label, ref)
        if key in entity_ids:
            return entity_ids[key]
        if len(entities) >= cap:
            return None
        nid = f"s:{len(entities)}"
        entity_ids[key] = nid
        entities.append(Node(nid, NodeType.S, features.scene_feature(ref), label, ref))
        return nid

    for _, t in ordered:
        if not (t.subject and t.predicate and t.object):
            raise ValidationError(f"scene triple with empty label: {t}")
        src = entity_for(t.subject, t.subject_ref)
        dst = entity_for(t.object, t.object_ref) if src is not None else None
        if src is None or dst is None:
            report.dropped_triples.append(t)
            continue
        edges.append((src, t.predicate, dst))
    return SceneSubgraph(entities, edges, [n.label for n in entities]), report


# ---------------------------------------------------------------------------
# region pooling


def retrieve_qa_concept_feature(
    answer_text: str,
    regions: RegionStore,
    features: FeatureSuite,
    k: int = 10,
) -> tuple[np.ndarray, list[Region], list[str]]:
    """Mean feature of the top-k regions ranked by description/answer similarity."""
    if k < 1:
        raise ValidationError("top-k must be >= 1")
    if len(regions) == 0:
        raise ValidationError("region store is empty")
    warnings: list[str] = []
    scored = sorted(
        regions.regions,
        key=lambda r: (-features.similarity(r.description, answer_text), r.id),
    )
    if len(scored) < k:
        warnings.append(f"only {len(scored)} regions available for top-{k} retrieval")
    chosen = scored[:k]
    feats = np.stack([features.region_feature(r.feature_ref) for r in chosen])
    return feats.mean(axis=0), chosen, warnings


# ---------------------------------------------------------------------------
# phrase grounding


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _normalize(text: str) -> str:
    return " ".join(_TOKEN_RE.findall(text.lower()))


def ground_phrases(
    text: str,
    vocabulary: set[str],
    stop_list: frozenset[str] = DEFAULT_STOP_LIST,
    source: str = "answer",
    max_ngram: int = 4,
) -> list[GroundedPhrase]:
    """Greedy longest-match of token n-grams against the concept vocabulary."""
    vocab_norm = { _normalize(v): v for v in vocabulary }
    tokens = _TOKEN_RE.findall(text.lower())
    out: list[GroundedPhrase] = []
    i = 0
    while i < len(tokens):
        matched = False
        for n in range(min(max_ngram, len(tokens) - i), 0, -1):
            phrase = " ".join(tokens[i : i + n])
            concept = vocab_norm.get(phrase)
            if concept is not None and phrase not in stop_list:
                out.append(GroundedPhrase(phrase, concept, source))
                i += n
                matched = True
                break
        if not matched:
            i += 1
    return out


# ---------------------------------------------------------------------------
# concept retrieval


def retrieve_concept_subgraph(
    grounded: list[GroundedPhrase],
    store: TripleStore,
    features: FeatureSuite,
    answer_text: str,
    threshold: float = 0.6,
    cap: int = 60,
) -> tuple[ConceptSubgraph, BuildReport]:
    """Grounded concepts plus 1-hop neighbors, pruned by relevance to the answer.

    Candidates scoring strictly below ``threshold`` are removed; grounded
    phrases themselves always survive.  The cap keeps the highest-scored
    nodes (ties by name).
    """
    if not np.isfinite(threshold):
        raise ValidationError(f"threshold {threshold} is not finite")
    report = BuildReport()
    grounded_names: list[str] = []
    for g in grounded:
        if g.concept not in grounded_names:
            grounded_names.append(g.concept)
    candidates: list[str] = list(grounded_names)
    for name in grounded_names:
        for t in store.one_hop(name):
            for other in (t.head, t.tail):
                if other not in candidates:
                    candidates.append(other)

    scores = {c: features.similarity(c, answer_text) for c in candidates}
    survivors = []
    for c in candidates:
        if c in grounded_names or scores[c] >= threshold:
            survivors.append(c)
        else:
            report.pruned_concepts.append((c, scores[c]))

    ranked = sorted(survivors, key=lambda c: (c not in grounded_names, -scores[c], c))
    if len(ranked) > cap:
        for c in ranked[cap:]:
            report.pruned_concepts.append((c, scores[c]))
        ranked = ranked[:cap]
    keep = set(ranked)
    report.kept_concepts = [(c, scores[c]) for c in ranked]

    nodes = [
        Node(concept_node_id(c), NodeType.C, features.concept_feature(c), c)
        for c in candidates
        if c in keep
    ]
    edges = [
        (concept_node_id(t.head), t.relation, concept_node_id(t.tail))
        for t in store.triples
        if t.head in keep and t.tail in keep and t.head != t.tail
    ]
    return ConceptSubgraph(nodes, edges, list(grounded)), report


def link_local_entities(
    subgraph: ConceptSubgraph,
    image_labels: list[str],
    store: TripleStore,
    features: FeatureSuite,
    cap: int = 60,
    stop_list: frozenset[str] = DEFAULT_STOP_LIST,
) -> ConceptSubgraph:
    """Attach image-detected concepts adjacent to the retrieved subgraph."""
    present = {n.label for n in subgraph.nodes}
    nodes = list(subgraph.nodes)
    edges = list(subgraph.edges)

    def add_concept(name: str) -> bool:
        if name in present:
            return True
        if len(nodes) >= cap:
            return False
        nodes.append(Node(concept_node_id(name), NodeType.C, features.concept_feature(name), name))
        present.add(name)
        return True

    labels = [l for l in dict.fromkeys(image_labels) if _normalize(l) not in stop_list]
    for label in labels:
        if label not in store.vocabulary():
            continue
        hits = [
            t
            for t in store.one_hop(label)
            if (t.head if t.tail == label else t.tail) in present
        ]
        for t in hits:
            if not add_concept(label):
                break
            edge = (concept_node_id(t.head), t.relation, concept_node_id(t.tail))
            if edge not in edges and t.head != t.tail:
                edges.append(edge)
    # pairs of image entities already co-present, adjacent in the store
    added = [l for l in labels if l in present]
    for i, a in enumerate(added):
        for b in added[i + 1 :]:
            for t in store.connecting(a, b):
                edge = (concept_node_id(t.head), t.relation, concept_node_id(t.tail))
                if edge not in edges and t.head != t.tail:
                    edges.append(edge)
    return ConceptSubgraph(nodes, edges, subgraph.grounded)


# ---------------------------------------------------------------------------
# context wiring


def attach_qa_context(
    scene: SceneSubgraph,
    pooled_feature: np.ndarray | None,
    concepts: ConceptSubgraph,
    question: str,
    answer_text: str,
    features: FeatureSuite,
    config: BuilderConfig,
) -> MultimodalSemanticGraph:
    """Assemble the joint graph around a freshly encoded context node."""
    g = MultimodalSemanticGraph()
    for node in scene.entities:
        g.add_node(node)
    if pooled_feature is not None:
        g.add_node(Node("p", NodeType.P, pooled_feature, "pooled-region"))
    for node in concepts.nodes:
        g.add_node(node)
    z_feature = features.text_embed(question + config.separator + answer_text)
    g.add_node(Node("z", NodeType.Z, z_feature, "context"))

    for src, rel, dst in scene.edges:
        g.add_edge(src, dst, rel)
    for src, rel, dst in concepts.edges:
        g.add_edge(src, dst, rel)

    scene_ids = [n.id for n in scene.entities]
    if pooled_feature is not None:
        for sid in scene_ids:
            g.add_edge("p", sid, REL_QA_CONCEPT)
    for sid in scene_ids:
        g.add_edge("z", sid, REL_IMAGE)
    if pooled_feature is not None and config.link_context_to_pooled:
        g.add_edge("z", "p", REL_IMAGE)

    concept_ids = {n.id for n in concepts.nodes}
    wired: set[tuple[str, str]] = set()
    for gp in concepts.grounded:
        cid = concept_node_id(gp.concept)
        rel = {"question": REL_QUESTION, "answer": REL_ANSWER}.get(gp.source)
        if rel is None or cid not in concept_ids or (cid, rel) in wired:
            continue
        g.add_edge("z", cid, rel)
        wired.add((cid, rel))

    violations = g.validate(config.n_scene_cap, config.n_concept_cap)
    if violations:
        raise ValidationError("; ".join(violations))
    return g


# ---------------------------------------------------------------------------
# per-example assembly


def build_candidate_graph(
    scene: SceneSubgraph,
    example_question: str,
    candidate_text: str,
    stores: tuple[TripleStore, RegionStore],
    features: FeatureSuite,
    config: BuilderConfig,
) -> tuple[MultimodalSemanticGraph, BuildReport]:
    triple_store, region_store = stores
    vocab = triple_store.vocabulary()
    grounded = ground_phrases(example_question, vocab, config.stop_list, source="question")
    grounded += ground_phrases(candidate_text, vocab, config.stop_list, source="answer")

    concepts, report = retrieve_concept_subgraph(
        grounded,
        triple_store,
        features,
        candidate_text,
        config.relevance_threshold,
        config.n_concept_cap,
    )
    concepts = link_local_entities(
        concepts, scene.labels, triple_store, features, config.n_concept_cap, config.stop_list
    )
    pooled = None
    if len(region_store) > 0:
        pooled, _, warn = retrieve_qa_concept_feature(
            candidate_text, region_store, features, config.top_k_regions
        )
        report.warnings.extend(warn)
    graph = attach_qa_context(
        scene, pooled, concepts, example_question, candidate_text, features, config
    )
    return graph, report


def build_example_graphs(
    example: QaExample,
    scene_triples: list[SceneTriple],
    triple_store: TripleStore,
    region_store: RegionStore,
    features: FeatureSuite,
    config: BuilderConfig,
    task: str = "answer",
) -> tuple[list[MultimodalSemanticGraph], list[BuildReport]]:
    """One graph per candidate; the scene subgraph is shared across candidates.

    ``task="rationale"`` conditions the context on the question plus the gold
    answer and iterates over rationale candidates.
    """
    scene, scene_report = ingest_scene_graph(scene_triples, features, config.n_scene_cap)
    if task == "answer":
        context = example.question
        candidates = example.answers
    elif task == "rationale":
        if not example.rationales:
            raise ValidationError(f"example {example.id} has no rationale candidates")
        context = example.question + config.separator + example.answers[example.gold]
        candidates = example.rationales
    else:
        raise ValidationError(f"unknown task {task!r}")

    graphs: list[MultimodalSemanticGraph] = []
    reports: list[BuildReport] = []
    for cand in candidates:
        graph, report = build_candidate_graph(
            scene, context, cand, (triple_store, region_store), features, config
        )
        report.dropped_triples = scene_report.dropped_triples
        report.warnings = scene_report.warnings + report.warnings
        graphs.append(graph)
        reports.append(report)
    return graphs, reports
