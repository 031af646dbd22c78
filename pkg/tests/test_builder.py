"""Tests for the graph construction pipeline."""

import numpy as np
import pytest

from mmgraphqa.builder import (
    BuilderConfig,
    QaExample,
    SceneTriple,
    attach_qa_context,
    build_example_graphs,
    ground_phrases,
    ingest_scene_graph,
    retrieve_concept_subgraph,
    retrieve_qa_concept_feature,
)
from mmgraphqa.errors import ValidationError
from mmgraphqa.graph import NodeType
from mmgraphqa.stores import (
    FeatureDims,
    FeatureSuite,
    Region,
    RegionStore,
    Triple,
    TripleStore,
)

DIMS = FeatureDims(6, 5, 4)


class StubFeatures:
    """FeatureSuite stand-in with hand-set similarities."""

    def __init__(self, sims=None, dims=DIMS):
        self.sims = sims or {}
        self.dims = dims
        self._suite = FeatureSuite(dims, seed=0)

    def similarity(self, a, b):
        return self.sims.get((a, b), self.sims.get(a, 0.0))

    def concept_feature(self, name):
        return self._suite.concept_feature(name)

    def scene_feature(self, ref):
        return self._suite.scene_feature(ref)

    def region_feature(self, ref):
        return self._suite.region_feature(ref)

    def text_embed(self, text):
        return self._suite.text_embed(text)


def scene_triples():
    return [
        SceneTriple("cat", "on", "mat", "ref:cat", "ref:mat", 0.9),
        SceneTriple("dog", "near", "mat", "ref:dog", "ref:mat", 0.8),
        SceneTriple("cat", "watches", "dog", "ref:cat", "ref:dog", 0.7),
    ]


class TestIngestSceneGraph:
    def test_entities_deduplicated(self):
        sub, _ = ingest_scene_graph(scene_triples(), FeatureSuite(DIMS))
        assert [n.label for n in sub.entities] == ["cat", "mat", "dog"]
        assert len(sub.edges) == 3

    def test_cap_keeps_highest_confidence(self):
        sub, report = ingest_scene_graph(scene_triples(), FeatureSuite(DIMS), cap=2)
        assert [n.label for n in sub.entities] == ["cat", "mat"]
        # the two triples touching 'dog' could not be placed
        assert len(report.dropped_triples) == 2

    def test_order_ties_broken_by_input_position(self):
        triples = [
            SceneTriple("a", "r", "b", "ra", "rb", 0.5),
            SceneTriple("c", "r", "d", "rc", "rd", 0.5),
        ]
        sub, _ = ingest_scene_graph(triples, FeatureSuite(DIMS))
        assert [n.label for n in sub.entities] == ["a", "b", "c", "d"]

    def test_empty_input_warns(self):
        sub, report = ingest_scene_graph([], FeatureSuite(DIMS))
        assert sub.entities == []
        assert any("empty" in w for w in report.warnings)

    def test_empty_label_rejected(self):
        with pytest.raises(ValidationError, match="empty label"):
            ingest_scene_graph(
                [SceneTriple("", "r", "b", "ra", "rb")], FeatureSuite(DIMS)
            )


class TestRegionRetrieval:
    def test_topk_matches_exhaustive_sort(self):
        rng = np.random.default_rng(0)
        features = FeatureSuite(DIMS, seed=1)
        regions = RegionStore(
            [Region(f"r{i:02d}", f"desc {i}", f"feat:{i}") for i in range(20)]
        )
        pooled, chosen, warnings = retrieve_qa_concept_feature(
            "the answer", regions, features, k=10
        )
        oracle = sorted(
            regions.regions,
            key=lambda r: (-features.similarity(r.description, "the answer"), r.id),
        )[:10]
        assert [r.id for r in chosen] == [r.id for r in oracle]
        expected = np.mean([features.region_feature(r.feature_ref) for r in oracle], axis=0)
        np.testing.assert_allclose(pooled, expected, atol=1e-12)
        assert warnings == []

    def test_fewer_regions_than_k_warns_and_uses_all(self):
        features = FeatureSuite(DIMS)
        regions = RegionStore([Region("r1", "d", "f1"), Region("r2", "d", "f2")])
        pooled, chosen, warnings = retrieve_qa_concept_feature("x", regions, features, k=10)
        assert len(chosen) == 2
        assert any("only 2 regions" in w for w in warnings)

    def test_empty_store_rejected(self):
        with pytest.raises(ValidationError, match="empty"):
            retrieve_qa_concept_feature("x", RegionStore(), FeatureSuite(DIMS))


class TestGroundPhrases:
    VOCAB = {"traffic light", "light", "green traffic light", "dog"}

    def test_longest_match_wins(self):
        out = ground_phrases("the green traffic light blinked", self.VOCAB)
        assert [g.concept for g in out] == ["green traffic light"]

    def test_non_overlapping_left_to_right(self):
        out = ground_phrases("a light near the traffic light", self.VOCAB)
        assert [g.concept for g in out] == ["light", "traffic light"]

    def test_stop_list_filters(self):
        out = ground_phrases("a person with a dog", {"person", "dog"})
        assert [g.concept for g in out] == ["dog"]

    def test_punctuation_and_case_normalized(self):
        out = ground_phrases("DOG!", {"dog"})
        assert [g.concept for g in out] == ["dog"]

    def test_source_tag_propagates(self):
        out = ground_phrases("dog", {"dog"}, source="question")
        assert out[0].source == "question"


class TestConceptRetrieval:
    def make_store(self):
        return TripleStore(
            [
                Triple("dog", "is_a", "animal"),
                Triple("dog", "chases", "cat"),
                Triple("cat", "is_a", "animal"),
                Triple("animal", "related_to", "zoo"),
            ]
        )

    def test_pruning_below_threshold_strict(self):
        sims = {"animal": 0.6, "cat": 0.599, "dog": 0.1}
        grounded = ground_phrases("dog", {"dog"})
        sub, report = retrieve_concept_subgraph(
            grounded, self.make_store(), StubFeatures(sims), "ans", threshold=0.6
        )
        names = {n.label for n in sub.nodes}
        assert names == {"dog", "animal"}  # 0.6 kept, 0.599 pruned, grounded kept
        assert ("cat", 0.599) in report.pruned_concepts

    def test_grounded_always_survive(self):
        sims = {"dog": -1.0}
        grounded = ground_phrases("dog", {"dog"})
        sub, _ = retrieve_concept_subgraph(
            grounded, self.make_store(), StubFeatures(sims), "ans", threshold=0.6
        )
        assert {n.label for n in sub.nodes} == {"dog"}

    def test_threshold_above_one_keeps_only_grounded(self):
        sims = {"animal": 0.9, "cat": 0.9}
        grounded = ground_phrases("dog", {"dog"})
        sub, _ = retrieve_concept_subgraph(
            grounded, self.make_store(), StubFeatures(sims), "ans", threshold=1.1
        )
        assert {n.label for n in sub.nodes} == {"dog"}

    def test_cap_keeps_best_scored(self):
        sims = {"animal": 0.9, "cat": 0.8, "dog": 0.0}
        grounded = ground_phrases("dog", {"dog"})
        sub, report = retrieve_concept_subgraph(
            grounded, self.make_store(), StubFeatures(sims), "ans", threshold=0.6, cap=2
        )
        assert {n.label for n in sub.nodes} == {"dog", "animal"}
        assert ("cat", 0.8) in report.pruned_concepts

    def test_edges_limited_to_survivors(self):
        sims = {"animal": 0.9, "cat": 0.9, "zoo": 0.0}
        grounded = ground_phrases("dog", {"dog"})
        sub, _ = retrieve_concept_subgraph(
            grounded, self.make_store(), StubFeatures(sims), "ans"
        )
        pairs = {(s, d) for s, _, d in sub.edges}
        assert ("c:animal", "c:zoo") not in pairs
        assert ("c:dog", "c:animal") in pairs


class TestAttachContext:
    def build(self, with_pooled=True, link_pooled=True):
        features = FeatureSuite(DIMS)
        scene, _ = ingest_scene_graph(scene_triples(), features)
        store = TripleStore([Triple("dog", "is_a", "animal")])
        grounded = ground_phrases("the dog", store.vocabulary())
        concepts, _ = retrieve_concept_subgraph(
            grounded, store, features, "the dog", threshold=2.0
        )
        pooled = np.ones(DIMS.scene) if with_pooled else None
        config = BuilderConfig(link_context_to_pooled=link_pooled)
        g = attach_qa_context(
            scene, pooled, concepts, "what is it", "the dog", features, config
        )
        return g

    def test_valid_graph_produced(self):
        g = self.build()
        assert g.validate() == []
        assert g.z_id == "z" and g.p_id == "p"

    def test_answer_grounding_wired_to_context(self):
        g = self.build()
        assert g.has_edge("z", "c:dog", "answer")

    def test_pooled_connected_to_every_scene_entity(self):
        g = self.build()
        for sid in g.scene_entity_ids():
            assert g.has_edge("p", sid, "qa_concept")

    def test_context_pooled_link_optional(self):
        assert self.build(link_pooled=True).has_edge("z", "p", "image")
        assert not self.build(link_pooled=False).has_edge("z", "p", "image")

    def test_no_pooled_node_when_feature_missing(self):
        g = self.build(with_pooled=False)
        assert g.p_id is None


class TestBuildExampleGraphs:
    def setup_method(self):
        self.features = FeatureSuite(DIMS)
        self.store = TripleStore([Triple("dog", "is_a", "animal")])
        self.regions = RegionStore([Region("r1", "a dog", "feat:r1")])
        self.example = QaExample(
            id="ex0",
            image_id="img0",
            question="what watches the dog",
            answers=["the cat", "a dog"],
            gold=0,
            rationales=["because it stares", "because dogs bark"],
            rationale_gold=1,
        )

    def test_one_graph_per_candidate(self):
        graphs, reports = build_example_graphs(
            self.example, scene_triples(), self.store, self.regions, self.features,
            BuilderConfig(),
        )
        assert len(graphs) == len(reports) == 2
        for g in graphs:
            assert g.validate() == []

    def test_rationale_task_uses_gold_answer_context(self):
        graphs, _ = build_example_graphs(
            self.example, scene_triples(), self.store, self.regions, self.features,
            BuilderConfig(), task="rationale",
        )
        assert len(graphs) == 2
        expected = self.features.text_embed(
            "what watches the dog / the cat / because it stares"
        )
        np.testing.assert_array_equal(graphs[0].nodes["z"].feature, expected)

    def test_rationale_task_requires_rationales(self):
        self.example.rationales = None
        with pytest.raises(ValidationError, match="no rationale"):
            build_example_graphs(
                self.example, scene_triples(), self.store, self.regions,
                self.features, BuilderConfig(), task="rationale",
            )

    def test_unknown_task_rejected(self):
        with pytest.raises(ValidationError, match="unknown task"):
            build_example_graphs(
                self.example, scene_triples(), self.store, self.regions,
                self.features, BuilderConfig(), task="retrieval",
            )
