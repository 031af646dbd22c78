"""Tests for the typed joint graph, validation, and ablation rewiring."""

import numpy as np
import pytest

from mmgraphqa.errors import ValidationError
from mmgraphqa.graph import (
    INV_SUFFIX,
    Edge,
    Graph,
    MultimodalSemanticGraph,
    Node,
    NodeType,
    inverse_relation,
    node_type_onehot,
)
from conftest import make_joint_graph
from mmgraphqa.stores import FeatureDims


class TestBasics:
    def test_inverse_relation_roundtrip(self):
        assert inverse_relation("near") == "near_inv"
        assert inverse_relation("near_inv") == "near"

    def test_node_type_onehot(self):
        v = node_type_onehot(NodeType.S)
        assert v.sum() == 1.0 and v[2] == 1.0 and len(v) == 5

    def test_duplicate_node_rejected(self):
        g = Graph()
        g.add_node(Node("a", NodeType.S))
        with pytest.raises(ValidationError, match="duplicate"):
            g.add_node(Node("a", NodeType.C))

    def test_edge_requires_existing_endpoints(self):
        g = Graph()
        g.add_node(Node("a", NodeType.S))
        with pytest.raises(ValidationError, match="does not exist"):
            g.add_edge("a", "b", "near")

    def test_self_loop_rejected(self):
        g = Graph()
        g.add_node(Node("a", NodeType.S))
        with pytest.raises(ValidationError, match="self-loop"):
            g.add_edge("a", "a", "near")

    def test_add_edge_creates_reverse_companion(self):
        g = Graph()
        g.add_node(Node("a", NodeType.S))
        g.add_node(Node("b", NodeType.S))
        g.add_edge("a", "b", "near")
        assert g.has_edge("a", "b", "near")
        assert g.has_edge("b", "a", "near" + INV_SUFFIX)

    def test_neighborhood_lists_incoming_senders(self):
        g = Graph()
        for nid in "abc":
            g.add_node(Node(nid, NodeType.S))
        g.add_edge("a", "b", "near")
        g.add_edge("c", "b", "holds")
        assert {n for n, _ in g.neighborhood("b")} == {"a", "c"}
        # reverse companions make 'a' see 'b' too
        assert g.neighbor_ids("a") == {"b"}


class TestValidation:
    def test_well_formed_graph_validates(self, small_dims):
        g = make_joint_graph(3, 2, small_dims)
        assert g.validate() == []

    def test_z_must_be_unique(self, small_dims):
        g = make_joint_graph(2, 2, small_dims)
        g.add_node(Node("z2", NodeType.Z, np.zeros(small_dims.text)))
        assert any("exactly one context" in v for v in g.validate())

    def test_caps_enforced(self, small_dims):
        g = make_joint_graph(4, 2, small_dims)
        assert any("cap 3 exceeded" in v for v in g.validate(n_scene_cap=3))
        assert any("cap 1 exceeded" in v for v in g.validate(n_concept_cap=1))

    def test_missing_reverse_companion_detected(self, small_dims):
        g = make_joint_graph(2, 2, small_dims)
        g.edges.append(Edge("s0", "c0", "question"))
        violations = g.validate()
        assert any("reverse companion" in v for v in violations)

    def test_direct_scene_concept_edge_detected(self, small_dims):
        g = make_joint_graph(2, 2, small_dims)
        g.edges.append(Edge("s0", "c0", "near"))
        g.edges.append(Edge("c0", "s0", "near_inv"))
        assert any("scene-concept" in v for v in g.validate())

    def test_pooled_node_must_reach_all_scene_entities(self, small_dims):
        g = make_joint_graph(2, 2, small_dims)
        g.edges = [
            e
            for e in g.edges
            if not (e.src == "p" and e.dst == "s1")
            and not (e.dst == "p" and e.src == "s1")
        ]
        assert any("pooled-region" in v for v in g.validate())

    def test_context_must_be_image_linked_to_scene(self, small_dims):
        g = make_joint_graph(2, 2, small_dims)
        g.edges = [
            e
            for e in g.edges
            if not (
                {e.src, e.dst} == {"z", "s0"} and e.relation.startswith("image")
            )
        ]
        assert any("image-linked" in v for v in g.validate())


class TestModalityNeighborhoods:
    def test_context_neighborhood_splits_by_side(self, small_dims):
        g = make_joint_graph(3, 2, small_dims)
        scene = {n for n, _ in g.neighborhood("z", modality="scene")}
        concept = {n for n, _ in g.neighborhood("z", modality="concept")}
        assert scene == {"s0", "s1", "s2", "p"}
        assert concept == {"c0", "c1"}

    def test_modality_ignored_for_other_nodes(self, small_dims):
        g = make_joint_graph(2, 2, small_dims)
        assert g.neighborhood("s0", modality="scene") == g.neighborhood("s0")


class TestAblation:
    def test_single_preserves_edge_multiset(self, small_dims):
        g = make_joint_graph(3, 3, small_dims)
        merged = g.to_ablation("single")
        assert sorted(merged.edges, key=repr) == sorted(g.edges, key=repr)
        assert set(merged.nodes) == set(g.nodes)

    def test_cross_modal_adds_alignment_edges(self, small_dims):
        g = make_joint_graph(3, 3, small_dims)
        merged = g.to_ablation("single_with_cross_modal", alignment=[("s1", "c0")])
        assert merged.has_edge("s1", "c0", "cross_modal")
        assert merged.has_edge("c0", "s1", "cross_modal_inv")

    def test_unknown_variant_rejected(self, small_dims):
        g = make_joint_graph(2, 2, small_dims)
        with pytest.raises(ValidationError, match="unknown ablation"):
            g.to_ablation("dual")

    def test_missing_alignment_node_rejected(self, small_dims):
        g = make_joint_graph(2, 2, small_dims)
        with pytest.raises(ValidationError, match="missing node"):
            g.to_ablation("single_with_cross_modal", alignment=[("s0", "c9")])


class TestJsonRoundTrip:
    def test_roundtrip_preserves_structure(self, small_dims, tmp_path):
        g = make_joint_graph(3, 2, small_dims)
        d = g.to_json_dict()
        g2 = MultimodalSemanticGraph.from_json_dict(d)
        assert set(g2.nodes) == set(g.nodes)
        assert g2.edges == g.edges
        assert g2.z_id == "z" and g2.p_id == "p"
        assert g2.to_json_dict() == d
