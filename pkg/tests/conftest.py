"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest

from mmgraphqa.gnn import GnnConfig, LayerParams
from mmgraphqa.graph import MultimodalSemanticGraph, Node, NodeType
from mmgraphqa.stores import FeatureDims


def layer_to_oracle_params(lp: LayerParams) -> dict:
    """Convert a layer's tensors into the plain-list form the oracle expects."""

    def lists(t):
        return t.data.tolist()

    return {
        "fr": (lists(lp.fr.w1), lists(lp.fr.b1), lists(lp.fr.w2), lists(lp.fr.b2)),
        "fm": (lists(lp.fm.w), lists(lp.fm.b)),
        "fh": (lists(lp.fh.w1), lists(lp.fh.b1), lists(lp.fh.w2), lists(lp.fh.b2)),
        "fq": (lists(lp.fq.w), lists(lp.fq.b)),
        "fk": (lists(lp.fk.w), lists(lp.fk.b)),
    }


def make_joint_graph(
    n_scene: int,
    n_concept: int,
    dims: FeatureDims,
    seed: int = 0,
    with_pooled: bool = True,
) -> MultimodalSemanticGraph:
    """A fully wired joint graph with random features and a few typed edges."""
    rng = np.random.default_rng(seed)
    g = MultimodalSemanticGraph()
    for i in range(n_scene):
        g.add_node(Node(f"s{i}", NodeType.S, rng.standard_normal(dims.scene), f"obj{i}"))
    if with_pooled:
        g.add_node(Node("p", NodeType.P, rng.standard_normal(dims.scene), "pooled"))
    for i in range(n_concept):
        g.add_node(Node(f"c{i}", NodeType.C, rng.standard_normal(dims.concept), f"con{i}"))
    g.add_node(Node("z", NodeType.Z, rng.standard_normal(dims.text), "context"))

    for i in range(n_scene - 1):
        g.add_edge(f"s{i}", f"s{i+1}", "near")
    for i in range(n_concept - 1):
        g.add_edge(f"c{i}", f"c{i+1}", "related_to")
    for i in range(n_scene):
        g.add_edge("z", f"s{i}", "image")
        if with_pooled:
            g.add_edge("p", f"s{i}", "qa_concept")
    if with_pooled:
        g.add_edge("z", "p", "image")
    if n_concept:
        g.add_edge("z", "c0", "question")
        g.add_edge("z", f"c{n_concept-1}", "answer")
    return g


def joint_relations() -> list[str]:
    out = []
    for name in ("qa_concept", "question", "answer", "image", "near", "related_to", "cross_modal"):
        out.append(name)
        out.append(name + "_inv")
    return out


@pytest.fixture
def small_dims():
    return FeatureDims(scene=6, concept=5, text=4)


@pytest.fixture
def small_cfg(small_dims):
    return GnnConfig(
        layers=2,
        hidden=8,
        relations=joint_relations(),
        norm_mode="none",
        fusion="bidirectional",
        dims=small_dims,
    )
