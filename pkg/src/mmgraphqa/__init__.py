"""Multimodal semantic-graph question answering.

A desk-scale engine that assembles a joint graph from scene triples, a
concept knowledge graph, and QA text, then scores answer candidates with a
multi-relation attention GNN whose context node fuses both modalities.
"""

__version__ = "0.1.0"
