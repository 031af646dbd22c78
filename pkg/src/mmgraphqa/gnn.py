"""Multi-relation attention message passing and context-node fusion.

Each layer computes, per directed edge j->i, a relation embedding from the
edge-type one-hot and both endpoint node-type one-hots, a message from the
sender state, and a scaled dot-product attention weight normalized over each
receiver's neighborhood; receivers add the transformed aggregate to their
previous state.  In bidirectional mode two modality GNNs run side by side
and the context node's next state is a linear fusion of its scene-side and
concept-side updates, written back into both graphs every layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat,
    gather_rows,
    mul,
    reshape,
    scale,
    segment_softmax,
    segment_sum,
    tsum,
)
from .errors import ValidationError
from .graph import (
    Graph,
    MultimodalSemanticGraph,
    N_NODE_TYPES,
    NODE_TYPE_ORDER,
    NodeType,
)
from .nn import Linear, Mlp2, affine, init_linear, init_mlp2, mlp2
from .stores import FeatureDims

FUSION_MODES = ("bidirectional", "unidirectional", "single", "single_cross_modal")


@dataclass
class GnnConfig:
    layers: int = 5
    hidden: int = 16
    relations: list[str] = field(default_factory=list)  # dense relation vocabulary, id = index
    norm_mode: str = "batch"
    fusion: str = "bidirectional"
    aggregate: str = "sum"  # or "mean" over neighbors
    dims: FeatureDims = field(default_factory=FeatureDims)
    head: str = "multiple_choice"
    n_answer_classes: int = 0  # open_domain only

    def __post_init__(self):
        if self.layers < 1:
            raise ValidationError("layer count must be >= 1")
        if self.hidden < 2:
            raise ValidationError("hidden dim must be >= 2")
        if self.fusion not in FUSION_MODES:
            raise ValidationError(f"unknown fusion mode {self.fusion!r}")

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def relation_id(self, name: str) -> int:
        try:
            return self.relations.index(name)
        except ValueError:
            raise ValidationError(f"relation {name!r} not in vocabulary") from None

    def to_json_dict(self) -> dict:
        return {
            "layers": self.layers,
            "hidden": self.hidden,
            "relations": list(self.relations),
            "norm_mode": self.norm_mode,
            "fusion": self.fusion,
            "aggregate": self.aggregate,
            "dims": {"scene": self.dims.scene, "concept": self.dims.concept, "text": self.dims.text},
            "head": self.head,
            "n_answer_classes": self.n_answer_classes,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "GnnConfig":
        d = dict(d)
        dims = d.pop("dims")
        return cls(dims=FeatureDims(**dims), **d)


@dataclass
class LayerParams:
    fr: Mlp2  # relation embedding MLP, (R + 2|T|) -> D
    fm: Linear  # message map, 2D -> D
    fh: Mlp2  # update MLP with normalization, D -> D
    fq: Linear  # receiver query, D -> D
    fk: Linear  # sender key, 2D -> D


@dataclass
class ModelParams:
    proj_s: Linear
    proj_c: Linear
    proj_z: Linear
    proj_p: Linear
    scene_layers: list[LayerParams]
    concept_layers: list[LayerParams]
    single_layers: list[LayerParams]
    fz: Linear
    fc: Linear

    def _mlp_items(self, prefix: str, m: Mlp2):
        yield f"{prefix}.w1", m.w1
        yield f"{prefix}.b1", m.b1
        yield f"{prefix}.w2", m.w2
        yield f"{prefix}.b2", m.b2
        if m.norm is not None:
            yield f"{prefix}.norm.gamma", m.norm.gamma
            yield f"{prefix}.norm.beta", m.norm.beta

    def _linear_items(self, prefix: str, l: Linear):
        yield f"{prefix}.w", l.w
        yield f"{prefix}.b", l.b

    def named_tensors(self) -> dict[str, Tensor]:
        """Trainable tensors in a fixed deterministic order."""
        out: dict[str, Tensor] = {}
        for name, lin in (
            ("proj.s", self.proj_s),
            ("proj.c", self.proj_c),
            ("proj.z", self.proj_z),
            ("proj.p", self.proj_p),
        ):
            out.update(self._linear_items(name, lin))
        for modality, stack in (
            ("scene", self.scene_layers),
            ("concept", self.concept_layers),
            ("single", self.single_layers),
        ):
            for k, lp in enumerate(stack):
                base = f"gnn.{modality}.layer{k}"
                out.update(self._mlp_items(f"{base}.fr", lp.fr))
                out.update(self._linear_items(f"{base}.fm", lp.fm))
                out.update(self._mlp_items(f"{base}.fh", lp.fh))
                out.update(self._linear_items(f"{base}.fq", lp.fq))
                out.update(self._linear_items(f"{base}.fk", lp.fk))
        out.update(self._linear_items("fusion.fz", self.fz))
        out.update(self._linear_items("head.fc", self.fc))
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Non-trainable state (normalization running statistics)."""
        out: dict[str, np.ndarray] = {}
        for modality, stack in (
            ("scene", self.scene_layers),
            ("concept", self.concept_layers),
            ("single", self.single_layers),
        ):
            for k, lp in enumerate(stack):
                if lp.fh.norm is not None and lp.fh.norm.kind == "batch":
                    base = f"gnn.{modality}.layer{k}.fh.norm"
                    out[f"{base}.running_mean"] = lp.fh.norm.running_mean
                    out[f"{base}.running_var"] = lp.fh.norm.running_var
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        named = self.named_tensors()
        for name, t in named.items():
            if name not in arrays:
                raise ValidationError(f"checkpoint missing parameter {name!r}")
            if arrays[name].shape != t.data.shape:
                raise ValidationError(
                    f"checkpoint parameter {name!r} has shape {arrays[name].shape}, "
                    f"expected {t.data.shape}"
                )
            t.data = np.array(arrays[name])
        for modality, stack in (
            ("scene", self.scene_layers),
            ("concept", self.concept_layers),
            ("single", self.single_layers),
        ):
            for k, lp in enumerate(stack):
                if lp.fh.norm is not None and lp.fh.norm.kind == "batch":
                    base = f"gnn.{modality}.layer{k}.fh.norm"
                    if f"{base}.running_mean" in arrays:
                        lp.fh.norm.running_mean = np.array(arrays[f"{base}.running_mean"])
                        lp.fh.norm.running_var = np.array(arrays[f"{base}.running_var"])

    def all_arrays(self) -> dict[str, np.ndarray]:
        out = {n: t.data for n, t in self.named_tensors().items()}
        out.update(self.state_arrays())
        return out


def _init_layer(rng: np.random.Generator, cfg: GnnConfig) -> LayerParams:
    d = cfg.hidden
    rel_in = cfg.n_relations + 2 * N_NODE_TYPES
    return LayerParams(
        fr=init_mlp2(rng, rel_in, d, d, norm_kind="none"),
        fm=init_linear(rng, 2 * d, d),
        fh=init_mlp2(rng, d, d, d, norm_kind=cfg.norm_mode),
        fq=init_linear(rng, d, d),
        fk=init_linear(rng, 2 * d, d),
    )


def init_model_params(cfg: GnnConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    d = cfg.hidden
    dual = cfg.fusion in ("bidirectional", "unidirectional")
    single = not dual
    fc_out = cfg.n_answer_classes if cfg.head == "open_domain" else 1
    if cfg.head == "open_domain" and cfg.n_answer_classes < 2:
        raise ValidationError("open_domain head needs at least 2 answer classes")
    return ModelParams(
        proj_s=init_linear(rng, cfg.dims.scene, d),
        proj_c=init_linear(rng, cfg.dims.concept, d),
        proj_z=init_linear(rng, cfg.dims.text, d),
        proj_p=init_linear(rng, cfg.dims.scene, d),
        scene_layers=[_init_layer(rng, cfg) for _ in range(cfg.layers)] if dual else [],
        concept_layers=[_init_layer(rng, cfg) for _ in range(cfg.layers)] if dual else [],
        single_layers=[_init_layer(rng, cfg) for _ in range(cfg.layers)] if single else [],
        fz=init_linear(rng, 2 * d, d),
        fc=init_linear(rng, 4 * d, fc_out),
    )


# ---------------------------------------------------------------------------
# graph compilation: static arrays consumed by the vectorized layer


@dataclass
class GraphView:
    node_ids: list[str]
    edge_src: np.ndarray  # sender index per directed edge
    edge_dst: np.ndarray  # receiver index per directed edge
    rel_input: np.ndarray  # (E, R + 2|T|): [edge one-hot | sender type | receiver type]
    neighbor_mask: np.ndarray  # (N, 1), 1.0 where the node has >= 1 incoming edge
    in_degree: np.ndarray  # (N, 1)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edge_src)


def _compile_view(
    node_ids: list[str],
    node_types: list[NodeType],
    edges: list[tuple[str, str, str]],
    cfg: GnnConfig,
) -> GraphView:
    index = {nid: i for i, nid in enumerate(node_ids)}
    n, e = len(node_ids), len(edges)
    src = np.empty(e, dtype=np.intp)
    dst = np.empty(e, dtype=np.intp)
    rel_input = np.zeros((e, cfg.n_relations + 2 * N_NODE_TYPES))
    type_idx = [NODE_TYPE_ORDER.index(t) for t in node_types]
    for k, (s, rel, d) in enumerate(edges):
        si, di = index[s], index[d]
        src[k], dst[k] = si, di
        rel_input[k, cfg.relation_id(rel)] = 1.0
        rel_input[k, cfg.n_relations + type_idx[si]] = 1.0
        rel_input[k, cfg.n_relations + N_NODE_TYPES + type_idx[di]] = 1.0
    degree = np.zeros(n)
    np.add.at(degree, dst, 1.0)
    return GraphView(
        node_ids=node_ids,
        edge_src=src,
        edge_dst=dst,
        rel_input=rel_input,
        neighbor_mask=(degree > 0).astype(np.float64).reshape(n, 1),
        in_degree=np.maximum(degree, 1.0).reshape(n, 1),
    )


@dataclass
class CompiledGraph:
    """Views plus raw feature matrices for one candidate graph.

    Node order inside each view: entities first (insertion order), then the
    pooled-region node (scene view only), then the context node last.
    """

    scene_view: GraphView | None
    concept_view: GraphView | None
    merged_view: GraphView | None
    x_scene: np.ndarray  # (n_s, d_scene)
    x_concept: np.ndarray  # (n_c, d_concept)
    x_p: np.ndarray | None  # (1, d_scene)
    x_z: np.ndarray  # (1, d_text)
    n_scene_entities: int
    n_concept_entities: int
    # merged-view bookkeeping
    merged_scene_idx: np.ndarray | None = None
    merged_concept_idx: np.ndarray | None = None
    merged_p_idx: int | None = None


def compile_graph(
    g: MultimodalSemanticGraph,
    cfg: GnnConfig,
    alignment: list[tuple[str, str]] | None = None,
) -> CompiledGraph:
    if g.z_id is None:
        raise ValidationError("graph has no context node")
    scene_ids = g.scene_entity_ids()
    concept_ids = g.concept_entity_ids()
    has_p = g.p_id is not None

    def feat(nid: str) -> np.ndarray:
        f = g.nodes[nid].feature
        if f is None:
            raise ValidationError(f"node {nid!r} has no feature attached")
        return f

    x_scene = (
        np.stack([feat(i) for i in scene_ids])
        if scene_ids
        else np.zeros((0, cfg.dims.scene))
    )
    x_concept = (
        np.stack([feat(i) for i in concept_ids])
        if concept_ids
        else np.zeros((0, cfg.dims.concept))
    )
    x_p = feat(g.p_id).reshape(1, -1) if has_p else None
    x_z = feat(g.z_id).reshape(1, -1)

    by_edge = [(e.src, e.relation, e.dst) for e in g.edges]
    scene_set = set(scene_ids) | ({g.p_id} if has_p else set()) | {g.z_id}
    concept_set = set(concept_ids) | {g.z_id}

    scene_view = concept_view = merged_view = None
    merged_scene_idx = merged_concept_idx = None
    merged_p_idx = None

    if cfg.fusion in ("bidirectional", "unidirectional"):
        s_ids = scene_ids + ([g.p_id] if has_p else []) + [g.z_id]
        s_types = [NodeType.S] * len(scene_ids) + ([NodeType.P] if has_p else []) + [NodeType.Z]
        s_edges = [e for e in by_edge if e[0] in scene_set and e[2] in scene_set]
        scene_view = _compile_view(s_ids, s_types, s_edges, cfg)

        c_ids = concept_ids + [g.z_id]
        c_types = [g.nodes[i].node_type for i in concept_ids] + [NodeType.Z]
        c_edges = [e for e in by_edge if e[0] in concept_set and e[2] in concept_set]
        concept_view = _compile_view(c_ids, c_types, c_edges, cfg)
    else:
        merged = g.to_ablation(
            "single" if cfg.fusion == "single" else "single_with_cross_modal",
            alignment,
        )
        m_ids = scene_ids + ([g.p_id] if has_p else []) + concept_ids + [g.z_id]
        m_types = [merged.nodes[i].node_type for i in m_ids]
        m_edges = [(e.src, e.relation, e.dst) for e in merged.edges]
        merged_view = _compile_view(m_ids, m_types, m_edges, cfg)
        merged_scene_idx = np.arange(len(scene_ids), dtype=np.intp)
        off = len(scene_ids) + (1 if has_p else 0)
        merged_concept_idx = np.arange(off, off + len(concept_ids), dtype=np.intp)
        merged_p_idx = len(scene_ids) if has_p else None

    return CompiledGraph(
        scene_view=scene_view,
        concept_view=concept_view,
        merged_view=merged_view,
        x_scene=x_scene,
        x_concept=x_concept,
        x_p=x_p,
        x_z=x_z,
        n_scene_entities=len(scene_ids),
        n_concept_entities=len(concept_ids),
        merged_scene_idx=merged_scene_idx,
        merged_concept_idx=merged_concept_idx,
        merged_p_idx=merged_p_idx,
    )


# ---------------------------------------------------------------------------
# forward passes


@dataclass
class LayerTrace:
    """Attention weights of one layer application, grouped by receiver."""

    alpha: np.ndarray
    edge_dst: np.ndarray
    n_nodes: int


def relation_embedding(
    edge_onehot: np.ndarray,
    u_src: np.ndarray,
    u_dst: np.ndarray,
    fr: Mlp2,
    train: bool = False,
) -> Tensor:
    """Embed one edge: concatenate [edge one-hot | sender type | receiver type]."""
    for name, v in (("edge", edge_onehot), ("u_src", u_src), ("u_dst", u_dst)):
        if not np.isclose(v.sum(), 1.0):
            raise ValidationError(f"{name} one-hot must have exactly one hot entry")
    x = Tensor(np.concatenate([edge_onehot, u_src, u_dst]).reshape(1, -1))
    return mlp2(x, fr, train=train)


def layer_forward(
    view: GraphView,
    h: Tensor,
    lp: LayerParams,
    cfg: GnnConfig,
    train: bool = True,
    update_running: bool = False,
    traces: list[LayerTrace] | None = None,
) -> Tensor:
    """One attention message-passing layer over all receivers of a view."""
    if h.shape != (view.n_nodes, cfg.hidden):
        raise ValidationError(f"state shape {h.shape} != ({view.n_nodes}, {cfg.hidden})")
    if view.n_edges == 0:
        if traces is not None:
            traces.append(LayerTrace(np.zeros(0), view.edge_dst, view.n_nodes))
        return h
    r = mlp2(Tensor(view.rel_input), lp.fr, train=train)
    h_src = gather_rows(h, view.edge_src)
    sender = concat([h_src, r], axis=1)
    m = affine(sender, lp.fm)
    q = affine(h, lp.fq)
    k = affine(sender, lp.fk)
    gamma = scale(tsum(mul(gather_rows(q, view.edge_dst), k), axis=1), 1.0 / np.sqrt(cfg.hidden))
    alpha = segment_softmax(gamma, view.edge_dst, view.n_nodes)
    if traces is not None:
        traces.append(LayerTrace(alpha.data.copy(), view.edge_dst, view.n_nodes))
    agg = segment_sum(mul(reshape(alpha, (view.n_edges, 1)), m), view.edge_dst, view.n_nodes)
    if cfg.aggregate == "mean":
        agg = mul(agg, Tensor(1.0 / view.in_degree))
    out = mlp2(agg, lp.fh, train=train, update_running=update_running)
    return add(h, mul(out, Tensor(view.neighbor_mask)))


@dataclass
class FinalStates:
    h_scene: Tensor | None  # scene-view states (entities, [pooled], context)
    h_concept: Tensor | None
    h_merged: Tensor | None
    h_z: Tensor
    h_p: Tensor | None
    traces: list[LayerTrace]


def _replace_last_row(h: Tensor, row: Tensor) -> Tensor:
    n = h.shape[0]
    if n == 1:
        return row
    return concat([gather_rows(h, np.arange(n - 1)), row], axis=0)


def run_gnn(
    compiled: CompiledGraph,
    params: ModelParams,
    cfg: GnnConfig,
    train: bool = True,
    update_running: bool = False,
    collect_traces: bool = False,
) -> FinalStates:
    """Run the configured fusion variant for ``cfg.layers`` rounds."""
    traces: list[LayerTrace] | None = [] if collect_traces else None
    z0 = affine(Tensor(compiled.x_z), params.proj_z)

    if cfg.fusion in ("bidirectional", "unidirectional"):
        sv, cv = compiled.scene_view, compiled.concept_view
        assert sv is not None and cv is not None
        scene_parts: list[Tensor] = []
        if compiled.n_scene_entities:
            scene_parts.append(affine(Tensor(compiled.x_scene), params.proj_s))
        if compiled.x_p is not None:
            scene_parts.append(affine(Tensor(compiled.x_p), params.proj_p))
        scene_parts.append(z0)
        hs = concat(scene_parts, axis=0) if len(scene_parts) > 1 else scene_parts[0]
        concept_parts: list[Tensor] = []
        if compiled.n_concept_entities:
            concept_parts.append(affine(Tensor(compiled.x_concept), params.proj_c))
        concept_parts.append(z0)
        hc = concat(concept_parts, axis=0) if len(concept_parts) > 1 else concept_parts[0]

        hz = z0
        for k in range(cfg.layers):
            hs = layer_forward(sv, hs, params.scene_layers[k], cfg, train, update_running, traces)
            hc = layer_forward(cv, hc, params.concept_layers[k], cfg, train, update_running, traces)
            if cfg.fusion == "bidirectional":
                zs = gather_rows(hs, [sv.n_nodes - 1])
                zc = gather_rows(hc, [cv.n_nodes - 1])
                hz = affine(concat([zs, zc], axis=1), params.fz)
            else:
                hz = z0  # context node emits but never aggregates
            hs = _replace_last_row(hs, hz)
            hc = _replace_last_row(hc, hz)
        h_p = (
            gather_rows(hs, [compiled.n_scene_entities])
            if compiled.x_p is not None
            else None
        )
        return FinalStates(hs, hc, None, hz, h_p, traces or [])

    mv = compiled.merged_view
    assert mv is not None
    parts: list[Tensor] = []
    if compiled.n_scene_entities:
        parts.append(affine(Tensor(compiled.x_scene), params.proj_s))
    if compiled.x_p is not None:
        parts.append(affine(Tensor(compiled.x_p), params.proj_p))
    if compiled.n_concept_entities:
        parts.append(affine(Tensor(compiled.x_concept), params.proj_c))
    parts.append(z0)
    hm = concat(parts, axis=0) if len(parts) > 1 else parts[0]
    for k in range(cfg.layers):
        hm = layer_forward(mv, hm, params.single_layers[k], cfg, train, update_running, traces)
    hz = gather_rows(hm, [mv.n_nodes - 1])
    h_p = (
        gather_rows(hm, [compiled.merged_p_idx])
        if compiled.merged_p_idx is not None
        else None
    )
    return FinalStates(None, None, hm, hz, h_p, traces or [])
