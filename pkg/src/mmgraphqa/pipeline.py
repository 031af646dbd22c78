"""Experiment orchestration: dataset loading, graph preparation, runs.

A dataset directory holds ``triples.tsv`` (concept knowledge graph),
``regions.json`` (per-image region descriptions), ``scenes.jsonl``
(per-image scene triples), ``examples.jsonl`` (QA examples),
``features.bin`` (all referenced feature vectors) and ``dataset.json``
(feature dimensions and generation metadata).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .builder import BuilderConfig, QaExample, SceneTriple, build_example_graphs
from .errors import FormatError, ValidationError
from .gnn import (
    GnnConfig,
    ModelParams,
    compile_graph,
    init_model_params,
)
from .graph import INV_SUFFIX, RESERVED_RELATIONS, REL_CROSS_MODAL
from .model import (
    EpochLog,
    Metrics,
    PreparedExample,
    evaluate,
    fit,
    make_optimizer,
)
from .optim import AdamW
from .serialize import load_arrays, save_arrays
from .stores import (
    FeatureDims,
    FeatureSuite,
    FileFeatureStore,
    Region,
    RegionStore,
    TripleStore,
)


@dataclass
class RunConfig:
    """Training/eval defaults; values mirror the reference configuration."""

    seed: int = 0
    epochs: int = 50
    warmup: int = 15
    lr_encoder: float = 1e-5
    lr_gnn: float = 1e-4
    layers: int = 5
    hidden: int = 16
    norm_mode: str = "batch"
    fusion: str = "bidirectional"
    aggregate: str = "sum"
    head: str = "multiple_choice"
    n_answer_classes: int = 0
    n_scene_cap: int = 20
    n_concept_cap: int = 60
    relevance_threshold: float = 0.6
    top_k_regions: int = 10
    target_train_acc: float | None = None
    threads: int = 1

    def to_json_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json_dict(cls, d: dict) -> "RunConfig":
        return cls(**d)

    def builder_config(self) -> BuilderConfig:
        return BuilderConfig(
            n_scene_cap=self.n_scene_cap,
            n_concept_cap=self.n_concept_cap,
            relevance_threshold=self.relevance_threshold,
            top_k_regions=self.top_k_regions,
        )


@dataclass
class Dataset:
    examples: list[QaExample]
    scenes: dict[str, list[SceneTriple]]
    triple_store: TripleStore
    regions: dict[str, RegionStore]
    features: FeatureSuite
    dims: FeatureDims
    meta: dict = field(default_factory=dict)


def load_dataset(path: str | Path, feature_seed: int = 0) -> Dataset:
    root = Path(path)
    if not root.is_dir():
        raise FormatError(f"dataset directory {root} does not exist")
    try:
        meta = json.loads((root / "dataset.json").read_text())
    except FileNotFoundError:
        meta = {}
    except json.JSONDecodeError as exc:
        raise FormatError(f"{root / 'dataset.json'}: invalid JSON ({exc})") from exc
    dims = FeatureDims(**meta.get("dims", {}))

    triple_store = TripleStore.load(root / "triples.tsv")
    store = FileFeatureStore.load(root / "features.bin")
    features = FeatureSuite(dims, seed=feature_seed, store=store)

    try:
        region_map = json.loads((root / "regions.json").read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{root / 'regions.json'}: invalid JSON ({exc})") from exc
    regions = {
        image_id: RegionStore(
            [Region(r["id"], r["description"], r["feature_ref"]) for r in recs]
        )
        for image_id, recs in region_map.items()
    }

    scenes: dict[str, list[SceneTriple]] = {}
    for lineno, line in enumerate(
        (root / "scenes.jsonl").read_text().splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{root / 'scenes.jsonl'}:{lineno}: invalid JSON") from exc
        scenes[rec["image_id"]] = [SceneTriple(*row) for row in rec["triples"]]

    examples: list[QaExample] = []
    for lineno, line in enumerate(
        (root / "examples.jsonl").read_text().splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{root / 'examples.jsonl'}:{lineno}: invalid JSON") from exc
        examples.append(
            QaExample(
                id=rec["id"],
                image_id=rec["image_id"],
                question=rec["question"],
                answers=rec["answers"],
                gold=rec["gold"],
                rationales=rec.get("rationales"),
                rationale_gold=rec.get("rationale_gold"),
                answer_class=rec.get("answer_class"),
            )
        )
    return Dataset(examples, scenes, triple_store, regions, features, dims, meta)


def relation_vocabulary(dataset: Dataset) -> list[str]:
    """Dense relation id assignment: reserved links, scene predicates, then
    concept relations, each followed by its reverse name."""
    base: list[str] = list(RESERVED_RELATIONS)
    scene_preds = sorted(
        {t.predicate for rows in dataset.scenes.values() for t in rows}
    )
    kg_rels = sorted(set(dataset.triple_store.relation_names()))
    for name in scene_preds + kg_rels + [REL_CROSS_MODAL]:
        if name not in base:
            base.append(name)
    out: list[str] = []
    for name in base:
        out.append(name)
        out.append(name + INV_SUFFIX)
    return out


def gnn_config(run: RunConfig, dataset: Dataset) -> GnnConfig:
    return GnnConfig(
        layers=run.layers,
        hidden=run.hidden,
        relations=relation_vocabulary(dataset),
        norm_mode=run.norm_mode,
        fusion=run.fusion,
        aggregate=run.aggregate,
        dims=dataset.dims,
        head=run.head,
        n_answer_classes=run.n_answer_classes,
    )


def prepare(dataset: Dataset, run: RunConfig, cfg: GnnConfig) -> list[PreparedExample]:
    """Build and compile candidate graphs for every example."""
    bc = run.builder_config()
    prepared: list[PreparedExample] = []
    for ex in dataset.examples:
        if ex.image_id not in dataset.scenes:
            raise ValidationError(f"example {ex.id}: unknown image {ex.image_id!r}")
        region_store = dataset.regions.get(ex.image_id, RegionStore())
        graphs, _ = build_example_graphs(
            ex,
            dataset.scenes[ex.image_id],
            dataset.triple_store,
            region_store,
            dataset.features,
            bc,
            task="answer",
        )
        compiled = [compile_graph(g, cfg) for g in graphs]
        item = PreparedExample(ex.id, compiled, ex.gold)
        if ex.rationales:
            rgraphs, _ = build_example_graphs(
                ex,
                dataset.scenes[ex.image_id],
                dataset.triple_store,
                region_store,
                dataset.features,
                bc,
                task="rationale",
            )
            item.rationale_graphs = [compile_graph(g, cfg) for g in rgraphs]
            item.rationale_gold = ex.rationale_gold
        prepared.append(item)
    return prepared


# ---------------------------------------------------------------------------
# runs


@dataclass
class TrainResult:
    params: ModelParams
    cfg: GnnConfig
    history: list[EpochLog]
    metrics: Metrics
    seconds: float


def save_checkpoint(
    path: str | Path, params: ModelParams, cfg: GnnConfig, optimizer: AdamW | None = None
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_arrays(path, params.all_arrays())
    path.with_suffix(".config.json").write_text(json.dumps(cfg.to_json_dict(), indent=1))
    if optimizer is not None:
        save_arrays(path.with_suffix(".opt.bin"), optimizer.state_arrays())


def load_checkpoint(path: str | Path) -> tuple[ModelParams, GnnConfig]:
    path = Path(path)
    cfg_path = path.with_suffix(".config.json")
    if not cfg_path.exists():
        raise FormatError(f"checkpoint config {cfg_path} not found")
    cfg = GnnConfig.from_json_dict(json.loads(cfg_path.read_text()))
    params = init_model_params(cfg, seed=0)
    params.load_arrays(load_arrays(path))
    return params, cfg


def train_run(
    dataset: Dataset,
    run: RunConfig,
    prepared: list[PreparedExample] | None = None,
    cfg: GnnConfig | None = None,
) -> TrainResult:
    t0 = time.perf_counter()
    cfg = cfg or gnn_config(run, dataset)
    prepared = prepared if prepared is not None else prepare(dataset, run, cfg)
    params = init_model_params(cfg, seed=run.seed)
    optimizer = make_optimizer(params, run.lr_encoder, run.lr_gnn)
    history = fit(
        prepared,
        params,
        optimizer,
        cfg,
        epochs=run.epochs,
        warmup=run.warmup,
        seed=run.seed,
        target_train_acc=run.target_train_acc,
    )
    metrics = evaluate(prepared, params, cfg, threads=run.threads)
    return TrainResult(params, cfg, history, metrics, time.perf_counter() - t0)


def eval_run(
    dataset: Dataset,
    run: RunConfig,
    params: ModelParams,
    cfg: GnnConfig,
    prepared: list[PreparedExample] | None = None,
) -> Metrics:
    prepared = prepared if prepared is not None else prepare(dataset, run, cfg)
    return evaluate(prepared, params, cfg, threads=run.threads)
