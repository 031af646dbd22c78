"""Readout, candidate scoring, loss, training loop, and evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    add,
    concat,
    cross_entropy,
    gather_rows,
    mean,
    reshape,
    scale,
    softmax,
    tsum,
)
from .errors import NumericError, ValidationError
from .gnn import CompiledGraph, FinalStates, GnnConfig, ModelParams, run_gnn
from .nn import affine
from .optim import AdamW, ParamGroup, lr_schedule

ENCODER_GROUP_PREFIX = "proj."  # input projections stand in for the trainable text encoder


def pool(h: Tensor, idx: Sequence[int]) -> Tensor:
    """Arithmetic mean of the selected rows; empty selection pools to zero."""
    idx = list(idx)
    if not idx:
        return Tensor(np.zeros((1, h.shape[1])))
    return mean(gather_rows(h, idx), axis=0, keepdims=True)


def readout_vector(states: FinalStates, compiled: CompiledGraph) -> Tensor:
    """Concatenated [scene pool | concept pool | pooled-region | context]."""
    if states.h_merged is not None:
        h_s = pool(states.h_merged, compiled.merged_scene_idx)
        h_c = pool(states.h_merged, compiled.merged_concept_idx)
    else:
        h_s = pool(states.h_scene, range(compiled.n_scene_entities))
        h_c = pool(states.h_concept, range(compiled.n_concept_entities))
    d = states.h_z.shape[1]
    h_p = states.h_p if states.h_p is not None else Tensor(np.zeros((1, d)))
    return concat([h_s, h_c, h_p, states.h_z], axis=1)


def candidate_logits(
    graphs: Sequence[CompiledGraph],
    params: ModelParams,
    cfg: GnnConfig,
    train: bool = True,
    update_running: bool = False,
    collect_traces: bool = False,
) -> tuple[Tensor, list[FinalStates]]:
    if cfg.head != "multiple_choice":
        raise ValidationError("candidate scoring requires the multiple_choice head")
    if len(graphs) < 2:
        raise ValidationError("need at least 2 candidates")
    logits = []
    all_states = []
    for g in graphs:
        states = run_gnn(g, params, cfg, train, update_running, collect_traces)
        logits.append(affine(readout_vector(states, g), params.fc))
        all_states.append(states)
    return reshape(concat(logits, axis=0), (len(graphs),)), all_states


def score_candidates(
    graphs: Sequence[CompiledGraph],
    params: ModelParams,
    cfg: GnnConfig,
    train: bool = False,
) -> np.ndarray:
    logits, _ = candidate_logits(graphs, params, cfg, train=train)
    return softmax(logits).data


def score_open_domain(
    graph: CompiledGraph,
    params: ModelParams,
    cfg: GnnConfig,
    train: bool = False,
) -> np.ndarray:
    if cfg.head != "open_domain":
        raise ValidationError("open-domain scoring requires the open_domain head")
    if cfg.n_answer_classes < 2:
        raise ValidationError("answer vocabulary must have at least 2 classes")
    states = run_gnn(graph, params, cfg, train=train)
    logits = reshape(affine(readout_vector(states, graph), params.fc), (cfg.n_answer_classes,))
    return softmax(logits).data


# ---------------------------------------------------------------------------
# dataset containers


@dataclass
class PreparedExample:
    """Compiled graphs for one QA example, ready for forward passes."""

    id: str
    answer_graphs: list[CompiledGraph] | None
    gold: int
    rationale_graphs: list[CompiledGraph] | None = None
    rationale_gold: int | None = None
    open_graph: CompiledGraph | None = None
    answer_class: int | None = None


def example_loss(
    ex: PreparedExample,
    params: ModelParams,
    cfg: GnnConfig,
    train: bool = True,
    update_running: bool = False,
) -> Tensor:
    """Cross-entropy for one example; rationale task added when present."""
    if cfg.head == "open_domain":
        if ex.open_graph is None or ex.answer_class is None:
            raise ValidationError(f"example {ex.id} lacks open-domain inputs")
        states = run_gnn(ex.open_graph, params, cfg, train, update_running)
        logits = reshape(affine(readout_vector(states, ex.open_graph), params.fc), (cfg.n_answer_classes,))
        return cross_entropy(logits, ex.answer_class)
    logits, _ = candidate_logits(ex.answer_graphs, params, cfg, train, update_running)
    loss = cross_entropy(logits, ex.gold)
    if ex.rationale_graphs is not None:
        rlogits, _ = candidate_logits(ex.rationale_graphs, params, cfg, train, update_running)
        loss = add(loss, cross_entropy(rlogits, ex.rationale_gold))
    return loss


def make_optimizer(
    params: ModelParams,
    lr_encoder: float,
    lr_gnn: float,
    weight_decay: float = 0.01,
    betas: tuple[float, float] = (0.9, 0.999),
) -> AdamW:
    """Two groups: input projections (encoder stand-in) and everything else."""
    named = params.named_tensors()
    enc = {n: t for n, t in named.items() if n.startswith(ENCODER_GROUP_PREFIX)}
    gnn = {n: t for n, t in named.items() if not n.startswith(ENCODER_GROUP_PREFIX)}
    return AdamW(
        [ParamGroup(enc, lr_encoder), ParamGroup(gnn, lr_gnn)],
        betas=betas,
        weight_decay=weight_decay,
    )


def train_epoch(
    dataset: Sequence[PreparedExample],
    params: ModelParams,
    optimizer: AdamW,
    cfg: GnnConfig,
    lr_mult: float = 1.0,
    shuffle_rng: np.random.Generator | None = None,
) -> float:
    """One pass of per-example updates; returns the mean loss."""
    if not dataset:
        raise ValidationError("empty training dataset")
    order = np.arange(len(dataset))
    if shuffle_rng is not None:
        shuffle_rng.shuffle(order)
    named = params.named_tensors()
    by_tensor = {id(t): n for n, t in named.items()}
    total = 0.0
    for i in order:
        ex = dataset[i]
        with Tape() as tape:
            loss = example_loss(ex, params, cfg, train=True, update_running=True)
            if not np.isfinite(loss.data):
                raise NumericError(
                    f"non-finite loss on example {ex.id!r} "
                    f"(param norm {_param_norm(named):.3e})"
                )
            grads = tape.backward(loss)
        named_grads = {
            by_tensor[id(t)]: g for t, g in grads.items() if id(t) in by_tensor
        }
        optimizer.step(named_grads, lr_mult)
        total += float(loss.data)
    return total / len(dataset)


def _param_norm(named: dict[str, Tensor]) -> float:
    return float(np.sqrt(sum(np.sum(t.data**2) for t in named.values())))


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class Metrics:
    q2a: float | None
    qa2r: float | None
    q2ar: float | None
    n_examples: int

    def to_json_dict(self) -> dict:
        return {
            "q2a": self.q2a,
            "qa2r": self.qa2r,
            "q2ar": self.q2ar,
            "n_examples": self.n_examples,
        }


@dataclass
class PredictionRecord:
    answer_pred: int
    answer_gold: int
    rationale_pred: int | None = None
    rationale_gold: int | None = None


def aggregate_predictions(records: Sequence[PredictionRecord]) -> Metrics:
    """Answer accuracy, rationale-given-answer accuracy, and joint accuracy.

    An example counts toward the joint metric only when both the answer and
    the rationale predictions are correct.
    """
    if not records:
        return Metrics(None, None, None, 0)
    a_ok = [r.answer_pred == r.answer_gold for r in records]
    q2a = sum(a_ok) / len(records)
    with_r = [r for r in records if r.rationale_pred is not None]
    if not with_r:
        return Metrics(q2a, None, None, len(records))
    r_ok = {id(r): r.rationale_pred == r.rationale_gold for r in with_r}
    qa2r = sum(r_ok.values()) / len(with_r)
    joint = [
        ok and r_ok[id(r)]
        for ok, r in zip(a_ok, records)
        if id(r) in r_ok
    ]
    q2ar = sum(joint) / len(joint)
    return Metrics(q2a, qa2r, q2ar, len(records))


def predict_example(
    ex: PreparedExample, params: ModelParams, cfg: GnnConfig
) -> PredictionRecord:
    if cfg.head == "open_domain":
        probs = score_open_domain(ex.open_graph, params, cfg)
        return PredictionRecord(int(np.argmax(probs)), ex.answer_class)
    probs = score_candidates(ex.answer_graphs, params, cfg)
    rec = PredictionRecord(int(np.argmax(probs)), ex.gold)
    if ex.rationale_graphs is not None:
        rprobs = score_candidates(ex.rationale_graphs, params, cfg)
        rec.rationale_pred = int(np.argmax(rprobs))
        rec.rationale_gold = ex.rationale_gold
    return rec


def evaluate(
    dataset: Sequence[PreparedExample],
    params: ModelParams,
    cfg: GnnConfig,
    threads: int = 1,
) -> Metrics:
    """Accuracy metrics over a dataset; parallel over examples, fixed-order merge."""
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool_:
            records = list(pool_.map(lambda ex: predict_example(ex, params, cfg), dataset))
    else:
        records = [predict_example(ex, params, cfg) for ex in dataset]
    return aggregate_predictions(records)


def train_accuracy(
    dataset: Sequence[PreparedExample], params: ModelParams, cfg: GnnConfig
) -> float:
    m = evaluate(dataset, params, cfg)
    return m.q2a if m.q2a is not None else 0.0


@dataclass
class EpochLog:
    epoch: int
    lr_mult: float
    mean_loss: float
    train_acc: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "lr_mult": self.lr_mult,
            "mean_loss": self.mean_loss,
            "train_acc": self.train_acc,
        }


def fit(
    dataset: Sequence[PreparedExample],
    params: ModelParams,
    optimizer: AdamW,
    cfg: GnnConfig,
    epochs: int,
    warmup: int,
    seed: int = 0,
    target_train_acc: float | None = None,
    track_accuracy: bool = True,
) -> list[EpochLog]:
    """Scheduled training loop; epochs are numbered 1..epochs in the log."""
    history: list[EpochLog] = []
    for epoch in range(1, epochs + 1):
        mult = lr_schedule(epoch, warmup, epochs)
        rng = np.random.default_rng((seed, epoch))
        loss = train_epoch(dataset, params, optimizer, cfg, mult, rng)
        acc = train_accuracy(dataset, params, cfg) if track_accuracy else None
        history.append(EpochLog(epoch, mult, loss, acc))
        if target_train_acc is not None and acc is not None and acc >= target_train_acc:
            break
    return history
