"""Command-line entry points.

Exit codes: 0 success, 1 validation failure, 2 numeric failure, 3 I/O or
file-format failure.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from .builder import build_example_graphs
from .errors import FormatError, NumericError, ValidationError
from .gnn import init_model_params
from .gradcheck import grad_check
from .model import example_loss
from .pipeline import (
    Dataset,
    RunConfig,
    eval_run,
    gnn_config,
    load_checkpoint,
    load_dataset,
    prepare,
    save_checkpoint,
    train_run,
)
from .report import write_history_files, write_metrics_figure
from .synth import SyntheticSpec, generate, write_dataset


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            click.echo(f"validation error: {exc}", err=True)
            sys.exit(1)
        except NumericError as exc:
            click.echo(f"numeric error: {exc}", err=True)
            sys.exit(2)
        except (FormatError, OSError) as exc:
            click.echo(f"i/o error: {exc}", err=True)
            sys.exit(3)

    return wrapper


@click.group()
@click.option("--seed", default=0, show_default=True, help="Global random seed.")
@click.option("--threads", default=1, show_default=True, help="Worker threads for evaluation.")
@click.pass_context
def main(ctx, seed, threads):
    """Multimodal graph question answering toolkit."""
    ctx.ensure_object(dict)
    ctx.obj["seed"] = seed
    ctx.obj["threads"] = threads


def _run_config(ctx, **overrides) -> RunConfig:
    cfg = RunConfig(seed=ctx.obj["seed"], threads=ctx.obj["threads"])
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def _write_run_config(run: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.json").write_text(json.dumps(run.to_json_dict(), indent=1))


_shared_options = [
    click.option("--epochs", type=int, default=None),
    click.option("--warmup", type=int, default=None),
    click.option("--lr-encoder", type=float, default=None),
    click.option("--lr-gnn", type=float, default=None),
    click.option("--layers", type=int, default=None),
    click.option("--hidden", type=int, default=None),
    click.option("--norm-mode", type=click.Choice(["batch", "layer", "none"]), default=None),
    click.option(
        "--fusion",
        type=click.Choice(["bidirectional", "unidirectional", "single", "single_cross_modal"]),
        default=None,
    ),
    click.option("--target-train-acc", type=float, default=None),
]


def _with_options(opts):
    def deco(fn):
        for opt in reversed(opts):
            fn = opt(fn)
        return fn

    return deco


@main.command("synth-gen")
@click.argument("out_dir", type=click.Path())
@click.option("--mode", type=click.Choice(["scene_only", "concept_only", "cross_modal"]), required=True)
@click.option("--n-examples", type=int, required=True)
@click.option("--n-candidates", type=int, default=2, show_default=True)
@click.option("--noise", type=float, default=0.1, show_default=True)
@click.pass_context
@_handle_errors
def synth_gen(ctx, out_dir, mode, n_examples, n_candidates, noise):
    """Generate a synthetic dataset with a controlled signal mode."""
    spec = SyntheticSpec(mode, n_examples, n_candidates=n_candidates, noise=noise)
    data = generate(spec, seed=ctx.obj["seed"])
    paths = write_dataset(data, out_dir)
    click.echo(f"wrote {n_examples} examples to {out_dir}")
    click.echo(json.dumps(data.selfcheck["bayes"]))
    _ = paths


@main.command("build-graph")
@click.argument("dataset_dir", type=click.Path(exists=True))
@click.argument("example_id")
@click.option("--out-dir", type=click.Path(), required=True)
@click.pass_context
@_handle_errors
def build_graph(ctx, dataset_dir, example_id, out_dir):
    """Build and save per-candidate graphs for one example."""
    run = _run_config(ctx)
    dataset = load_dataset(dataset_dir)
    matches = [ex for ex in dataset.examples if ex.id == example_id]
    if not matches:
        raise ValidationError(f"example {example_id!r} not found")
    ex = matches[0]
    from .stores import RegionStore

    graphs, reports = build_example_graphs(
        ex,
        dataset.scenes[ex.image_id],
        dataset.triple_store,
        dataset.regions.get(ex.image_id, RegionStore()),
        dataset.features,
        run.builder_config(),
    )
    out = Path(out_dir)
    _write_run_config(run, out)
    for i, (g, rep) in enumerate(zip(graphs, reports)):
        g.save_json(out / f"{example_id}_candidate{i}.json")
        (out / f"{example_id}_candidate{i}.report.json").write_text(
            json.dumps(rep.to_json_dict(), indent=1)
        )
    click.echo(f"wrote {len(graphs)} candidate graphs to {out}")


@main.command("train")
@click.argument("dataset_dir", type=click.Path(exists=True))
@click.option("--out-dir", type=click.Path(), required=True)
@_with_options(_shared_options)
@click.pass_context
@_handle_errors
def train(ctx, dataset_dir, out_dir, **overrides):
    """Train a model; writes checkpoint, JSONL/CSV logs and figures."""
    run = _run_config(ctx, **overrides)
    dataset = load_dataset(dataset_dir)
    result = train_run(dataset, run)
    out = Path(out_dir)
    _write_run_config(run, out)
    save_checkpoint(out / "checkpoint.bin", result.params, result.cfg)
    with open(out / "history.jsonl", "w") as fh:
        for h in result.history:
            fh.write(json.dumps(h.to_json_dict()) + "\n")
    write_history_files(result.history, out)
    (out / "metrics.json").write_text(json.dumps(result.metrics.to_json_dict(), indent=1))
    write_metrics_figure(result.metrics, out)
    click.echo(
        f"trained {len(result.history)} epochs in {result.seconds:.1f}s; "
        f"metrics {json.dumps(result.metrics.to_json_dict())}"
    )


@main.command("eval")
@click.argument("dataset_dir", type=click.Path(exists=True))
@click.argument("checkpoint", type=click.Path(exists=True))
@click.option("--out-dir", type=click.Path(), required=True)
@click.pass_context
@_handle_errors
def eval_cmd(ctx, dataset_dir, checkpoint, out_dir):
    """Evaluate a checkpoint; writes metrics JSON and a figure."""
    run = _run_config(ctx)
    dataset = load_dataset(dataset_dir)
    params, cfg = load_checkpoint(checkpoint)
    metrics = eval_run(dataset, run, params, cfg)
    out = Path(out_dir)
    _write_run_config(run, out)
    (out / "metrics.json").write_text(json.dumps(metrics.to_json_dict(), indent=1))
    write_metrics_figure(metrics, out)
    click.echo(json.dumps(metrics.to_json_dict()))


@main.command("gradcheck")
@click.option("--norm-mode", type=click.Choice(["batch", "layer", "none"]), default="none", show_default=True)
@click.option("--tolerance", type=float, default=1e-4, show_default=True)
@click.pass_context
@_handle_errors
def gradcheck_cmd(ctx, norm_mode, tolerance):
    """Finite-difference check of the full pipeline on a small fixture."""
    seed = ctx.obj["seed"]
    spec = SyntheticSpec("cross_modal", 2, n_scene_entities=3, noise=0.05)
    data = generate(spec, seed=seed)
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        write_dataset(data, tmp)
        dataset = load_dataset(tmp)
        run = RunConfig(seed=seed, layers=2, hidden=8, norm_mode=norm_mode)
        cfg = gnn_config(run, dataset)
        prepared = prepare(dataset, run, cfg)
    params = init_model_params(cfg, seed=seed)
    result = grad_check(
        lambda: example_loss(prepared[0], params, cfg, train=True),
        params.named_tensors(),
    )
    status = "pass" if result.passed(tolerance) else "FAIL"
    click.echo(
        f"{status}: max relative error {result.max_rel_err:.3e} "
        f"at {result.worst_param}[{result.worst_index}] "
        f"({result.n_checked} entries checked)"
    )
    if not result.passed(tolerance):
        raise NumericError(
            f"gradient check failed: {result.worst_param} rel err {result.max_rel_err:.3e}"
        )


if __name__ == "__main__":
    main()
