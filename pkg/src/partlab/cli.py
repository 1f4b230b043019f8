"""Command-line front door: generate data, pretrain, simulate, ablate, serve."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .audit import AuditError
from .dataset import DatasetError, load_dataset
from .engine import EngineError, SessionConfig, replay_audit
from .oracle import OracleConfig
from .proposer import BuiltinProposer, ProposerConfig, ProposerError
from .runner import (ablation_csv, format_ablation_table, run_ablation,
                     run_simulated, write_report)
from .synthetic import FAMILIES, GeneratorSpec, generate_split
from .tree import flatten_tree, prune_tree


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _config_from(config_path, seed, flat, no_symmetry, pool_stop,
                 sample_points) -> SessionConfig:
    data = {}
    if config_path:
        data = json.loads(Path(config_path).read_text(encoding="utf-8"))
    if seed is not None:
        data["seed"] = seed
    if flat:
        data["hierarchical"] = False
    if no_symmetry:
        data["symmetry"] = False
    if pool_stop is not None:
        data["pool_stop"] = pool_stop
    if sample_points is not None:
        data["n_sample_points"] = sample_points
    return SessionConfig.from_dict(data)


@click.group()
def main():
    """Hierarchical active labeling for fine-grained 3D parts."""


@main.command()
@click.option("--family", type=click.Choice(FAMILIES), default="chair")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--train", "n_train", default=40, show_default=True)
@click.option("--test", "n_test", default=200, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--train-spread", default=0.55, show_default=True,
              help="Parameter jitter of the train split relative to test.")
def generate(family, out_dir, n_train, n_test, seed, train_spread):
    """Generate a synthetic train/test dataset pair."""
    train, test = generate_split(family, out_dir, n_train, n_test, seed=seed,
                                 train_spread=train_spread)
    click.echo(f"train manifest: {train}")
    click.echo(f"test manifest:  {test}")


@main.command()
@click.option("--dataset", required=True, type=click.Path(exists=True),
              help="Training dataset manifest (shapes must carry GT labels).")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--flat", is_flag=True, help="Train one flat model over leaves.")
@click.option("--seed", default=0, show_default=True)
@click.option("--sample-points", default=8192, show_default=True)
def pretrain(dataset, out_dir, flat, seed, sample_points):
    """Pre-train per-node proposal models and save them."""
    from .dataset import normalize_shape, sample_shape
    from .engine import SessionEngine
    try:
        _, tree, shapes = load_dataset(dataset)
    except DatasetError as exc:
        _fail(str(exc))
    session_tree = flatten_tree(tree) if flat else prune_tree(tree)
    proposer = BuiltinProposer(session_tree, ProposerConfig(seed=seed))
    cfg = SessionConfig(seed=seed, hierarchical=not flat,
                        n_sample_points=sample_points)
    # Borrow the engine's GT example construction without running a session.
    engine = SessionEngine("pretrain", shapes, tree, proposer, cfg,
                           train_shapes=shapes)
    trained = []
    for nid in session_tree.internal_ids():
        examples = engine._gt_examples(nid, engine.train_shapes)
        if not examples:
            continue
        proposer.pretrain(nid, examples)
        trained.append(nid)
    proposer.save(out_dir)
    click.echo(f"trained {len(trained)} node models: {', '.join(trained)}")
    click.echo(f"saved to {out_dir}")


@main.command()
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--train-dataset", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
@click.option("--proposer", type=click.Choice(["builtin", "random", "none"]),
              default="builtin", show_default=True)
@click.option("--flat", is_flag=True)
@click.option("--no-symmetry", is_flag=True)
@click.option("--pool-stop", type=int, default=None)
@click.option("--sample-points", type=int, default=None)
@click.option("--error-rate", type=float, default=0.0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--audit", "audit_path", type=click.Path())
def simulate(dataset, train_dataset, config_path, seed, proposer, flat,
             no_symmetry, pool_stop, sample_points, error_rate, out_path,
             audit_path):
    """Run a full simulated session and write its report."""
    try:
        cfg = _config_from(config_path, seed, flat, no_symmetry, pool_stop,
                           sample_points)
        if proposer == "builtin" and not train_dataset:
            _fail("--proposer builtin needs --train-dataset")
        manifest, tree, shapes = load_dataset(dataset)
        train_shapes = None
        if train_dataset:
            _, _, train_shapes = load_dataset(train_dataset)
        result = run_simulated(
            f"cli-{cfg.seed}", shapes, tree, cfg,
            OracleConfig(error_rate=error_rate, seed=cfg.seed),
            proposer=proposer, train_shapes=train_shapes,
            audit_path=audit_path, category=manifest.category)
    except (DatasetError, EngineError, ProposerError) as exc:
        _fail(str(exc))
    write_report(result.report, out_path)
    metrics = result.report["metrics"]
    click.echo(f"report written to {out_path}")
    click.echo(f"accuracy={metrics['part_accuracy']:.4f} "
               f"miou={metrics['miou']:.4f} "
               f"hours={result.report['cost']['total_hours']:.3f}")


@main.command()
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--train-dataset", required=True, type=click.Path(exists=True))
@click.option("--seeds", default="0,1,2,3,4", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--sample-points", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="CSV output; a JSON sidecar lands next to it.")
def ablate(dataset, train_dataset, seeds, config_path, sample_points,
           out_path):
    """Run the five-row toggle grid (proposer/hierarchy/symmetry)."""
    try:
        seed_list = [int(s) for s in seeds.split(",") if s.strip() != ""]
        cfg = _config_from(config_path, None, False, False, None,
                           sample_points)
        manifest, tree, shapes = load_dataset(dataset)
        _, _, train_shapes = load_dataset(train_dataset)
        result = run_ablation(shapes, tree, train_shapes, seed_list, cfg,
                              category=manifest.category)
    except (DatasetError, EngineError, ProposerError, ValueError) as exc:
        _fail(str(exc))
    Path(out_path).write_text(ablation_csv(result), encoding="utf-8")
    sidecar = Path(out_path).with_suffix(".json")
    sidecar.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n",
                       encoding="utf-8")
    click.echo(format_ablation_table(result))
    click.echo(f"csv written to {out_path}")


@main.command()
@click.option("--session", "log_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path())
def report(log_path, out_path):
    """Replay an audit log and summarize the reconstructed session."""
    try:
        state = replay_audit(log_path)
    except (AuditError, EngineError) as exc:
        _fail(str(exc))
    summary = {
        "session_id": state.session_id,
        "complete": state.complete,
        "events": state.event_count,
        "cost": state.ledger.to_dict(),
        "nodes": {
            nid: {
                "iterations": ns.iteration,
                "confirmed": len(ns.confirmed),
                "verified_per_iteration": ns.verified_per_iteration,
            }
            for nid, ns in state.nodes.items()
        },
    }
    text = json.dumps(summary, indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(text + "\n", encoding="utf-8")
        click.echo(f"report written to {out_path}")
    else:
        click.echo(text)


@main.command()
@click.option("--port", default=8100, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--dataset-root", default=".", show_default=True,
              type=click.Path(exists=True))
@click.option("--audit-root", type=click.Path())
def serve(port, host, dataset_root, audit_root):
    """Serve the annotation HTTP API."""
    import uvicorn

    from .service import create_app
    app = create_app(dataset_root, audit_root)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
