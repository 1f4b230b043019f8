"""Drivers for unattended sessions: oracle-backed runs, reports, ablations."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .dataset import ShapeRecord, load_dataset
from .engine import EngineError, SessionConfig, SessionEngine
from .metrics import evaluate
from .oracle import OracleAnnotator, OracleConfig
from .proposer import BuiltinProposer, ProposerConfig, RandomProposer
from .tree import OR, LabelTree


@dataclass
class SessionResult:
    engine: SessionEngine
    report: dict


def drive_session(engine: SessionEngine, oracle: OracleAnnotator) -> None:
    """Run a session to completion, answering every task from the oracle."""
    while True:
        task = engine.next_task()
        if task.kind == "done":
            return
        if task.kind == "verification_batch":
            ns = engine.state.active()
            verdicts = {}
            for entry in task.payload["shapes"]:
                sid = entry["shape_id"]
                proposal = ns.proposals[sid]
                verdicts[sid] = oracle.verify(engine.shape(sid), ns.node_id,
                                              proposal)
            engine.submit_verifications(task.payload["batch_id"], verdicts)
        elif task.kind == "modification":
            ns = engine.state.active()
            sid = task.payload["shape_id"]
            summary = ns.proposals[sid]
            if ns.kind == OR:
                label = oracle.modify(engine.shape(sid), ns.node_id,
                                      summary.part_ids, summary.group_label,
                                      None, False)
                engine.submit_modification(sid, group_label=label)
            else:
                edits = oracle.modify(
                    engine.shape(sid), ns.node_id, summary.part_ids,
                    summary.labels, engine.groups[sid],
                    engine.config.symmetry)
                engine.submit_modification(sid, part_labels=edits)
        elif task.kind == "training_wait":
            continue
        else:
            raise EngineError(f"unexpected task kind {task.kind!r}")


def build_report(engine: SessionEngine, seed: int | None = None) -> dict:
    """Session report: metrics vs GT (when present), cost, iteration series."""
    state = engine.state
    report: dict = {
        "session_id": state.session_id,
        "config": state.config.to_dict(),
        "complete": state.complete,
        "category": engine.category,
        "cost": state.ledger.to_dict(),
        "iteration_series": {
            nid: list(ns.verified_per_iteration)
            for nid, ns in state.nodes.items()
        },
        "node_pools": {nid: len(ns.parts) for nid, ns in state.nodes.items()},
        "node_order": list(state.node_order),
        "events": state.event_count,
    }
    if seed is not None:
        report["seed"] = seed
    leaves = set(engine.tree.leaf_ids())
    has_gt = all(p.gt_label is not None
                 for s in engine.shapes.values() for p in s.parts)
    assignments = {}
    for sid, labels in state.part_labels.items():
        final = {pid: lbl for pid, lbl in labels.items() if lbl in leaves}
        if final:
            assignments[sid] = final
    if has_gt and state.complete:
        gt = {sid: s.gt_labels() for sid, s in engine.shapes.items()}
        counts = {sid: {p.id: len(p.points) for p in s.parts}
                  for sid, s in engine.shapes.items()}
        result = evaluate(assignments, gt, counts, engine.category)
        report["metrics"] = result.to_dict()
    else:
        report["metrics"] = None
        report["progress"] = {
            "labeled_parts": sum(len(v) for v in assignments.values()),
            "total_parts": sum(len(s.parts) for s in engine.shapes.values()),
        }
    return report


def make_proposer(kind: str, tree: LabelTree, config: SessionConfig,
                  proposer_config: ProposerConfig | None = None):
    if kind == "none":
        return None
    if kind == "random":
        return RandomProposer(tree, seed=config.seed)
    if kind == "builtin":
        pcfg = proposer_config or ProposerConfig(seed=config.seed)
        return BuiltinProposer(tree, pcfg)
    raise EngineError(f"unknown proposer kind {kind!r}")


def run_simulated(session_id: str, shapes: list[ShapeRecord], tree: LabelTree,
                  config: SessionConfig, oracle_config: OracleConfig,
                  proposer="builtin", train_shapes=None, audit_path=None,
                  category: str = "",
                  proposer_config: ProposerConfig | None = None) -> SessionResult:
    if isinstance(proposer, str):
        proposer = make_proposer(proposer,
                                 _session_tree(tree, config), config,
                                 proposer_config)
    engine = SessionEngine(session_id, shapes, tree, proposer, config,
                           audit_path=audit_path, train_shapes=train_shapes,
                           category=category)
    oracle = OracleAnnotator(engine.tree, oracle_config)
    drive_session(engine, oracle)
    engine.audit.close()
    return SessionResult(engine, build_report(engine, seed=config.seed))


def _session_tree(tree: LabelTree, config: SessionConfig) -> LabelTree:
    from .tree import flatten_tree, prune_tree
    return prune_tree(tree) if config.hierarchical else flatten_tree(tree)


def run_simulated_from_paths(session_id: str, dataset_path, config,
                             oracle_config, proposer="builtin",
                             train_dataset_path=None, audit_path=None,
                             proposer_config=None) -> SessionResult:
    manifest, tree, shapes = load_dataset(dataset_path)
    train_shapes = None
    if train_dataset_path is not None:
        _, _, train_shapes = load_dataset(train_dataset_path)
    return run_simulated(session_id, shapes, tree, config, oracle_config,
                         proposer=proposer, train_shapes=train_shapes,
                         audit_path=audit_path, category=manifest.category,
                         proposer_config=proposer_config)


# ---------------------------------------------------------------------------
# Ablation battery: the five standard tool configurations.

BIG_POOL_STOP = 10 ** 9

ABLATION_ROWS = (
    # (row key, proposer, hierarchical, symmetry, straight-to-modification)
    ("modify_everything", "none", False, False, True),
    ("proposer_modify_all", "builtin", False, False, True),
    ("flat_active", "builtin", False, True, False),
    ("hier_no_symmetry", "builtin", True, False, False),
    ("full", "builtin", True, True, False),
)


def ablation_config(row_key: str, base: SessionConfig, seed: int) -> tuple:
    for key, proposer, hier, sym, modify_all in ABLATION_ROWS:
        if key == row_key:
            cfg = SessionConfig.from_dict(base.to_dict())
            cfg.hierarchical = hier
            cfg.symmetry = sym
            cfg.seed = seed
            if modify_all:
                cfg.pool_stop = BIG_POOL_STOP
            return cfg, proposer
    raise EngineError(f"unknown ablation row {row_key!r}")


def run_ablation(shapes, tree, train_shapes, seeds, base: SessionConfig,
                 category: str = "",
                 proposer_config: ProposerConfig | None = None) -> dict:
    """Run every ablation row for every seed; returns rows plus per-seed data."""
    rows = []
    for key, proposer_kind, hier, sym, modify_all in ABLATION_ROWS:
        per_seed = []
        for seed in seeds:
            cfg, pkind = ablation_config(key, base, seed)
            pcfg = None
            if proposer_config is not None:
                pcfg = ProposerConfig(**{**proposer_config.__dict__,
                                         "seed": seed})
            result = run_simulated(
                f"ablate-{key}-{seed}", shapes, tree, cfg,
                OracleConfig(seed=seed), proposer=pkind,
                train_shapes=train_shapes, category=category,
                proposer_config=pcfg)
            report = result.report
            per_seed.append({
                "seed": seed,
                "hours": report["cost"]["total_hours"],
                "accuracy": report["metrics"]["part_accuracy"],
                "miou": report["metrics"]["miou"],
                "iteration_series": report["iteration_series"],
                "node_pools": report["node_pools"],
            })
        hours = sorted(r["hours"] for r in per_seed)
        rows.append({
            "row": key,
            "proposer": proposer_kind != "none",
            "hierarchical": hier,
            "symmetry": sym,
            "median_hours": hours[len(hours) // 2],
            "mean_hours": sum(hours) / len(hours),
            "per_seed": per_seed,
        })
    return {"rows": rows, "seeds": list(seeds)}


def format_ablation_table(result: dict) -> str:
    lines = [f"{'row':<22} {'Prop.':^6} {'Hier.':^6} {'Sym.':^6} "
             f"{'hours (median)':>14} {'accuracy':>9}"]
    for row in result["rows"]:
        acc = row["per_seed"][0]["accuracy"]
        lines.append(
            f"{row['row']:<22} "
            f"{'x' if row['proposer'] else '-':^6} "
            f"{'x' if row['hierarchical'] else '-':^6} "
            f"{'x' if row['symmetry'] else '-':^6} "
            f"{row['median_hours']:>14.3f} {acc:>9.4f}")
    return "\n".join(lines)


def ablation_csv(result: dict) -> str:
    lines = ["row,proposer,hierarchical,symmetry,seed,hours,accuracy,miou"]
    for row in result["rows"]:
        for per in row["per_seed"]:
            lines.append(
                f"{row['row']},{int(row['proposer'])},{int(row['hierarchical'])},"
                f"{int(row['symmetry'])},{per['seed']},{per['hours']:.6f},"
                f"{per['accuracy']:.6f},{per['miou']:.6f}")
    return "\n".join(lines) + "\n"


def write_report(report: dict, path) -> None:
    Path(path).write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
