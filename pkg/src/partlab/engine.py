"""The active-labeling scheduler.

Per tree node, iterations cycle through: propose labels for the unconfirmed
pool, sort by shape confidence, demote symmetry-inconsistent proposals, verify
the high-confidence stream in batches with an adaptive stop, send the worst
low-confidence shapes plus repeat offenders to modification, fine-tune the
proposer on everything confirmed, repeat. A node finishes when every shape is
confirmed; children are entered only afterwards, depth first. When a node's
pool drops below the stop size, all remaining shapes go straight to
modification.

State is event-sourced: the engine mutates state only by applying audit
events, so replaying a log reconstructs the live state (ledger included)
exactly.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from .audit import AuditError, AuditEvent, AuditWriter
from .cost import CostLedger
from .dataset import ShapeRecord, normalize_shape, sample_shape
from .geometry import SymmetryGroups, detect_symmetry_groups
from .proposer import build_proposal
from .tree import AND, OR, LabelTree, flatten_tree, prune_tree


class EngineError(ValueError):
    pass


class StaleBatchError(EngineError):
    """Submitted batch is not the currently outstanding one."""


class NotPendingError(EngineError):
    """Submitted shape is not the outstanding modification task."""


class ScopeError(EngineError):
    """Submitted label is outside the current node's children."""


@dataclass
class SessionConfig:
    batch_size: int = 10
    verify_stop: int = 4
    modify_quota: int = 20
    failure_cap: int = 2
    pool_stop: int = 40
    symmetry: bool = True
    hierarchical: bool = True
    confidence_aggregate: str = "min"
    n_sample_points: int = 8192
    symmetry_tolerance: float = 0.02
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1:
            raise EngineError("batch_size must be >= 1")
        if not 0 <= self.verify_stop <= self.batch_size:
            raise EngineError("verify_stop must be in [0, batch_size]")
        if self.modify_quota < 0:
            raise EngineError("modify_quota must be >= 0")
        if self.failure_cap < 0:
            raise EngineError("failure_cap must be >= 0")
        if self.pool_stop < 0:
            raise EngineError("pool_stop must be >= 0")
        if self.confidence_aggregate not in ("min", "mean", "product"):
            raise EngineError(
                f"unknown confidence aggregate {self.confidence_aggregate!r}")
        if self.n_sample_points < 1:
            raise EngineError("n_sample_points must be >= 1")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "verify_stop": self.verify_stop,
            "modify_quota": self.modify_quota,
            "failure_cap": self.failure_cap,
            "pool_stop": self.pool_stop,
            "symmetry": self.symmetry,
            "hierarchical": self.hierarchical,
            "confidence_aggregate": self.confidence_aggregate,
            "n_sample_points": self.n_sample_points,
            "symmetry_tolerance": self.symmetry_tolerance,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SessionConfig":
        cfg = cls(**{k: data[k] for k in cls().to_dict() if k in data})
        cfg.validate()
        return cfg


@dataclass
class TaskEnvelope:
    kind: str  # verification_batch | modification | training_wait | done
    payload: dict


@dataclass
class ProposalSummary:
    part_ids: list[int]
    labels: dict[int, str] | None
    group_label: str | None
    confidence: float
    demoted: bool

    def to_payload(self) -> dict:
        return {
            "parts": list(self.part_ids),
            "labels": None if self.labels is None
            else {str(pid): lbl for pid, lbl in self.labels.items()},
            "group_label": self.group_label,
            "confidence": self.confidence,
            "demoted": self.demoted,
        }

    @classmethod
    def from_payload(cls, data: dict) -> "ProposalSummary":
        labels = data.get("labels")
        return cls(
            part_ids=[int(p) for p in data["parts"]],
            labels=None if labels is None
            else {int(p): lbl for p, lbl in labels.items()},
            group_label=data.get("group_label"),
            confidence=float(data["confidence"]),
            demoted=bool(data.get("demoted", False)),
        )


@dataclass
class NodeState:
    node_id: str
    kind: str
    n_labels: int
    pool: dict[str, int] = field(default_factory=dict)
    parts: dict[str, list[int]] = field(default_factory=dict)
    confirmed: dict[str, dict[int, str] | str] = field(default_factory=dict)
    iteration: int = 0
    phase: str = "verifying"
    verified_per_iteration: list[int] = field(default_factory=list)
    proposals: dict[str, ProposalSummary] = field(default_factory=dict)
    hc_order: list[str] = field(default_factory=list)
    lc: list[str] = field(default_factory=list)
    consumed: int = 0
    batch_index: int = 0
    pool_stopped: bool = False
    mod_queue: list[str] = field(default_factory=list)
    mod_index: int = 0


@dataclass
class SessionState:
    session_id: str
    config: SessionConfig
    nodes: dict[str, NodeState] = field(default_factory=dict)
    node_order: list[str] = field(default_factory=list)
    active_node: str | None = None
    part_labels: dict[str, dict[int, str]] = field(default_factory=dict)
    ledger: CostLedger = field(default_factory=CostLedger)
    event_count: int = 0
    complete: bool = False

    @property
    def clock(self) -> float:
        return self.ledger.total_seconds

    def node(self, node_id: str) -> NodeState:
        return self.nodes[node_id]

    def active(self) -> NodeState | None:
        return None if self.active_node is None else self.nodes[self.active_node]


# ---------------------------------------------------------------------------
# Event application (the only state mutations anywhere).


def _confirm(state: SessionState, ns: NodeState, sid: str,
             labels: dict[int, str] | str, parts: list[int]) -> None:
    shape_labels = state.part_labels.setdefault(sid, {})
    if isinstance(labels, str):
        for pid in parts:
            shape_labels[pid] = labels
    else:
        shape_labels.update(labels)
    ns.confirmed[sid] = labels
    ns.pool.pop(sid, None)


def _select_modification(state: SessionState, ns: NodeState) -> list[str]:
    cfg = state.config

    def conf(sid: str) -> float:
        return ns.proposals[sid].confidence

    candidates = list(ns.lc) + list(ns.hc_order[ns.consumed:])
    ranked = sorted(candidates, key=lambda sid: (conf(sid), sid))
    selected = set(ranked[: cfg.modify_quota])
    selected |= {sid for sid, fails in ns.pool.items()
                 if fails > cfg.failure_cap}
    return sorted(selected, key=lambda sid: (conf(sid), sid))


def _apply_propose(state: SessionState, payload: dict) -> None:
    node_id = payload["node"]
    summaries = {sid: ProposalSummary.from_payload(p)
                 for sid, p in payload["proposals"].items()}
    if state.active_node is None:
        if node_id in state.nodes:
            raise EngineError(f"node {node_id!r} was already processed")
        ns = NodeState(node_id, payload["node_kind"], int(payload["n_labels"]),
                       pool={sid: 0 for sid in summaries},
                       parts={sid: list(s.part_ids)
                              for sid, s in summaries.items()})
        state.nodes[node_id] = ns
        state.node_order.append(node_id)
        state.active_node = node_id
    elif state.active_node == node_id:
        ns = state.node(node_id)
        if ns.phase != "iter_end":
            raise EngineError(f"unexpected propose in phase {ns.phase!r}")
        if set(summaries) != set(ns.pool):
            raise EngineError("proposals do not cover the remaining pool")
    else:
        raise EngineError(
            f"propose for {node_id!r} while {state.active_node!r} is active")
    if payload["iteration"] != ns.iteration + 1:
        raise EngineError("propose iteration out of sequence")
    ns.iteration += 1
    ns.proposals = summaries
    ns.verified_per_iteration.append(0)
    ns.consumed = 0
    ns.batch_index = 0
    ns.mod_index = 0
    pool_stopped = len(ns.pool) < state.config.pool_stop
    if bool(payload["pool_stop"]) != pool_stopped:
        raise EngineError("pool_stop flag inconsistent with pool size")
    ns.pool_stopped = pool_stopped

    def conf(sid: str) -> float:
        return summaries[sid].confidence

    ns.hc_order = sorted((sid for sid in summaries if not summaries[sid].demoted),
                         key=lambda sid: (-conf(sid), sid))
    ns.lc = sorted((sid for sid in summaries if summaries[sid].demoted),
                   key=lambda sid: (conf(sid), sid))
    if pool_stopped:
        ns.phase = "modifying"
        ns.mod_queue = sorted(ns.pool, key=lambda sid: (conf(sid), sid))
    elif not ns.hc_order:
        ns.phase = "modifying"
        ns.mod_queue = _select_modification(state, ns)
        if not ns.mod_queue:
            ns.phase = "iter_end"
    else:
        ns.phase = "verifying"
        ns.mod_queue = []


def _apply_verify_batch(state: SessionState, payload: dict) -> None:
    ns = state.active()
    if ns is None or ns.node_id != payload["node"] or ns.phase != "verifying":
        raise EngineError("verify_batch event does not match engine phase")
    if payload["iteration"] != ns.iteration:
        raise EngineError("verify_batch iteration mismatch")
    shapes = list(payload["shapes"])
    expected = ns.hc_order[ns.consumed: ns.consumed + len(shapes)]
    if shapes != expected or int(payload["batch_index"]) != ns.batch_index:
        raise EngineError("verify_batch does not match the outstanding batch")
    cfg = state.config
    if len(shapes) > cfg.batch_size:
        raise EngineError("batch larger than configured size")
    verdicts = payload["verdicts"]
    if set(verdicts) != set(shapes):
        raise EngineError("verdicts must cover exactly the batch")
    full = len(shapes) == cfg.batch_size
    if bool(payload["full_batch"]) != full:
        raise EngineError("full_batch flag inconsistent")
    passes = 0
    parts_passed = 0
    for sid in shapes:
        summary = ns.proposals[sid]
        if verdicts[sid]:
            passes += 1
            parts_passed += len(summary.part_ids)
            labels = summary.labels if ns.kind == AND else summary.group_label
            _confirm(state, ns, sid, labels, summary.part_ids)
        else:
            ns.pool[sid] += 1
    checked = parts_passed if ns.kind == AND else passes
    state.ledger.charge("verify_check", checked, ns.n_labels, ns.node_id)
    state.ledger.charge("verify_fail", len(shapes) - passes, ns.n_labels,
                        ns.node_id)
    ns.verified_per_iteration[-1] += passes
    ns.consumed += len(shapes)
    ns.batch_index += 1
    stopped = full and passes < cfg.verify_stop
    if bool(payload["stopped"]) != stopped:
        raise EngineError("stop flag inconsistent with the stop rule")
    if stopped or ns.consumed >= len(ns.hc_order):
        ns.phase = "modifying"
        ns.mod_queue = _select_modification(state, ns)
        if not ns.mod_queue:
            ns.phase = "iter_end"


def _apply_modify_shape(state: SessionState, payload: dict) -> None:
    ns = state.active()
    if ns is None or ns.node_id != payload["node"] or ns.phase != "modifying":
        raise EngineError("modify_shape event does not match engine phase")
    sid = payload["shape"]
    if ns.mod_index >= len(ns.mod_queue) or ns.mod_queue[ns.mod_index] != sid:
        raise EngineError(f"shape {sid!r} is not the outstanding modification")
    summary = ns.proposals[sid]
    if ns.kind == OR:
        label = payload["group_label"]
        edited = 1 if payload["edited_group"] else 0
        _confirm(state, ns, sid, label, summary.part_ids)
        state.ledger.charge("modify_edit", edited, ns.n_labels, ns.node_id)
        state.ledger.charge("modify_check", 1 - edited, ns.n_labels, ns.node_id)
    else:
        labels = {int(p): lbl for p, lbl in payload["labels"].items()}
        if set(labels) != set(summary.part_ids):
            raise EngineError("modification labels must cover all routed parts")
        edited = [int(p) for p in payload["edited"]]
        checked = [int(p) for p in payload["checked"]]
        filled = [int(p) for p in payload["filled"]]
        if sorted(edited + checked + filled) != sorted(summary.part_ids):
            raise EngineError("edited/checked/filled must partition the parts")
        _confirm(state, ns, sid, labels, summary.part_ids)
        state.ledger.charge("modify_edit", len(edited), ns.n_labels, ns.node_id)
        state.ledger.charge("modify_check", len(checked) + len(filled),
                            ns.n_labels, ns.node_id)
    ns.mod_index += 1
    if ns.mod_index >= len(ns.mod_queue):
        ns.phase = "iter_end"


def _apply_finetune(state: SessionState, payload: dict) -> None:
    ns = state.active()
    if ns is None or ns.node_id != payload["node"] or ns.phase != "iter_end":
        raise EngineError("finetune event does not match engine phase")


def _apply_node_complete(state: SessionState, payload: dict) -> None:
    ns = state.active()
    if ns is None or ns.node_id != payload["node"]:
        raise EngineError("node_complete does not match the active node")
    if ns.pool:
        raise EngineError("node_complete with unconfirmed shapes in the pool")
    ns.phase = "complete"
    state.active_node = None


def _apply_session_complete(state: SessionState, payload: dict) -> None:
    if state.active_node is not None:
        raise EngineError("session_complete while a node is active")
    state.complete = True


_APPLY = {
    "propose": _apply_propose,
    "verify_batch": _apply_verify_batch,
    "modify_shape": _apply_modify_shape,
    "finetune": _apply_finetune,
    "node_complete": _apply_node_complete,
    "session_complete": _apply_session_complete,
}


def apply_event(state: SessionState, kind: str, payload: dict) -> float:
    """Apply one event; returns the simulated seconds it charged."""
    if state.complete:
        raise EngineError("session is already complete")
    before = state.ledger.total_seconds
    _APPLY[kind](state, payload)
    state.event_count += 1
    return state.ledger.total_seconds - before


def replay_events(events: list[AuditEvent]) -> SessionState:
    """Rebuild session state from an audit log.

    The first event must be a propose carrying the session config. Charged
    costs and timestamps are cross-checked against the log, so silent
    divergence from the live run is impossible.
    """
    if not events:
        raise AuditError("empty audit log has no session to replay")
    first = events[0]
    if first.kind != "propose" or "session_config" not in first.payload:
        raise AuditError("first event must be a propose with session_config")
    config = SessionConfig.from_dict(first.payload["session_config"])
    state = SessionState(session_id=first.session_id, config=config)
    for event in events:
        delta = apply_event(state, event.kind, event.payload)
        if delta != event.simulated_cost_seconds:
            raise AuditError(
                f"event {event.seq}: cost {delta} != logged "
                f"{event.simulated_cost_seconds}")
        if state.clock != event.timestamp:
            raise AuditError(f"event {event.seq}: clock mismatch")
    return state


def replay_audit(log_path) -> SessionState:
    from .audit import read_audit
    return replay_events(read_audit(log_path))


# ---------------------------------------------------------------------------
# Live decision layer.


class SessionEngine:
    """Drives a session: produces tasks, accepts annotator submissions.

    All decisions are serialized into audit events and applied through the
    same transitions replay uses. `next_task()` advances automatic phases
    (proposing, fine-tuning, node accounting) until human input is needed.
    """

    def __init__(self, session_id: str, shapes: list[ShapeRecord],
                 tree: LabelTree, proposer, config: SessionConfig,
                 audit_path=None, train_shapes: list[ShapeRecord] | None = None,
                 category: str = "", async_training: bool = False):
        config.validate()
        if not shapes:
            raise EngineError("session needs at least one shape")
        self.config = config
        self.raw_tree = tree
        self.tree = prune_tree(tree) if config.hierarchical else flatten_tree(tree)
        self.proposer = proposer
        self.category = category
        self.async_training = async_training
        # Symmetry detection runs on ingest geometry: resampling can tilt the
        # principal axes of parts with near-degenerate cross sections, which
        # would break exact-copy matches.
        self.shapes: dict[str, ShapeRecord] = {}
        self.groups: dict[str, SymmetryGroups] = {}
        for s in shapes:
            normalized = normalize_shape(s)
            self.groups[normalized.id] = detect_symmetry_groups(
                normalized, config.symmetry_tolerance)
            self.shapes[normalized.id] = sample_shape(
                normalized, config.n_sample_points, config.seed)
        self.train_shapes = None
        if train_shapes:
            self.train_shapes = [
                sample_shape(normalize_shape(s), config.n_sample_points,
                             config.seed)
                for s in train_shapes
            ]
        self.audit = AuditWriter(audit_path)
        self.state = SessionState(session_id=session_id, config=config)
        self._node_parts: dict[str, dict[str, list[int]]] = {}
        self._train_thread: threading.Thread | None = None
        self._train_progress = 0.0
        self._train_error: Exception | None = None

    # -- plumbing --

    def _emit(self, kind: str, payload: dict) -> AuditEvent:
        delta = apply_event(self.state, kind, payload)
        event = AuditEvent(
            seq=self.state.event_count - 1,
            timestamp=self.state.clock,
            session_id=self.state.session_id,
            kind=kind,
            payload=payload,
            simulated_cost_seconds=delta,
        )
        self.audit.append(event)
        return event

    def shape(self, sid: str) -> ShapeRecord:
        if sid not in self.shapes:
            raise EngineError(f"unknown shape {sid!r}")
        return self.shapes[sid]

    def node_children(self, node_id: str) -> list[str]:
        return self.tree.children_labels(node_id)

    def palette(self, node_id: str) -> dict[str, list[int]]:
        return {c: list(self.tree.color(c))
                for c in self.tree.children_labels(node_id)}

    # -- routing --

    def _routed(self, node_id: str) -> dict[str, list[int]]:
        root = self.tree.root.id
        out: dict[str, list[int]] = {}
        for sid in sorted(self.shapes):
            shape = self.shapes[sid]
            if node_id == root:
                pids = [p.id for p in shape.parts]
            else:
                labels = self.state.part_labels.get(sid, {})
                pids = [p.id for p in shape.parts if labels.get(p.id) == node_id]
            if pids:
                out[sid] = sorted(pids)
        return out

    def _next_pending_node(self) -> str | None:
        for nid in self.tree.internal_ids():
            if nid in self.state.nodes:
                continue
            if self._routed(nid):
                return nid
        return None

    # -- GT example construction (pretraining / fine-tuning inputs) --

    def _gt_group_label(self, node_id: str, leaves: list[str]) -> str:
        children = self.tree.children_labels(node_id)
        votes: dict[str, int] = {}
        for leaf in leaves:
            child = self.tree.child_toward(node_id, leaf)
            if child is not None:
                votes[child] = votes.get(child, 0) + 1
        if not votes:
            raise EngineError(f"no GT labels route to node {node_id!r}")
        return max(votes, key=lambda c: (votes[c], -children.index(c)))

    def _gt_examples(self, node_id: str, shapes: list[ShapeRecord]):
        kind = self.tree.kind(node_id)
        examples = []
        for shape in sorted(shapes, key=lambda s: s.id):
            gt = shape.gt_labels()
            routed = [p.id for p in shape.parts
                      if self.tree.child_toward(node_id, gt[p.id]) is not None]
            if not routed:
                continue
            if kind == OR:
                label = self._gt_group_label(node_id,
                                             [gt[pid] for pid in routed])
                examples.append((shape, sorted(routed), label))
            else:
                labels = {pid: self.tree.child_toward(node_id, gt[pid])
                          for pid in routed}
                examples.append((shape, sorted(routed), labels))
        return examples

    def _confirmed_examples(self, ns: NodeState):
        examples = []
        for sid in sorted(ns.confirmed):
            labels = ns.confirmed[sid]
            examples.append((self.shapes[sid], sorted(ns.parts[sid]), labels))
        return examples

    # -- phase advancement --

    def _ensure_trained(self, node_id: str) -> None:
        if self.proposer is None or not getattr(self.proposer, "trainable", False):
            return
        if self.proposer.is_trained(node_id):
            return
        if not self.train_shapes:
            raise EngineError(
                f"no trained model for node {node_id!r} and no training data")
        self.proposer.pretrain(node_id, self._gt_examples(node_id,
                                                          self.train_shapes))

    def _symmetry_demoted(self, sid: str, part_ids: list[int],
                          labels: dict[int, str]) -> bool:
        for group in self.groups[sid].restricted(part_ids).groups:
            if len({labels[p] for p in group}) > 1:
                return True
        return False

    def _emit_propose(self, node_id: str, iteration: int) -> None:
        kind = self.tree.kind(node_id)
        children = self.tree.children_labels(node_id)
        routed = self._node_parts[node_id]
        if iteration == 1:
            pool_sids = sorted(routed)
        else:
            pool_sids = sorted(self.state.node(node_id).pool)
        proposals: dict[str, dict] = {}
        for sid in pool_sids:
            parts = routed[sid]
            if self.proposer is None:
                # Nothing to verify without proposals: route straight to the
                # low-confidence stream so shapes confirm via modification.
                summary = ProposalSummary(parts, None, None, 0.0, True)
            else:
                raw = self.proposer.propose(node_id, self.shapes[sid], parts)
                prop = build_proposal(sid, node_id, kind, children, parts, raw,
                                      self.config.confidence_aggregate)
                demoted = False
                if self.config.symmetry and kind == AND:
                    demoted = self._symmetry_demoted(sid, parts, prop.labels)
                summary = ProposalSummary(parts, prop.labels, prop.group_label,
                                          prop.confidence, demoted)
            proposals[sid] = summary.to_payload()
        payload = {
            "node": node_id,
            "node_kind": kind,
            "n_labels": len(children),
            "iteration": iteration,
            "pool_stop": len(pool_sids) < self.config.pool_stop,
            "proposals": proposals,
        }
        if self.state.event_count == 0:
            payload["session_config"] = self.config.to_dict()
        self._emit("propose", payload)

    def _enter_node(self, node_id: str) -> None:
        self._node_parts[node_id] = self._routed(node_id)
        self._ensure_trained(node_id)
        self._emit_propose(node_id, iteration=1)

    def _run_finetune(self, ns: NodeState) -> None:
        examples = self._confirmed_examples(ns)
        if self.async_training:
            self._train_progress = 0.0
            self._train_error = None

            def work():
                try:
                    self.proposer.finetune(ns.node_id, examples,
                                           progress=self._set_progress)
                except Exception as exc:  # surfaced on the next task fetch
                    self._train_error = exc

            self._train_thread = threading.Thread(target=work, daemon=True)
            self._train_thread.start()
        else:
            self.proposer.finetune(ns.node_id, examples)
            self._emit("finetune", {"node": ns.node_id,
                                    "iteration": ns.iteration,
                                    "n_confirmed": len(examples)})

    def _set_progress(self, fraction: float) -> None:
        self._train_progress = fraction

    def _wants_finetune(self, ns: NodeState) -> bool:
        return (
            self.proposer is not None
            and getattr(self.proposer, "trainable", False)
            and bool(ns.confirmed)
            and bool(ns.pool)              # another iteration will use it
            and not ns.pool_stopped
        )

    def next_task(self) -> TaskEnvelope:
        guard = 0
        while True:
            guard += 1
            if guard > 100_000:
                raise EngineError("scheduler failed to make progress")
            if self.state.complete:
                return TaskEnvelope("done", {"session_id": self.state.session_id})
            if self._train_thread is not None:
                if self._train_thread.is_alive():
                    return TaskEnvelope("training_wait",
                                        {"progress": self._train_progress})
                self._train_thread.join()
                thread_error = self._train_error
                self._train_thread = None
                if thread_error is not None:
                    raise thread_error
                ns = self.state.active()
                self._emit("finetune", {
                    "node": ns.node_id,
                    "iteration": ns.iteration,
                    "n_confirmed": len(self._confirmed_examples(ns)),
                })
                self._emit_propose(ns.node_id, ns.iteration + 1)
                continue
            ns = self.state.active()
            if ns is None:
                nid = self._next_pending_node()
                if nid is None:
                    self._emit("session_complete", {})
                    continue
                self._enter_node(nid)
                continue
            if ns.phase == "verifying":
                return TaskEnvelope("verification_batch",
                                    self._verification_payload(ns))
            if ns.phase == "modifying":
                return TaskEnvelope("modification",
                                    self._modification_payload(ns))
            if ns.phase == "iter_end":
                if ns.pool and self._wants_finetune(ns):
                    self._run_finetune(ns)
                    if self.async_training:
                        continue
                if ns.pool:
                    self._emit_propose(ns.node_id, ns.iteration + 1)
                else:
                    self._emit("node_complete", {"node": ns.node_id,
                                                 "iterations": ns.iteration})
                continue
            raise EngineError(f"unexpected phase {ns.phase!r}")

    # -- task payloads --

    def current_batch_id(self, ns: NodeState) -> str:
        return f"{ns.node_id}:{ns.iteration}:{ns.batch_index}"

    def _verification_payload(self, ns: NodeState) -> dict:
        batch = ns.hc_order[ns.consumed: ns.consumed + self.config.batch_size]
        shapes = []
        for sid in batch:
            s = ns.proposals[sid]
            shapes.append({
                "shape_id": sid,
                "parts": list(s.part_ids),
                "proposed": None if s.labels is None
                else {str(pid): lbl for pid, lbl in s.labels.items()},
                "group_label": s.group_label,
                "confidence": s.confidence,
            })
        return {
            "batch_id": self.current_batch_id(ns),
            "node": ns.node_id,
            "node_kind": ns.kind,
            "iteration": ns.iteration,
            "children": self.node_children(ns.node_id),
            "palette": self.palette(ns.node_id),
            "shapes": shapes,
        }

    def _modification_payload(self, ns: NodeState) -> dict:
        sid = ns.mod_queue[ns.mod_index]
        s = ns.proposals[sid]
        sym_groups = []
        if self.config.symmetry:
            sym_groups = [list(g) for g in
                          self.groups[sid].restricted(s.part_ids).groups]
        return {
            "shape_id": sid,
            "node": ns.node_id,
            "node_kind": ns.kind,
            "iteration": ns.iteration,
            "children": self.node_children(ns.node_id),
            "palette": self.palette(ns.node_id),
            "parts": list(s.part_ids),
            "proposed": None if s.labels is None
            else {str(pid): lbl for pid, lbl in s.labels.items()},
            "group_label": s.group_label,
            "symmetry_groups": sym_groups,
        }

    # -- submissions --

    def submit_verifications(self, batch_id: str,
                             verdicts: dict[str, bool]) -> dict:
        ns = self.state.active()
        if ns is None or ns.phase != "verifying":
            raise StaleBatchError("no verification batch is outstanding")
        if batch_id != self.current_batch_id(ns):
            raise StaleBatchError(
                f"batch {batch_id!r} is stale "
                f"(outstanding: {self.current_batch_id(ns)!r})")
        batch = ns.hc_order[ns.consumed: ns.consumed + self.config.batch_size]
        missing = [sid for sid in batch if sid not in verdicts]
        extra = [sid for sid in verdicts if sid not in batch]
        if missing:
            raise EngineError(f"missing verdicts for shapes {missing}")
        if extra:
            raise EngineError(f"verdicts for shapes not in batch: {extra}")
        full = len(batch) == self.config.batch_size
        passes = sum(1 for sid in batch if verdicts[sid])
        payload = {
            "node": ns.node_id,
            "iteration": ns.iteration,
            "batch_index": ns.batch_index,
            "shapes": list(batch),
            "verdicts": {sid: bool(verdicts[sid]) for sid in batch},
            "full_batch": full,
            "stopped": full and passes < self.config.verify_stop,
        }
        self._emit("verify_batch", payload)
        return {"passed": passes, "failed": len(batch) - passes,
                "stopped": payload["stopped"]}

    def pending_modification(self) -> str | None:
        ns = self.state.active()
        if ns is None or ns.phase != "modifying":
            return None
        return ns.mod_queue[ns.mod_index]

    def submit_modification(self, shape_id: str,
                            part_labels: dict[int, str] | None = None,
                            group_label: str | None = None) -> dict:
        ns = self.state.active()
        if ns is None or ns.phase != "modifying":
            raise NotPendingError("no modification task is outstanding")
        expected = ns.mod_queue[ns.mod_index]
        if shape_id != expected:
            raise NotPendingError(
                f"shape {shape_id!r} is not pending modification "
                f"(outstanding: {expected!r})")
        children = set(self.node_children(ns.node_id))
        summary = ns.proposals[shape_id]
        if ns.kind == OR:
            if group_label is None:
                raise EngineError("OR-node modification needs group_label")
            if group_label not in children:
                raise ScopeError(
                    f"label {group_label!r} is outside node {ns.node_id!r}")
            edited = group_label != summary.group_label
            payload = {
                "node": ns.node_id,
                "iteration": ns.iteration,
                "shape": shape_id,
                "group_label": group_label,
                "edited_group": bool(edited),
            }
            self._emit("modify_shape", payload)
            return {"labels": {pid: group_label for pid in summary.part_ids},
                    "edited": [], "filled": [], "edited_group": bool(edited)}

        submitted = {int(p): lbl for p, lbl in (part_labels or {}).items()}
        routed = list(summary.part_ids)
        for pid, lbl in submitted.items():
            if pid not in set(routed):
                raise EngineError(
                    f"part {pid} is not routed to node {ns.node_id!r}")
            if lbl not in children:
                raise ScopeError(
                    f"label {lbl!r} is outside node {ns.node_id!r}")
        proposed = summary.labels or {}
        edited = [pid for pid in sorted(submitted)
                  if submitted[pid] != proposed.get(pid)]
        # Symmetry propagation: unsubmitted members of a group follow its
        # lowest-id actually-edited member.
        fill: dict[int, str] = {}
        if self.config.symmetry:
            for group in self.groups[shape_id].restricted(routed).groups:
                reps = [p for p in group if p in submitted
                        and submitted[p] != proposed.get(p)]
                if not reps:
                    continue
                src = min(reps)
                for p in group:
                    if p not in submitted:
                        fill[p] = submitted[src]
        final: dict[int, str] = {}
        fallback = self.node_children(ns.node_id)[0]
        for pid in routed:
            if pid in submitted:
                final[pid] = submitted[pid]
            elif pid in fill:
                final[pid] = fill[pid]
            elif pid in proposed:
                final[pid] = proposed[pid]
            else:
                # Unreachable for well-behaved annotators; keep the shape
                # fully labeled rather than wedging the session.
                final[pid] = fallback
                edited.append(pid)
        edited = sorted(set(edited))
        filled = sorted(set(fill) - set(edited))
        checked = sorted(set(routed) - set(edited) - set(filled))
        payload = {
            "node": ns.node_id,
            "iteration": ns.iteration,
            "shape": shape_id,
            "labels": {str(pid): lbl for pid, lbl in final.items()},
            "edited": edited,
            "checked": checked,
            "filled": filled,
        }
        self._emit("modify_shape", payload)
        return {"labels": final, "edited": edited, "filled": filled}

    # -- reporting --

    def final_labels(self) -> dict[str, dict[int, str]]:
        return {sid: dict(labels)
                for sid, labels in self.state.part_labels.items()}

    def snapshot(self) -> dict:
        state = self.state
        return {
            "session_id": state.session_id,
            "config": state.config.to_dict(),
            "complete": state.complete,
            "active_node": state.active_node,
            "event_count": state.event_count,
            "clock": state.clock,
            "nodes": {
                nid: {
                    "kind": ns.kind,
                    "iteration": ns.iteration,
                    "phase": ns.phase,
                    "pool": dict(ns.pool),
                    "confirmed": len(ns.confirmed),
                    "verified_per_iteration": list(ns.verified_per_iteration),
                }
                for nid, ns in state.nodes.items()
            },
            "cost": state.ledger.to_dict(),
        }
