"""HTTP API over the labeling engine.

One outstanding task per session; every mutation funnels through the
session's lock and lands as exactly one audit event. Simulated sessions run
to completion on a background thread with state observable read-only.
"""

from __future__ import annotations

import json
import threading
import uuid
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from ..dataset import DatasetError, load_dataset
from ..engine import (EngineError, NotPendingError, ScopeError, SessionConfig,
                      SessionEngine, StaleBatchError)
from ..geometry import compute_obb
from ..oracle import OracleAnnotator, OracleConfig
from ..proposer import BuiltinProposer, ProposerError
from ..runner import build_report, make_proposer
from ..tree import flatten_tree, prune_tree
from .models import (ModificationResult, ModificationSubmit, SessionCreate,
                     SessionCreated, SessionStatus, ShapeResponse,
                     TaskResponse, VerificationResult, VerificationSubmit)


class SessionRuntime:
    def __init__(self, session_id: str, engine: SessionEngine, mode: str):
        self.session_id = session_id
        self.engine = engine
        self.mode = mode
        self.lock = threading.RLock()
        self.thread: threading.Thread | None = None
        self.error: str | None = None
        self.replies: dict[str, dict] = {}
        self.last_verification: tuple | None = None
        self.last_modification: tuple | None = None


def create_app(dataset_root: str | Path = ".",
               audit_root: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="partlab annotation service")
    root = Path(dataset_root)
    audit_dir = Path(audit_root) if audit_root else None
    sessions: dict[str, SessionRuntime] = {}
    creation_keys: dict[str, str] = {}
    registry_lock = threading.Lock()

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={
            "detail": [
                {"field": ".".join(str(p) for p in err["loc"]),
                 "message": err["msg"]}
                for err in exc.errors()
            ],
        })

    def get_runtime(session_id: str) -> SessionRuntime:
        runtime = sessions.get(session_id)
        if runtime is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return runtime

    def resolve(ref: str) -> Path:
        path = (root / ref).resolve()
        if not path.exists():
            raise HTTPException(404, f"unknown dataset {ref!r}")
        return path

    def build_engine(req: SessionCreate, session_id: str) -> SessionEngine:
        try:
            config = SessionConfig.from_dict(req.config.model_dump())
        except EngineError as exc:
            raise HTTPException(400, str(exc))
        try:
            manifest, tree, shapes = load_dataset(resolve(req.dataset))
        except DatasetError as exc:
            raise HTTPException(400, str(exc))
        train_shapes = None
        if req.train_dataset:
            try:
                _, _, train_shapes = load_dataset(resolve(req.train_dataset))
            except DatasetError as exc:
                raise HTTPException(400, str(exc))
        session_tree = prune_tree(tree) if config.hierarchical \
            else flatten_tree(tree)
        proposer = make_proposer(req.proposer, session_tree, config)
        if req.models_path and isinstance(proposer, BuiltinProposer):
            try:
                proposer.load(resolve(req.models_path))
            except (OSError, KeyError, json.JSONDecodeError) as exc:
                raise HTTPException(400, f"cannot load models: {exc}")
        if req.proposer == "builtin" and not req.models_path \
                and not req.train_dataset:
            raise HTTPException(
                400, "builtin proposer needs models_path or train_dataset")
        audit_path = None
        if audit_dir is not None:
            audit_path = audit_dir / f"{session_id}.jsonl"
        return SessionEngine(session_id, shapes, tree, proposer, config,
                             audit_path=audit_path, train_shapes=train_shapes,
                             category=manifest.category,
                             async_training=(req.mode == "live"))

    @app.post("/sessions", status_code=201, response_model=SessionCreated)
    def create_session(req: SessionCreate):
        with registry_lock:
            if req.idempotency_key and req.idempotency_key in creation_keys:
                sid = creation_keys[req.idempotency_key]
                runtime = sessions[sid]
                return SessionCreated(session_id=sid, mode=runtime.mode,
                                      status="exists")
            session_id = uuid.uuid4().hex[:12]
            if req.idempotency_key:
                creation_keys[req.idempotency_key] = session_id
        engine = build_engine(req, session_id)
        runtime = SessionRuntime(session_id, engine, req.mode)
        sessions[session_id] = runtime
        if req.mode == "simulated":
            oracle = OracleAnnotator(engine.tree,
                                     OracleConfig(req.oracle.error_rate,
                                                  req.oracle.seed))

            def work():
                try:
                    locked_drive(runtime, oracle)
                except Exception as exc:  # surfaced via session status
                    runtime.error = f"{type(exc).__name__}: {exc}"

            runtime.thread = threading.Thread(target=work, daemon=True)
            runtime.thread.start()
        return SessionCreated(session_id=session_id, mode=req.mode,
                              status="running")

    def locked_drive(runtime: SessionRuntime, oracle: OracleAnnotator):
        engine = runtime.engine
        while True:
            with runtime.lock:
                task = engine.next_task()
                if task.kind == "done":
                    engine.audit.close()
                    return
                if task.kind == "verification_batch":
                    ns = engine.state.active()
                    verdicts = {
                        e["shape_id"]: oracle.verify(
                            engine.shape(e["shape_id"]), ns.node_id,
                            ns.proposals[e["shape_id"]])
                        for e in task.payload["shapes"]
                    }
                    engine.submit_verifications(task.payload["batch_id"],
                                                verdicts)
                elif task.kind == "modification":
                    ns = engine.state.active()
                    sid = task.payload["shape_id"]
                    summary = ns.proposals[sid]
                    if ns.kind == "or":
                        label = oracle.modify(engine.shape(sid), ns.node_id,
                                              summary.part_ids,
                                              summary.group_label, None, False)
                        engine.submit_modification(sid, group_label=label)
                    else:
                        edits = oracle.modify(engine.shape(sid), ns.node_id,
                                              summary.part_ids, summary.labels,
                                              engine.groups[sid],
                                              engine.config.symmetry)
                        engine.submit_modification(sid, part_labels=edits)

    @app.get("/sessions/{session_id}", response_model=SessionStatus)
    def session_status(session_id: str):
        runtime = get_runtime(session_id)
        with runtime.lock:
            return SessionStatus(
                session_id=session_id,
                mode=runtime.mode,
                complete=runtime.engine.state.complete,
                failed=runtime.error is not None,
                error=runtime.error,
                snapshot=runtime.engine.snapshot(),
            )

    @app.get("/sessions/{session_id}/tasks/next", response_model=TaskResponse)
    def next_task(session_id: str):
        runtime = get_runtime(session_id)
        with runtime.lock:
            if runtime.mode == "simulated":
                if runtime.engine.state.complete:
                    return TaskResponse(kind="done", payload={})
                return TaskResponse(kind="training_wait",
                                    payload={"progress": None,
                                             "note": "simulated session"})
            try:
                task = runtime.engine.next_task()
            except (EngineError, ProposerError) as exc:
                raise HTTPException(400, str(exc))
            return TaskResponse(kind=task.kind, payload=task.payload)

    @app.post("/sessions/{session_id}/verifications",
              response_model=VerificationResult)
    def submit_verifications(session_id: str, req: VerificationSubmit):
        runtime = get_runtime(session_id)
        with runtime.lock:
            if req.idempotency_key and req.idempotency_key in runtime.replies:
                return VerificationResult(**runtime.replies[req.idempotency_key])
            fingerprint = (req.batch_id, tuple(sorted(req.verdicts.items())))
            if runtime.last_verification \
                    and runtime.last_verification[0] == fingerprint:
                return VerificationResult(**runtime.last_verification[1])
            try:
                result = runtime.engine.submit_verifications(req.batch_id,
                                                             req.verdicts)
            except StaleBatchError as exc:
                raise HTTPException(409, str(exc))
            except EngineError as exc:
                raise HTTPException(400, str(exc))
            runtime.last_verification = (fingerprint, result)
            if req.idempotency_key:
                runtime.replies[req.idempotency_key] = result
            return VerificationResult(**result)

    @app.post("/sessions/{session_id}/modifications",
              response_model=ModificationResult)
    def submit_modification(session_id: str, req: ModificationSubmit):
        runtime = get_runtime(session_id)
        with runtime.lock:
            if req.idempotency_key and req.idempotency_key in runtime.replies:
                return ModificationResult(**runtime.replies[req.idempotency_key])
            fingerprint = (req.shape_id, req.group_label,
                           tuple(sorted((req.part_labels or {}).items())))
            if runtime.last_modification \
                    and runtime.last_modification[0] == fingerprint:
                return ModificationResult(**runtime.last_modification[1])
            try:
                result = runtime.engine.submit_modification(
                    req.shape_id, part_labels=req.part_labels,
                    group_label=req.group_label)
            except ScopeError as exc:
                raise HTTPException(400, str(exc))
            except NotPendingError as exc:
                raise HTTPException(409, str(exc))
            except EngineError as exc:
                raise HTTPException(400, str(exc))
            runtime.last_modification = (fingerprint, result)
            if req.idempotency_key:
                runtime.replies[req.idempotency_key] = result
            return ModificationResult(**result)

    @app.get("/sessions/{session_id}/report")
    def session_report(session_id: str):
        runtime = get_runtime(session_id)
        with runtime.lock:
            return build_report(runtime.engine)

    @app.get("/sessions/{session_id}/tree")
    def session_tree(session_id: str):
        # The taxonomy as the session schedules it (pruned or flattened),
        # with colors; drives the client's hierarchical label picker.
        runtime = get_runtime(session_id)
        return runtime.engine.tree.to_dict()

    @app.get("/shapes/{shape_id}", response_model=ShapeResponse)
    def shape_geometry(shape_id: str, session: str):
        runtime = get_runtime(session)
        with runtime.lock:
            engine = runtime.engine
            if shape_id not in engine.shapes:
                raise HTTPException(404, f"unknown shape {shape_id!r}")
            shape = engine.shapes[shape_id]
            labels = engine.state.part_labels.get(shape_id, {})
            parts = []
            for part in shape.parts:
                obb = compute_obb(part.points)
                parts.append({
                    "id": part.id,
                    "points": part.points.tolist(),
                    "obb": obb.to_dict(),
                    "label": labels.get(part.id),
                    "gt_label": part.gt_label,
                })
            palette = {nid: list(engine.tree.color(nid))
                       for nid in engine.tree.internal_ids()}
            for leaf in engine.tree.leaf_ids():
                palette[leaf] = list(engine.tree.color(leaf))
            return {
                "shape_id": shape_id,
                "parts": parts,
                "symmetry_groups": engine.groups[shape_id].to_lists(),
                "palette": palette,
            }

    return app
