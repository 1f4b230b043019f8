"""Pydantic request/response schemas for the annotation service."""

from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, Field


class SessionConfigModel(BaseModel):
    batch_size: int = 10
    verify_stop: int = 4
    modify_quota: int = 20
    failure_cap: int = 2
    pool_stop: int = 40
    symmetry: bool = True
    hierarchical: bool = True
    confidence_aggregate: Literal["min", "mean", "product"] = "min"
    n_sample_points: int = 8192
    symmetry_tolerance: float = 0.02
    seed: int = 0


class OracleModel(BaseModel):
    error_rate: float = Field(0.0, ge=0.0, lt=1.0)
    seed: int = 0


class SessionCreate(BaseModel):
    dataset: str
    mode: Literal["live", "simulated"] = "simulated"
    config: SessionConfigModel = Field(default_factory=SessionConfigModel)
    proposer: Literal["builtin", "random", "none"] = "builtin"
    train_dataset: Optional[str] = None
    models_path: Optional[str] = None
    oracle: OracleModel = Field(default_factory=OracleModel)
    idempotency_key: Optional[str] = None


class SessionCreated(BaseModel):
    session_id: str
    mode: str
    status: str


class SessionStatus(BaseModel):
    session_id: str
    mode: str
    complete: bool
    failed: bool = False
    error: Optional[str] = None
    snapshot: dict[str, Any]


class TaskResponse(BaseModel):
    kind: Literal["verification_batch", "modification", "training_wait", "done"]
    payload: dict[str, Any]


class VerificationSubmit(BaseModel):
    batch_id: str
    verdicts: dict[str, bool]
    idempotency_key: Optional[str] = None


class VerificationResult(BaseModel):
    passed: int
    failed: int
    stopped: bool


class ModificationSubmit(BaseModel):
    shape_id: str
    part_labels: Optional[dict[int, str]] = None
    group_label: Optional[str] = None
    idempotency_key: Optional[str] = None


class ModificationResult(BaseModel):
    labels: dict[int, str]
    edited: list[int]
    filled: list[int]
    edited_group: Optional[bool] = None


class ObbModel(BaseModel):
    center: list[float]
    axes: list[list[float]]
    extents: list[float]


class ShapePart(BaseModel):
    id: int
    points: list[list[float]]
    obb: ObbModel
    label: Optional[str] = None
    gt_label: Optional[str] = None


class ShapeResponse(BaseModel):
    shape_id: str
    parts: list[ShapePart]
    symmetry_groups: list[list[int]]
    palette: dict[str, list[int]]
