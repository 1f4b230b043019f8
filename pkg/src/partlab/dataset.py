"""Dataset formats, shape ingestion/normalization, and point sampling.

On-disk layout: a manifest `dataset.json` referencing a label-tree file and
one JSON file per shape. Shapes arrive pre-segmented into parts carrying
sampled points; meshes are out of scope.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tree import LabelTree


class DatasetError(ValueError):
    pass


@dataclass
class PartRecord:
    id: int
    points: np.ndarray
    gt_label: str | None = None


@dataclass
class ShapeRecord:
    id: str
    parts: list[PartRecord]
    # Normalization applied at ingest: normalized = (raw - offset) * scale.
    scale: float = 1.0
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def part(self, part_id: int) -> PartRecord:
        for p in self.parts:
            if p.id == part_id:
                return p
        raise DatasetError(f"shape {self.id!r} has no part {part_id}")

    def part_ids(self) -> list[int]:
        return [p.id for p in self.parts]

    def total_points(self) -> int:
        return sum(len(p.points) for p in self.parts)

    def gt_labels(self) -> dict[int, str]:
        out = {}
        for p in self.parts:
            if p.gt_label is None:
                raise DatasetError(f"shape {self.id!r} part {p.id} has no GT label")
            out[p.id] = p.gt_label
        return out


@dataclass
class DatasetManifest:
    name: str
    category: str
    label_tree_path: Path
    shape_paths: list[Path]

    @classmethod
    def load(cls, manifest_path: str | Path) -> "DatasetManifest":
        path = Path(manifest_path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DatasetError(f"manifest not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: invalid JSON ({exc})") from None
        for key in ("name", "category", "label_tree", "shapes"):
            if key not in data:
                raise DatasetError(f"{path}: missing field {key!r}")
        base = path.parent
        return cls(
            name=str(data["name"]),
            category=str(data["category"]),
            label_tree_path=base / data["label_tree"],
            shape_paths=[base / s for s in data["shapes"]],
        )


def normalize_shape(shape: ShapeRecord) -> ShapeRecord:
    """Center the shape's AABB at the origin and scale its longest edge to 1.

    Records the applied offset and scale on the shape; normalizing an
    already-normalized shape is a no-op up to float round-off.
    """
    all_pts = np.concatenate([p.points for p in shape.parts])
    lo = all_pts.min(axis=0)
    hi = all_pts.max(axis=0)
    center = (lo + hi) / 2.0
    longest = float((hi - lo).max())
    scale = 1.0 / longest if longest > 1e-12 else 1.0
    parts = [
        PartRecord(p.id, (p.points - center) * scale, p.gt_label)
        for p in shape.parts
    ]
    return ShapeRecord(shape.id, parts, scale=scale, offset=center)


def _parse_shape(path: Path, tree: LabelTree | None) -> ShapeRecord:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetError(f"shape file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON ({exc})") from None
    if "id" not in data or "parts" not in data:
        raise DatasetError(f"{path}: shape needs 'id' and 'parts'")
    if not data["parts"]:
        raise DatasetError(f"{path}: shape {data['id']!r} has no parts")
    parts = []
    seen_ids: set[int] = set()
    for i, pobj in enumerate(data["parts"]):
        where = f"{path}: parts[{i}]"
        if "id" not in pobj or "points" not in pobj:
            raise DatasetError(f"{where}: part needs 'id' and 'points'")
        pid = pobj["id"]
        if not isinstance(pid, int):
            raise DatasetError(f"{where}: part id must be an integer")
        if pid in seen_ids:
            raise DatasetError(f"{where}: duplicate part id {pid}")
        seen_ids.add(pid)
        pts = np.asarray(pobj["points"], dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise DatasetError(f"{where}: points must be a nonempty [x,y,z] list")
        gt = pobj.get("gt_label")
        if gt is not None and tree is not None:
            if gt not in tree:
                raise DatasetError(f"{where}: gt_label {gt!r} not in label tree")
            if not tree.is_leaf(gt):
                raise DatasetError(f"{where}: label not a leaf: {gt!r}")
        parts.append(PartRecord(pid, pts, gt))
    return ShapeRecord(str(data["id"]), parts)


def load_dataset(manifest_path: str | Path
                 ) -> tuple[DatasetManifest, LabelTree, list[ShapeRecord]]:
    """Load and normalize a dataset; shapes come back sorted by id."""
    manifest = DatasetManifest.load(manifest_path)
    tree = LabelTree.load(manifest.label_tree_path)
    shapes = []
    seen: dict[str, Path] = {}
    for spath in manifest.shape_paths:
        shape = _parse_shape(spath, tree)
        if shape.id in seen:
            raise DatasetError(
                f"{spath}: duplicate shape id {shape.id!r} (also in {seen[shape.id]})")
        seen[shape.id] = spath
        shapes.append(normalize_shape(shape))
    shapes.sort(key=lambda s: s.id)
    return manifest, tree, shapes


def save_shape(shape: ShapeRecord, path: str | Path, precision: int = 6) -> None:
    """Write a shape file with fixed float precision (keeps output bit-stable)."""
    data = {
        "id": shape.id,
        "parts": [
            {
                "id": p.id,
                "points": [[round(float(c), precision) for c in row]
                           for row in np.asarray(p.points)],
                **({"gt_label": p.gt_label} if p.gt_label is not None else {}),
            }
            for p in shape.parts
        ],
    }
    Path(path).write_text(
        json.dumps(data, separators=(",", ":"), sort_keys=True) + "\n",
        encoding="utf-8",
    )


def allocate_point_budget(shape: ShapeRecord, budget: int) -> dict[int, int]:
    """Split a per-shape point budget across parts, proportional to size.

    Every part gets at least one point; the remainder is distributed by
    largest remainder of the proportional quota (ties broken by part id), so
    the total equals the budget exactly whenever budget >= part count.
    """
    if budget < 1:
        raise DatasetError("point budget must be >= 1")
    parts = sorted(shape.parts, key=lambda p: p.id)
    total = shape.total_points()
    alloc = {p.id: 1 for p in parts}
    leftover = budget - len(parts)
    if leftover <= 0:
        return alloc
    quotas = {p.id: leftover * len(p.points) / total for p in parts}
    for pid, q in quotas.items():
        alloc[pid] += int(q)
    deficit = budget - sum(alloc.values())
    by_remainder = sorted(parts, key=lambda p: (-(quotas[p.id] % 1.0), p.id))
    for p in by_remainder[:deficit]:
        alloc[p.id] += 1
    return alloc


def _part_rng(seed: int, shape_id: str, part_id: int) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{shape_id}:{part_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def sample_part_points(part: PartRecord, n: int, seed: int = 0,
                       shape_id: str = "") -> np.ndarray:
    """Deterministically draw n points from a part.

    When n <= the source count this is a seeded subset (no replacement); when
    n exceeds it, the source set is tiled so every source point appears, then
    topped up — identical source sets with equal budgets yield identical
    multisets, which keeps copy-pasted symmetric parts exactly matched.
    """
    if len(part.points) < 1:
        raise DatasetError(f"part {part.id} has no points")
    if n < 1:
        raise DatasetError("sample size must be >= 1")
    rng = _part_rng(seed, shape_id, part.id)
    m = len(part.points)
    reps, extra = divmod(n, m)
    idx = np.concatenate([
        np.tile(np.arange(m), reps),
        np.sort(rng.permutation(m)[:extra]),
    ]).astype(int)
    return part.points[idx]


def sample_shape(shape: ShapeRecord, budget: int, seed: int = 0) -> ShapeRecord:
    """Resample every part of a shape under a shared per-shape budget."""
    alloc = allocate_point_budget(shape, budget)
    parts = [
        PartRecord(p.id, sample_part_points(p, alloc[p.id], seed, shape.id), p.gt_label)
        for p in shape.parts
    ]
    return ShapeRecord(shape.id, parts, scale=shape.scale, offset=shape.offset)
