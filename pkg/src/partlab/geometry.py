"""Oriented bounding boxes, per-part features, and symmetry-group detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEATURE_DIM = 12

# Guard for relative comparisons against near-zero extents.
_EPS = 1e-9


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class OrientedBox:
    """PCA-aligned bounding box: rows of `axes` pair with `extents` entries."""

    center: np.ndarray
    axes: np.ndarray
    extents: np.ndarray

    def volume(self) -> float:
        return float(8.0 * self.extents[0] * self.extents[1] * self.extents[2])

    def to_dict(self) -> dict:
        return {
            "center": [float(v) for v in self.center],
            "axes": [[float(v) for v in row] for row in self.axes],
            "extents": [float(v) for v in self.extents],
        }


def compute_obb(points) -> OrientedBox:
    """Oriented bounding box from principal axes of the point set.

    Axes come from PCA of the points; the box is tightened along each axis to
    the projection range, so every point lies inside. Extents are half-lengths
    sorted descending; zero-variance directions get extent 0.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise GeometryError("compute_obb needs a nonempty (n, 3) point array")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    if pts.shape[0] == 1:
        return OrientedBox(centroid, np.eye(3), np.zeros(3))
    cov = centered.T @ centered / pts.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    axes = eigvecs[:, ::-1].T  # rows, descending eigenvalue order
    # Deterministic sign: make the largest-magnitude component positive.
    for i in range(3):
        j = int(np.argmax(np.abs(axes[i])))
        if axes[i, j] < 0:
            axes[i] = -axes[i]
    proj = centered @ axes.T
    lo = proj.min(axis=0)
    hi = proj.max(axis=0)
    extents = (hi - lo) / 2.0
    center = centroid + ((lo + hi) / 2.0) @ axes
    order = np.argsort(-extents, kind="stable")
    return OrientedBox(center, axes[order], np.maximum(extents[order], 0.0))


def pca_eigenvalues(points) -> np.ndarray:
    """Covariance eigenvalues of a point set, sorted descending, clipped at 0."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[0] == 1:
        return np.zeros(3)
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / pts.shape[0]
    vals = np.linalg.eigvalsh(cov)[::-1]
    return np.maximum(vals, 0.0)


def extents_match(a: np.ndarray, b: np.ndarray, tol: float) -> bool:
    """True iff each pair of sorted extents agrees within relative tol."""
    for x, y in zip(a, b):
        if abs(x - y) > tol * max(x, y, _EPS):
            return False
    return True


@dataclass(frozen=True)
class SymmetryGroups:
    """Partition of a shape's part ids; each group keyed by its lowest id."""

    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        seen: set[int] = set()
        for g in self.groups:
            if seen & set(g):
                raise GeometryError("symmetry groups must be disjoint")
            seen.update(g)

    def group_of(self, part_id: int) -> tuple[int, ...]:
        for g in self.groups:
            if part_id in g:
                return g
        raise GeometryError(f"part {part_id} not in any group")

    def representative(self, part_id: int) -> int:
        return min(self.group_of(part_id))

    def restricted(self, part_ids) -> "SymmetryGroups":
        """Partition induced on a subset of parts (e.g. one node's subset)."""
        keep = set(part_ids)
        groups = []
        for g in self.groups:
            sub = tuple(sorted(p for p in g if p in keep))
            if sub:
                groups.append(sub)
        return SymmetryGroups(tuple(sorted(groups)))

    def to_lists(self) -> list[list[int]]:
        return [list(g) for g in self.groups]


def detect_symmetry_groups(shape, tolerance: float = 0.02,
                           count_tolerance: float = 0.2) -> SymmetryGroups:
    """Group parts whose OBB sizes and point counts match.

    Two parts link when all three sorted extents agree within relative
    `tolerance` and point counts agree within `count_tolerance`; groups are
    the connected components of the link relation. Crude by design: it
    catches copy-pasted/repeated parts, not general symmetries.
    """
    parts = sorted(shape.parts, key=lambda p: p.id)
    ids = [p.id for p in parts]
    ext = {p.id: compute_obb(p.points).extents for p in parts}
    count = {p.id: len(p.points) for p in parts}

    parent = {pid: pid for pid in ids}

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            if not extents_match(ext[a], ext[b], tolerance):
                continue
            ca, cb = count[a], count[b]
            if abs(ca - cb) > count_tolerance * max(ca, cb):
                continue
            union(a, b)

    comps: dict[int, list[int]] = {}
    for pid in ids:
        comps.setdefault(find(pid), []).append(pid)
    groups = tuple(sorted(tuple(sorted(g)) for g in comps.values()))
    return SymmetryGroups(groups)


def part_features(part, shape) -> np.ndarray:
    """12-dim hand-crafted descriptor of a part in its (normalized) shape.

    Layout: sorted OBB extents (3), OBB center in the shape frame (3), OBB
    volume fraction of the shape OBB (1), point-count fraction (1), PCA
    eigenvalue ratios lam2/lam1 and lam3/lam1 (2), min/max part height (2).
    """
    return features_for_shape(shape)[part.id]


def features_for_shape(shape) -> dict[int, np.ndarray]:
    """Feature vectors for every part, sharing the shape-level context.

    Parts are consumed in id order so a reordering of the same shape yields
    bit-identical vectors.
    """
    parts = sorted(shape.parts, key=lambda p: p.id)
    all_points = np.concatenate([np.asarray(p.points, dtype=np.float64)
                                 for p in parts])
    shape_obb = compute_obb(all_points)
    shape_vol = max(shape_obb.volume(), 1e-12)
    total_points = sum(len(p.points) for p in parts)

    out: dict[int, np.ndarray] = {}
    for part in parts:
        pts = np.asarray(part.points, dtype=np.float64)
        obb = compute_obb(pts)
        eig = pca_eigenvalues(pts)
        lam1 = max(eig[0], _EPS)
        vec = np.empty(FEATURE_DIM, dtype=np.float64)
        vec[0:3] = obb.extents
        vec[3:6] = obb.center
        vec[6] = obb.volume() / shape_vol
        vec[7] = len(pts) / total_points
        vec[8] = eig[1] / lam1 if eig[0] > 0 else 0.0
        vec[9] = eig[2] / lam1 if eig[0] > 0 else 0.0
        vec[10] = pts[:, 2].min()
        vec[11] = pts[:, 2].max()
        if not np.all(np.isfinite(vec)):
            raise GeometryError(f"non-finite features for part {part.id}")
        out[part.id] = vec
    return out
