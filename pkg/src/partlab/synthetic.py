"""Parametric synthetic datasets: cuboid-assembled chairs, tables, and lamps.

Desk-scale stand-in for real scan/catalog data so full labeling sessions can
run unattended. Every part carries a GT leaf label; repeated parts (legs,
casters, pads) are exact translated copies so they form detectable symmetry
groups. The chair family deliberately gives foot pads and casters the same
individual geometry — only the surrounding base type tells them apart, which
is what makes hierarchical routing pay off.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import DatasetManifest, PartRecord, ShapeRecord, save_shape
from .tree import LabelTree

FAMILIES = ("chair", "table", "lamp")


class GeneratorError(ValueError):
    pass


@dataclass
class GeneratorSpec:
    family: str = "chair"
    n_shapes: int = 200
    seed: int = 0
    # Scales parameter jitter around range midpoints; a train split generated
    # with a smaller spread leaves a domain gap for fine-tuning to close.
    spread: float = 1.0
    # Fraction of shapes whose repeated parts are exact copies (the rest get
    # per-member size jitter that breaks the symmetry groups).
    symmetric_fraction: float = 1.0
    points_per_unit_area: float = 900.0
    min_part_points: int = 40
    max_part_points: int = 400

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise GeneratorError(f"unknown family {self.family!r}")
        if self.n_shapes < 1:
            raise GeneratorError("n_shapes must be >= 1")
        if not 0.0 <= self.symmetric_fraction <= 1.0:
            raise GeneratorError("symmetric_fraction must be in [0, 1]")


# The raw taxonomy keeps cosmetic two-child groupings (back, arm) that the
# pruning rule folds into the root, so sessions run on a mixed-depth tree:
# everything except the base resolves at the root, the base type and its
# fine parts take two more levels.
CHAIR_TREE = {
    "id": "chair", "name": "Chair", "kind": "and", "color": [200, 200, 200],
    "children": [
        {"id": "back", "name": "Back", "kind": "and", "color": [31, 119, 180],
         "children": [
             {"id": "back_frame", "name": "Back frame", "kind": "and",
              "color": [114, 158, 206], "children": []},
             {"id": "back_panel", "name": "Back panel", "kind": "and",
              "color": [174, 199, 232], "children": []},
         ]},
        {"id": "headrest", "name": "Headrest", "kind": "and",
         "color": [49, 81, 150], "children": []},
        {"id": "seat", "name": "Seat", "kind": "and",
         "color": [255, 127, 14], "children": []},
        {"id": "base", "name": "Base", "kind": "or", "color": [44, 160, 44],
         "children": [
             {"id": "regular_base", "name": "Regular base", "kind": "and",
              "color": [103, 191, 92],
              "children": [
                  {"id": "leg", "name": "Leg", "kind": "and",
                   "color": [152, 223, 138], "children": []},
                  {"id": "stretcher", "name": "Stretcher", "kind": "and",
                   "color": [44, 110, 44], "children": []},
                  {"id": "foot_pad", "name": "Foot pad", "kind": "and",
                   "color": [84, 160, 100], "children": []},
              ]},
             {"id": "pedestal_base", "name": "Pedestal base", "kind": "and",
              "color": [140, 86, 75],
              "children": [
                  {"id": "column", "name": "Column", "kind": "and",
                   "color": [196, 156, 148], "children": []},
                  {"id": "star_foot", "name": "Star foot", "kind": "and",
                   "color": [120, 70, 50], "children": []},
                  {"id": "caster", "name": "Caster", "kind": "and",
                   "color": [160, 110, 90], "children": []},
              ]},
         ]},
        {"id": "arm", "name": "Arm", "kind": "and", "color": [214, 39, 40],
         "children": [
             {"id": "arm_rest", "name": "Arm rest", "kind": "and",
              "color": [255, 152, 150], "children": []},
             {"id": "arm_support", "name": "Arm support", "kind": "and",
              "color": [165, 30, 30], "children": []},
         ]},
    ],
}

TABLE_TREE = {
    "id": "table", "name": "Table", "kind": "and", "color": [200, 200, 200],
    "children": [
        {"id": "top", "name": "Top", "kind": "and",
         "color": [255, 127, 14], "children": []},
        {"id": "understructure", "name": "Understructure", "kind": "and",
         "color": [44, 160, 44],
         "children": [
             {"id": "leg", "name": "Leg", "kind": "and",
              "color": [152, 223, 138], "children": []},
             {"id": "stretcher", "name": "Stretcher", "kind": "and",
              "color": [44, 110, 44], "children": []},
             {"id": "shelf", "name": "Shelf", "kind": "and",
              "color": [84, 160, 100], "children": []},
         ]},
    ],
}

LAMP_TREE = {
    "id": "lamp", "name": "Lamp", "kind": "and", "color": [200, 200, 200],
    "children": [
        {"id": "shade", "name": "Shade", "kind": "and",
         "color": [255, 225, 25], "children": []},
        {"id": "body", "name": "Body", "kind": "and", "color": [0, 130, 200],
         "children": [
             {"id": "pole", "name": "Pole", "kind": "and",
              "color": [70, 160, 220], "children": []},
             {"id": "base_plate", "name": "Base plate", "kind": "and",
              "color": [20, 80, 140], "children": []},
             {"id": "switch", "name": "Switch", "kind": "and",
              "color": [120, 200, 240], "children": []},
         ]},
    ],
}

_TREES = {"chair": CHAIR_TREE, "table": TABLE_TREE, "lamp": LAMP_TREE}


def family_tree(family: str) -> LabelTree:
    if family not in _TREES:
        raise GeneratorError(f"unknown family {family!r}")
    return LabelTree.from_dict(_TREES[family])


def _u(rng: np.random.Generator, lo: float, hi: float, spread: float) -> float:
    mid = (lo + hi) / 2.0
    half = (hi - lo) / 2.0
    return mid + float(rng.uniform(-1.0, 1.0)) * half * spread


def _box_surface(rng: np.random.Generator, half: np.ndarray, n: int) -> np.ndarray:
    """n points uniform on the surface of an origin-centered box."""
    hx, hy, hz = (max(float(h), 1e-4) for h in half)
    areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
    counts = rng.multinomial(n, areas / areas.sum())
    pts = []
    for face, cnt in enumerate(counts):
        if cnt == 0:
            continue
        uv = rng.uniform(-1.0, 1.0, size=(cnt, 2))
        axis = face // 2
        sign = 1.0 if face % 2 == 0 else -1.0
        block = np.empty((cnt, 3))
        others = [a for a in range(3) if a != axis]
        block[:, axis] = sign * (hx, hy, hz)[axis]
        block[:, others[0]] = uv[:, 0] * (hx, hy, hz)[others[0]]
        block[:, others[1]] = uv[:, 1] * (hx, hy, hz)[others[1]]
        pts.append(block)
    return np.concatenate(pts)


def _n_points(spec: GeneratorSpec, half: np.ndarray) -> int:
    hx, hy, hz = half
    area = 8.0 * (hx * hy + hy * hz + hx * hz)
    n = int(area * spec.points_per_unit_area)
    return max(spec.min_part_points, min(spec.max_part_points, n))


def _rz(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class _Builder:
    """Accumulates parts; instancing keeps repeated parts exactly congruent."""

    def __init__(self, rng, spec: GeneratorSpec, symmetric: bool):
        self.rng = rng
        self.spec = spec
        self.symmetric = symmetric
        self.parts: list[tuple[str, np.ndarray]] = []

    def box(self, label: str, center, half) -> None:
        half = np.asarray(half, dtype=float)
        local = _box_surface(self.rng, half, _n_points(self.spec, half))
        self.parts.append((label, local + np.asarray(center, dtype=float)))

    def instanced(self, label: str, half, placements) -> None:
        """One local cloud placed at several (rotation, center) poses.

        With symmetry disabled for this shape, each instance gets its own
        slightly-resized cloud instead, which breaks the OBB-size match.
        """
        half = np.asarray(half, dtype=float)
        local = _box_surface(self.rng, half, _n_points(self.spec, half))
        for rot, center in placements:
            if self.symmetric:
                cloud = local
            else:
                jitter = 1.0 + self.rng.uniform(-0.06, 0.06, size=3)
                cloud = _box_surface(self.rng, half * jitter,
                                     _n_points(self.spec, half))
            if rot is not None:
                cloud = cloud @ rot.T
            self.parts.append((label, cloud + np.asarray(center, dtype=float)))


def _build_chair(rng: np.random.Generator, spec: GeneratorSpec) -> list[tuple[str, np.ndarray]]:
    s = spec.spread
    symmetric = bool(rng.uniform() < spec.symmetric_fraction)
    b = _Builder(rng, spec, symmetric)

    zs = _u(rng, 0.38, 0.50, s)                      # seat height
    hx = _u(rng, 0.18, 0.26, s)                      # seat half width
    hy = _u(rng, 0.16, 0.24, s)                      # seat half depth
    b.box("seat", (0.0, 0.0, zs), (hx, hy, _u(rng, 0.012, 0.03, s)))

    # Back: a variable fan of frame slats, a panel, sometimes a headrest.
    # The slat count swings the whole-shape pooled feature around (drowning
    # base-type cues a flat model reads off it), and wide slats run into the
    # narrow end of the panel distribution, so slat fans are the symmetric
    # groups that keep label propagation earning its keep.
    zt = zs + _u(rng, 0.30, 0.55, s)
    slat_w = _u(rng, 0.012, 0.022, s)
    frame_half = (slat_w, _u(rng, 0.010, 0.022, s), (zt - zs) / 2.0)
    yb = -hy + 0.02
    zmid = (zs + zt) / 2.0
    n_slats = int(rng.integers(3, 9))
    xs = np.linspace(-hx * 0.85, hx * 0.85, n_slats)
    b.instanced("back_frame", frame_half,
                [(None, (x, yb, zmid)) for x in xs])
    b.box("back_panel", (0.0, yb - 0.015, zmid),
          (hx * _u(rng, 0.42, 0.75, s), _u(rng, 0.008, 0.018, s),
           (zt - zs) / 2.0 * _u(rng, 0.7, 0.95, s)))
    if rng.uniform() < 0.5:
        b.box("headrest", (0.0, yb, zt + _u(rng, 0.04, 0.08, s)),
              (hx * 0.45, 0.02, _u(rng, 0.025, 0.045, s)))

    # Base: regular (legs) or pedestal (column on a star). Foot pads and
    # casters are drawn from one size/height distribution on purpose, and the
    # whole chair gets a random yaw below, so an individual pad or caster is
    # indistinguishable without looking at the rest of its base.
    pad_half = (_u(rng, 0.018, 0.034, s), _u(rng, 0.018, 0.034, s),
                _u(rng, 0.012, 0.022, s))
    pad_z = _u(rng, 0.015, 0.03, s)
    if rng.uniform() < 0.65:
        lx = hx * _u(rng, 0.55, 0.95, s)
        ly = hy * _u(rng, 0.55, 0.95, s)
        leg_z0 = _u(rng, 0.01, 0.06, s)
        leg_half = (_u(rng, 0.013, 0.03, s), _u(rng, 0.013, 0.03, s),
                    (zs - 0.02 - leg_z0) / 2.0)
        corners = [(lx, ly), (lx, -ly), (-lx, ly), (-lx, -ly)]
        b.instanced("leg", leg_half,
                    [(None, (cx, cy, (zs - 0.02 + leg_z0) / 2.0))
                     for cx, cy in corners])
        # Low stretchers overlap the star-foot arm band of pedestal bases:
        # only the base type, never the local look, settles which is which.
        zst = _u(rng, 0.025, 0.07, s)
        n_str = int(rng.integers(2, 5))
        str_spots = [(0.0, ly), (0.0, -ly), (lx, 0.0), (-lx, 0.0)][:n_str]
        b.instanced("stretcher", (min(lx, ly) * 0.95, 0.013, 0.016),
                    [(_rz(0.0 if cy else np.pi / 2), (cx, cy, zst))
                     for cx, cy in str_spots])
        b.instanced("foot_pad", pad_half,
                    [(None, (cx, cy, pad_z)) for cx, cy in corners])
    else:
        # Pedestal column as a cluster: one thick center plus three thin
        # spokes, so the base contributes four vertical bars to the pooled
        # feature just like four legs would. The whole-shape mean then says
        # almost nothing about the base type; only the base subset (through
        # bar radii and the thick center) still does.
        zc = (zs - 0.04) / 2.0 + 0.04
        cw = _u(rng, 0.030, 0.050, s)
        b.box("column", (0.0, 0.0, zc), (cw, cw, (zs - 0.08) / 2.0))
        rs = _u(rng, 0.04, 0.11, s)
        spoke_z0 = _u(rng, 0.03, 0.09, s)
        spoke_angle = float(rng.uniform(0.0, 2.0 * np.pi))
        b.instanced("column",
                    (_u(rng, 0.013, 0.03, s), _u(rng, 0.013, 0.03, s),
                     (zs - 0.04 - spoke_z0) / 2.0),
                    [(None, (rs * np.cos(spoke_angle + 2.0 * np.pi * k / 3.0),
                             rs * np.sin(spoke_angle + 2.0 * np.pi * k / 3.0),
                             (zs - 0.04 + spoke_z0) / 2.0)) for k in range(3)])
        n_arms = int(rng.integers(3, 6))
        theta0 = float(rng.uniform(0.0, 2.0 * np.pi))
        r = _u(rng, 0.10, 0.18, s)
        arm_len = _u(rng, 0.08, 0.14, s)
        angles = [theta0 + 2.0 * np.pi * k / n_arms for k in range(n_arms)]
        b.instanced("star_foot", (arm_len, 0.015, _u(rng, 0.014, 0.022, s)),
                    [(_rz(t), (r * np.cos(t), r * np.sin(t),
                               _u(rng, 0.025, 0.045, s)))
                     for t in angles])
        if True:
            rw = r + arm_len * 0.9
            n_cast = int(rng.integers(4, 7))
            cast_angles = [theta0 + 2.0 * np.pi * (k + 0.5) / n_cast
                           for k in range(n_cast)]
            if b.symmetric and rng.uniform() < 0.7:
                caster_half = (_u(rng, 0.05, 0.09, s), 0.016,
                               _u(rng, 0.014, 0.022, s))
                b.instanced("caster", caster_half,
                            [(_rz(t), (rw * np.cos(t), rw * np.sin(t),
                                       _u(rng, 0.02, 0.04, s)))
                             for t in cast_angles])
            else:
                b.instanced("caster", pad_half,
                            [(None, (rw * np.cos(t), rw * np.sin(t), pad_z))
                             for t in cast_angles])

    if rng.uniform() < 0.5:
        # Arms stay well below the back span so every root-level class sits
        # in its own height band; the hard distinctions all live inside the
        # base subtree.
        xa = hx + 0.02
        za = zs + _u(rng, 0.10, 0.16, s)
        b.instanced("arm_rest",
                    (_u(rng, 0.028, 0.045, s), hy * 0.8,
                     _u(rng, 0.025, 0.04, s)),
                    [(None, (xa, 0.0, za)), (None, (-xa, 0.0, za))])
        b.instanced("arm_support", (0.014, 0.014, (za - zs) / 2.0),
                    [(None, (xa, hy * 0.3, (zs + za) / 2.0)),
                     (None, (-xa, hy * 0.3, (zs + za) / 2.0))])

    # Random yaw for the assembled chair: strips axis-sign cues from part
    # positions without touching sizes, heights, or symmetry relations.
    yaw = _rz(float(rng.uniform(0.0, 2.0 * np.pi)))
    return [(label, pts @ yaw.T) for label, pts in b.parts]


def _build_table(rng: np.random.Generator, spec: GeneratorSpec) -> list[tuple[str, np.ndarray]]:
    s = spec.spread
    symmetric = bool(rng.uniform() < spec.symmetric_fraction)
    b = _Builder(rng, spec, symmetric)
    zt = _u(rng, 0.6, 0.78, s)
    hx = _u(rng, 0.4, 0.6, s)
    hy = _u(rng, 0.3, 0.45, s)
    b.box("top", (0.0, 0.0, zt), (hx, hy, _u(rng, 0.015, 0.03, s)))
    lx, ly = hx * 0.85, hy * 0.8
    leg_half = (_u(rng, 0.02, 0.035, s), _u(rng, 0.02, 0.035, s), zt / 2.0)
    b.instanced("leg", leg_half,
                [(None, (cx, cy, zt / 2.0))
                 for cx, cy in [(lx, ly), (lx, -ly), (-lx, ly), (-lx, -ly)]])
    if rng.uniform() < 0.6:
        zst = _u(rng, 0.08, 0.2, s)
        b.instanced("stretcher", (lx * 0.95, 0.015, 0.015),
                    [(None, (0.0, ly, zst)), (None, (0.0, -ly, zst))])
    if rng.uniform() < 0.5:
        b.box("shelf", (0.0, 0.0, zt * _u(rng, 0.3, 0.5, s)),
              (hx * 0.8, hy * 0.8, 0.012))
    return b.parts


def _build_lamp(rng: np.random.Generator, spec: GeneratorSpec) -> list[tuple[str, np.ndarray]]:
    s = spec.spread
    b = _Builder(rng, spec, True)
    zp = _u(rng, 0.8, 1.3, s)
    b.box("base_plate", (0.0, 0.0, 0.02), (_u(rng, 0.1, 0.18, s),
                                           _u(rng, 0.1, 0.18, s), 0.02))
    b.box("pole", (0.0, 0.0, zp / 2.0), (0.015, 0.015, zp / 2.0))
    b.box("shade", (0.0, 0.0, zp + 0.08),
          (_u(rng, 0.1, 0.16, s), _u(rng, 0.1, 0.16, s),
           _u(rng, 0.06, 0.12, s)))
    if rng.uniform() < 0.6:
        b.box("switch", (0.03, 0.0, zp * _u(rng, 0.5, 0.8, s)),
              (0.012, 0.012, 0.02))
    return b.parts


_BUILDERS = {"chair": _build_chair, "table": _build_table, "lamp": _build_lamp}


def generate_shapes(spec: GeneratorSpec) -> tuple[LabelTree, list[ShapeRecord]]:
    """Generate raw (unnormalized) shapes with GT leaf labels."""
    spec.validate()
    tree = family_tree(spec.family)
    leaves = set(tree.leaf_ids())
    rng = np.random.default_rng(spec.seed)
    build = _BUILDERS[spec.family]
    shapes = []
    for i in range(spec.n_shapes):
        labeled = build(rng, spec)
        parts = []
        for pid, (label, pts) in enumerate(labeled):
            if label not in leaves:
                raise GeneratorError(f"generated label {label!r} not a tree leaf")
            parts.append(PartRecord(pid, pts, label))
        shapes.append(ShapeRecord(f"{spec.family}_{i:04d}", parts))
    return tree, shapes


def generate_synthetic_dataset(spec: GeneratorSpec, out_dir: str | Path,
                               name: str | None = None,
                               tree_filename: str = "label_tree.json"
                               ) -> DatasetManifest:
    """Materialize a synthetic dataset on disk and return its manifest.

    Regeneration with the same spec is byte-identical.
    """
    out = Path(out_dir)
    (out / "shapes").mkdir(parents=True, exist_ok=True)
    tree, shapes = generate_shapes(spec)
    tree.save(out / tree_filename)
    shape_rel = []
    for shape in shapes:
        rel = f"shapes/{shape.id}.json"
        save_shape(shape, out / rel)
        shape_rel.append(rel)
    name = name or f"{spec.family}-{spec.n_shapes}"
    manifest = {
        "name": name,
        "category": spec.family,
        "label_tree": tree_filename,
        "shapes": shape_rel,
    }
    manifest_path = out / f"{name}.json"
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return DatasetManifest(
        name=name, category=spec.family,
        label_tree_path=out / tree_filename,
        shape_paths=[out / rel for rel in shape_rel],
    )


def generate_split(family: str, out_dir: str | Path, n_train: int, n_test: int,
                   seed: int = 0, train_spread: float = 0.55,
                   symmetric_fraction: float = 1.0) -> tuple[Path, Path]:
    """Write train and test manifests sharing one label tree file.

    The train split uses a narrower parameter spread, leaving a gap for the
    active loop's fine-tuning to close on the test split.
    """
    out = Path(out_dir)
    train_spec = GeneratorSpec(family=family, n_shapes=n_train, seed=seed + 1,
                               spread=train_spread,
                               symmetric_fraction=symmetric_fraction)
    test_spec = GeneratorSpec(family=family, n_shapes=n_test, seed=seed,
                              symmetric_fraction=symmetric_fraction)
    train_dir = out / "train"
    (out / "shapes").mkdir(parents=True, exist_ok=True)
    generate_synthetic_dataset(test_spec, out, name="test")
    train_dir.mkdir(parents=True, exist_ok=True)
    generate_synthetic_dataset(train_spec, train_dir, name="train")
    return train_dir / "train.json", out / "test.json"
