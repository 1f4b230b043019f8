import numpy as np
import pytest

from partlab.dataset import PartRecord, ShapeRecord, normalize_shape
from partlab.geometry import (GeometryError, compute_obb,
                              detect_symmetry_groups, extents_match,
                              features_for_shape, part_features)


def box_cloud(rng, half, n=400, center=(0, 0, 0)):
    pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * np.asarray(half)
    return pts + np.asarray(center, dtype=float)


def rotation(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis /= np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def test_obb_unit_cube_corners():
    corners = np.array([[x, y, z] for x in (-0.5, 0.5)
                        for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
    obb = compute_obb(corners)
    assert np.allclose(obb.extents, [0.5, 0.5, 0.5])
    assert np.allclose(obb.center, 0.0)
    assert np.allclose(obb.axes @ obb.axes.T, np.eye(3), atol=1e-6)


def test_obb_colinear_points():
    pts = np.array([[0.0, 0, 0], [2.0, 0, 0], [1.0, 0, 0]])
    obb = compute_obb(pts)
    assert np.allclose(obb.extents, [1.0, 0.0, 0.0])


def test_obb_contains_all_points():
    rng = np.random.default_rng(0)
    pts = box_cloud(rng, (0.4, 0.2, 0.1), n=500)
    obb = compute_obb(pts)
    proj = np.abs((pts - obb.center) @ obb.axes.T)
    assert np.all(proj <= obb.extents + 1e-9)


def test_obb_rotation_invariant_extents():
    rng = np.random.default_rng(1)
    pts = box_cloud(rng, (0.5, 0.3, 0.1), n=800)
    base = compute_obb(pts).extents
    rot = rotation((1, 2, 3), 0.7)
    rotated = compute_obb(pts @ rot.T).extents
    assert np.allclose(base, rotated, atol=1e-6)


def test_obb_single_point_degenerate():
    obb = compute_obb(np.array([[1.0, 2.0, 3.0]]))
    assert np.allclose(obb.extents, 0.0)
    assert np.allclose(obb.center, [1.0, 2.0, 3.0])


def test_obb_rejects_empty():
    with pytest.raises(GeometryError):
        compute_obb(np.zeros((0, 3)))


def make_shape(part_clouds, ids=None):
    ids = ids or list(range(len(part_clouds)))
    parts = [PartRecord(pid, np.asarray(pts)) for pid, pts in zip(ids, part_clouds)]
    return ShapeRecord("s", parts)


def test_symmetry_identical_copies_group():
    rng = np.random.default_rng(2)
    local = box_cloud(rng, (0.02, 0.02, 0.2), n=80)
    legs = [local + np.array([x, y, 0.0])
            for x in (-0.2, 0.2) for y in (-0.2, 0.2)]
    seat = box_cloud(rng, (0.25, 0.25, 0.02), n=200, center=(0, 0, 0.45))
    shape = make_shape(legs + [seat])
    groups = detect_symmetry_groups(shape)
    assert (0, 1, 2, 3) in groups.groups
    assert (4,) in groups.groups


def test_symmetry_distinct_sizes_stay_singletons():
    rng = np.random.default_rng(3)
    a = box_cloud(rng, (0.1, 0.1, 0.1), n=100)
    b = box_cloud(rng, (0.13, 0.13, 0.13), n=100, center=(0.5, 0, 0))
    groups = detect_symmetry_groups(make_shape([a, b]))
    assert groups.groups == ((0,), (1,))


def test_symmetry_transitive_chain():
    # a~b and b~c within tolerance while a vs c alone would not match:
    # connected components still merge all three.
    tol = 0.02
    scales = [1.0, 1.018, 1.036]
    half = np.array([0.3, 0.2, 0.1])
    assert extents_match(half * scales[0], half * scales[1], tol)
    assert extents_match(half * scales[1], half * scales[2], tol)
    assert not extents_match(half * scales[0], half * scales[2], tol)
    clouds = []
    for i, s in enumerate(scales):
        corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1)
                            for z in (-1, 1)]) * half * s
        clouds.append(corners + np.array([i * 1.0, 0, 0]))
    groups = detect_symmetry_groups(make_shape(clouds), tolerance=tol)
    assert groups.groups == ((0, 1, 2),)


def test_symmetry_point_count_gate():
    s = 0.2
    corners = np.array([[x, y, z] for x in (-s, s) for y in (-s, s)
                        for z in (-s, s)])
    many = np.concatenate([corners] * 10)
    groups = detect_symmetry_groups(make_shape([corners, many]))
    assert groups.groups == ((0,), (1,))


def test_symmetry_partition_invariant_to_part_order():
    rng = np.random.default_rng(5)
    local = box_cloud(rng, (0.05, 0.05, 0.1), n=60)
    clouds = [local + np.array([i * 0.3, 0, 0]) for i in range(3)]
    clouds.append(box_cloud(rng, (0.3, 0.2, 0.02), n=150, center=(0, 0, 0.4)))
    fwd = detect_symmetry_groups(make_shape(clouds, ids=[0, 1, 2, 3]))
    rev = detect_symmetry_groups(make_shape(clouds[::-1], ids=[3, 2, 1, 0]))
    assert fwd.groups == rev.groups


def test_restricted_partition():
    rng = np.random.default_rng(6)
    local = box_cloud(rng, (0.05, 0.05, 0.1), n=60)
    clouds = [local + np.array([i * 0.3, 0, 0]) for i in range(4)]
    groups = detect_symmetry_groups(make_shape(clouds))
    sub = groups.restricted([1, 3])
    assert sub.groups == ((1, 3),)


def normalized_shape(part_clouds):
    return normalize_shape(make_shape(part_clouds))


def test_features_whole_shape_fractions():
    rng = np.random.default_rng(7)
    shape = normalized_shape([box_cloud(rng, (0.3, 0.2, 0.1), n=500)])
    vec = part_features(shape.parts[0], shape)
    assert vec.shape == (12,)
    assert vec[6] == pytest.approx(1.0)
    assert vec[7] == pytest.approx(1.0)


def test_features_flat_plate_eigenratio():
    rng = np.random.default_rng(8)
    shape = normalized_shape([
        box_cloud(rng, (0.3, 0.3, 0.001), n=400),
        box_cloud(rng, (0.1, 0.1, 0.1), n=200, center=(0, 0, 0.4)),
    ])
    vec = part_features(shape.parts[0], shape)
    assert vec[9] < 1e-3  # lam3/lam1 of a plate


def test_features_mirrored_part_identical():
    # Two congruent parts in one shape, one the in-place mirror image of the
    # other (reflected through a vertical plane through its own OBB center):
    # an orientation-handedness change the features must ignore.
    rng = np.random.default_rng(9)
    cloud = box_cloud(rng, (0.1, 0.05, 0.2), n=300, center=(0.2, 0.1, 0.0))
    obb = compute_obb(cloud)
    mirrored = cloud.copy()
    mirrored[:, 0] = 2 * obb.center[0] - mirrored[:, 0]
    seat = box_cloud(rng, (0.4, 0.4, 0.02), n=300, center=(0, 0, 0.4))
    shape = normalized_shape([cloud, mirrored, seat])
    feats = features_for_shape(shape)
    assert np.allclose(feats[0], feats[1], atol=1e-6)


def test_features_invariant_under_translation_and_scale():
    rng = np.random.default_rng(10)
    clouds = [box_cloud(rng, (0.2, 0.1, 0.05), n=300),
              box_cloud(rng, (0.05, 0.05, 0.3), n=300, center=(0.3, 0, 0.2))]
    base = normalized_shape(clouds)
    moved = normalized_shape([c * 3.7 + np.array([5.0, -2.0, 1.0])
                              for c in clouds])
    fa = features_for_shape(base)
    fb = features_for_shape(moved)
    for pid in fa:
        assert np.allclose(fa[pid], fb[pid], atol=1e-9)


def test_features_rotation_about_up_axis():
    # Rotating the whole shape about the vertical axis and renormalizing
    # keeps every feature except the in-plane center coordinates, whose norm
    # is preserved.
    rng = np.random.default_rng(11)
    clouds = [box_cloud(rng, (0.1, 0.08, 0.35), n=400),
              box_cloud(rng, (0.15, 0.1, 0.02), n=300, center=(0.1, 0.2, 0.3))]
    rot = rotation((0, 0, 1), np.pi / 2)
    base = normalized_shape(clouds)
    spun = normalized_shape([c @ rot.T for c in clouds])
    fa = features_for_shape(base)
    fb = features_for_shape(spun)
    invariant = [0, 1, 2, 6, 7, 8, 9, 10, 11]
    for pid in fa:
        assert np.allclose(fa[pid][invariant], fb[pid][invariant], atol=1e-5)
        assert np.linalg.norm(fa[pid][3:6]) == pytest.approx(
            np.linalg.norm(fb[pid][3:6]), abs=1e-5)
