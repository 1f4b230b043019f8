import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partlab.tree import (AND, OR, LabelNode, LabelTree, LabelTreeError,
                          flatten_tree, prune_tree)


def node(nid, kind=AND, children=()):
    return {"id": nid, "name": nid, "kind": kind,
            "color": [10, 20, 30], "children": list(children)}


def leaf(nid):
    return node(nid)


@pytest.fixture
def small_tree():
    return LabelTree.from_dict(node("root", AND, [
        node("a", AND, [leaf("a1"), leaf("a2")]),
        node("b", OR, [leaf("b1"), leaf("b2")]),
        leaf("c"),
    ]))


def test_lookup_and_parent_links(small_tree):
    assert small_tree.node("a1").is_leaf
    assert small_tree.parent_id("a1") == "a"
    assert small_tree.parent_id("root") is None
    assert "b2" in small_tree
    with pytest.raises(LabelTreeError, match="unknown node"):
        small_tree.node("nope")


def test_children_order_is_declaration_order(small_tree):
    assert small_tree.children_labels("root") == ["a", "b", "c"]
    with pytest.raises(LabelTreeError, match="leaf"):
        small_tree.children_labels("c")


def test_root_must_be_and():
    with pytest.raises(LabelTreeError, match="root"):
        LabelTree.from_dict(node("root", OR, [leaf("x"), leaf("y")]))


def test_duplicate_ids_rejected():
    with pytest.raises(LabelTreeError, match="duplicate"):
        LabelTree.from_dict(node("root", AND, [leaf("x"), leaf("x")]))


def test_is_descendant_reflexive_and_paths(small_tree):
    assert small_tree.is_descendant("a1", "a1")
    assert small_tree.is_descendant("a1", "a")
    assert small_tree.is_descendant("a1", "root")
    assert not small_tree.is_descendant("a1", "b")
    with pytest.raises(LabelTreeError):
        small_tree.is_descendant("a1", "ghost")


def test_child_toward(small_tree):
    assert small_tree.child_toward("root", "b2") == "b"
    assert small_tree.child_toward("b", "b2") == "b2"
    assert small_tree.child_toward("a", "b2") is None


def test_prune_removes_small_and_nodes():
    # AND node with 2 children under root: removed, children promoted.
    tree = LabelTree.from_dict(node("root", AND, [
        leaf("k"),
        node("small", AND, [leaf("s1"), leaf("s2")]),
        leaf("m"),
    ]))
    pruned = prune_tree(tree)
    assert "small" not in pruned
    # Promoted grandchildren land after the surviving siblings.
    assert pruned.children_labels("root") == ["k", "m", "s1", "s2"]


def test_prune_keeps_or_nodes_and_triples():
    tree = LabelTree.from_dict(node("root", AND, [
        node("or2", OR, [leaf("o1"), leaf("o2")]),
        node("and3", AND, [leaf("x"), leaf("y"), leaf("z")]),
    ]))
    pruned = prune_tree(tree)
    assert pruned.children_labels("root") == ["or2", "and3"]
    assert pruned.children_labels("or2") == ["o1", "o2"]


def test_prune_leaf_only_tree_unchanged():
    tree = LabelTree.from_dict(node("root", AND, [leaf("a"), leaf("b")]))
    assert prune_tree(tree) == tree


def test_prune_bottom_up_promotion_can_rescue_parent():
    # Bottom-up: mid (2 children) is removed first, promoting m1/m2 into
    # inner, which then has 3 children and legitimately survives.
    tree = LabelTree.from_dict(node("root", AND, [
        leaf("a"),
        node("inner", AND, [
            node("mid", AND, [leaf("m1"), leaf("m2")]),
            leaf("i1"),
        ]),
    ]))
    pruned = prune_tree(tree)
    assert "mid" not in pruned
    assert pruned.children_labels("inner") == ["i1", "m1", "m2"]
    assert sorted(pruned.leaf_ids()) == ["a", "i1", "m1", "m2"]


def test_prune_cascading_removals_resolve():
    # Two nested 2-child AND nodes whose removal chains upward in one pass.
    tree = LabelTree.from_dict(node("root", AND, [
        leaf("a"), leaf("b"), leaf("c"),
        node("outer", AND, [
            node("inner", AND, [leaf("i1"), leaf("i2")]),
        ]),
    ]))
    pruned = prune_tree(tree)
    # inner removed inside outer; outer then holds i1, i2 (2 children) and is
    # removed at the root; i1, i2 re-examined there as leaves.
    assert "inner" not in pruned and "outer" not in pruned
    assert pruned.children_labels("root") == ["a", "b", "c", "i1", "i2"]


def test_pruned_descendant_via_removed_node():
    tree = LabelTree.from_dict(node("root", AND, [
        leaf("a"),
        node("gone", AND, [leaf("g1"), leaf("g2")]),
    ]))
    pruned = prune_tree(tree)
    assert pruned.is_descendant("g1", "root")
    assert pruned.parent_id("g1") == "root"


def _random_tree(draw, depth=0):
    nid = draw(st.uuids()).hex[:8]
    if depth >= 3 or draw(st.booleans()):
        return node(nid)
    kind = draw(st.sampled_from([AND, OR]))
    n = draw(st.integers(min_value=1, max_value=4))
    return node(nid, kind, [_random_tree(draw, depth + 1) for _ in range(n)])


@st.composite
def trees(draw):
    kids = [_random_tree(draw, 1)
            for _ in range(draw(st.integers(min_value=1, max_value=4)))]
    return LabelTree.from_dict(node("root", AND, kids))


@settings(max_examples=60, deadline=None)
@given(trees())
def test_prune_preserves_leaves_and_is_idempotent(tree):
    pruned = prune_tree(tree)
    assert sorted(pruned.leaf_ids()) == sorted(tree.leaf_ids())
    assert prune_tree(pruned) == pruned
    # No prunable AND nodes survive anywhere below the root.
    for nid in pruned.internal_ids():
        n = pruned.node(nid)
        if nid != pruned.root.id and n.kind == AND:
            assert len(n.children) >= 3


def test_flatten_tree(small_tree):
    flat = flatten_tree(small_tree)
    assert flat.children_labels("root") == sorted(
        flat.children_labels("root"), key=small_tree.leaf_ids().index)
    assert sorted(flat.leaf_ids()) == sorted(small_tree.leaf_ids())
    assert all(flat.is_leaf(c) for c in flat.children_labels("root"))


def test_json_round_trip(tmp_path, small_tree):
    path = tmp_path / "tree.json"
    small_tree.save(path)
    assert LabelTree.load(path) == small_tree
    raw = json.loads(path.read_text())
    assert raw["kind"] == AND
