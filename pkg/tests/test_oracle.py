import numpy as np
import pytest

from partlab.dataset import PartRecord, ShapeRecord
from partlab.geometry import SymmetryGroups
from partlab.oracle import OracleAnnotator, OracleConfig, OracleError
from partlab.proposer import Proposal
from partlab.tree import LabelTree

TREE = LabelTree.from_dict({
    "id": "root", "name": "root", "kind": "and", "color": [0, 0, 0],
    "children": [
        {"id": "base", "name": "base", "kind": "or", "color": [1, 1, 1],
         "children": [
             {"id": "star", "name": "star", "kind": "and", "color": [2, 2, 2],
              "children": [
                  {"id": "leg", "name": "leg", "kind": "and",
                   "color": [3, 3, 3], "children": []},
                  {"id": "hub", "name": "hub", "kind": "and",
                   "color": [4, 4, 4], "children": []},
                  {"id": "cap", "name": "cap", "kind": "and",
                   "color": [5, 5, 5], "children": []},
              ]},
             {"id": "slab", "name": "slab", "kind": "and", "color": [6, 6, 6],
              "children": [
                  {"id": "plate", "name": "plate", "kind": "and",
                   "color": [7, 7, 7], "children": []},
                  {"id": "rim", "name": "rim", "kind": "and",
                   "color": [8, 8, 8], "children": []},
                  {"id": "pad", "name": "pad", "kind": "and",
                   "color": [9, 9, 9], "children": []},
              ]},
         ]},
        {"id": "seat", "name": "seat", "kind": "and", "color": [10, 10, 10],
         "children": []},
    ],
})

PT = np.zeros((1, 3))


def shape_with(gt):
    return ShapeRecord("s", [PartRecord(pid, PT, leaf) for pid, leaf in gt.items()])


def and_proposal(labels, part_ids=None, node="root"):
    part_ids = part_ids if part_ids is not None else sorted(labels)
    return Proposal("s", node, "and", list(part_ids), [], None, None,
                    dict(labels), None, 1.0)


def or_proposal(label, part_ids, node="base"):
    return Proposal("s", node, "or", list(part_ids), [], None, None,
                    None, label, 1.0)


def test_config_validation():
    with pytest.raises(OracleError):
        OracleConfig(error_rate=1.0).validate()
    OracleConfig(error_rate=0.0).validate()


def test_gt_mapping_up_the_tree():
    oracle = OracleAnnotator(TREE)
    assert oracle.gt_child("root", "leg") == "base"
    assert oracle.gt_child("base", "leg") == "star"
    assert oracle.gt_child("star", "leg") == "leg"
    assert oracle.gt_child("slab", "leg") is None
    assert oracle.gt_child("root", "seat") == "seat"


def test_verify_all_match_passes():
    oracle = OracleAnnotator(TREE)
    shape = shape_with({0: "leg", 1: "seat"})
    assert oracle.verify(shape, "root", and_proposal({0: "base", 1: "seat"}))


def test_verify_single_wrong_part_fails():
    oracle = OracleAnnotator(TREE)
    shape = shape_with({0: "leg", 1: "seat"})
    assert not oracle.verify(shape, "root",
                             and_proposal({0: "seat", 1: "seat"}))


def test_verify_or_node_group():
    oracle = OracleAnnotator(TREE)
    shape = shape_with({0: "leg", 1: "hub"})
    assert oracle.verify(shape, "base", or_proposal("star", [0, 1]))
    assert not oracle.verify(shape, "base", or_proposal("slab", [0, 1]))


def test_error_rate_deterministic_under_seed():
    shape = shape_with({0: "leg", 1: "seat"})
    prop = and_proposal({0: "base", 1: "seat"})
    runs = []
    for _ in range(2):
        oracle = OracleAnnotator(TREE, OracleConfig(error_rate=0.05, seed=11))
        runs.append([oracle.verify(shape, "root", prop) for _ in range(200)])
    assert runs[0] == runs[1]
    assert not all(runs[0])  # some flips at 5%


def test_modify_already_correct_zero_edits():
    oracle = OracleAnnotator(TREE)
    shape = shape_with({0: "leg", 1: "seat"})
    groups = SymmetryGroups(((0,), (1,)))
    edits = oracle.modify(shape, "root", [0, 1],
                          {0: "base", 1: "seat"}, groups, True)
    assert edits == {}


def test_modify_symmetric_group_single_edit():
    oracle = OracleAnnotator(TREE)
    shape = shape_with({i: "leg" for i in range(4)})
    groups = SymmetryGroups(((0, 1, 2, 3),))
    proposed = {i: "hub" for i in range(4)}  # all four wrong
    edits = oracle.modify(shape, "star", [0, 1, 2, 3], proposed, groups, True)
    assert edits == {0: "leg"}


def test_modify_propagation_off_counts_each_edit():
    oracle = OracleAnnotator(TREE)
    shape = shape_with({i: "leg" for i in range(4)})
    groups = SymmetryGroups(((0, 1, 2, 3),))
    proposed = {i: "hub" for i in range(4)}
    edits = oracle.modify(shape, "star", [0, 1, 2, 3], proposed, groups, False)
    assert edits == {i: "leg" for i in range(4)}


def test_modify_heterogeneous_group_pins_conflicts():
    # Detected symmetry lumps parts whose GT differs: propagation from the
    # representative must not clobber the odd one out.
    oracle = OracleAnnotator(TREE)
    shape = shape_with({0: "leg", 1: "leg", 2: "hub"})
    groups = SymmetryGroups(((0, 1, 2),))
    proposed = {0: "cap", 1: "cap", 2: "cap"}
    edits = oracle.modify(shape, "star", [0, 1, 2], proposed, groups, True)
    assert edits == {0: "leg", 2: "hub"}


def test_modify_or_node_returns_majority_type():
    oracle = OracleAnnotator(TREE)
    shape = shape_with({0: "leg", 1: "hub", 2: "leg"})
    assert oracle.modify(shape, "base", [0, 1, 2], "slab", None, False) == "star"


def test_modify_without_proposals_labels_everything():
    oracle = OracleAnnotator(TREE)
    shape = shape_with({0: "leg", 1: "seat"})
    groups = SymmetryGroups(((0,), (1,)))
    edits = oracle.modify(shape, "root", [0, 1], {}, groups, False)
    assert edits == {0: "base", 1: "seat"}


def test_missing_gt_raises():
    oracle = OracleAnnotator(TREE)
    shape = ShapeRecord("s", [PartRecord(0, PT, None)])
    with pytest.raises(Exception):
        oracle.verify(shape, "root", and_proposal({0: "seat"}, [0]))
