"""Simulated annotator answering verification and modification from GT labels.

Implements the same interface the live annotation path drives over HTTP, so
the scheduler runs identically in both modes. An optional error rate flips
verdicts / corrupts edits i.i.d. per decision, modeling imperfect humans.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SymmetryGroups
from .tree import OR, LabelTree


class OracleError(ValueError):
    pass


@dataclass
class OracleConfig:
    error_rate: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.error_rate < 1.0:
            raise OracleError("error_rate must be in [0, 1)")


class OracleAnnotator:
    """Answers at the current node's granularity by mapping GT leaves up."""

    def __init__(self, tree: LabelTree, config: OracleConfig | None = None):
        self.tree = tree
        self.config = config or OracleConfig()
        self.config.validate()
        self._rng = np.random.default_rng(self.config.seed)

    def _flip(self) -> bool:
        if self.config.error_rate <= 0.0:
            return False
        return bool(self._rng.uniform() < self.config.error_rate)

    def gt_child(self, node_id: str, gt_leaf: str) -> str | None:
        """The node child on the GT leaf's root path, or None if unrelated."""
        return self.tree.child_toward(node_id, gt_leaf)

    def node_gt(self, shape, node_id: str, part_ids) -> dict[int, str | None]:
        gt = shape.gt_labels()
        return {pid: self.gt_child(node_id, gt[pid]) for pid in part_ids}

    def group_gt(self, shape, node_id: str, part_ids) -> str | None:
        """Majority GT child over a part group (OR-node type decision)."""
        votes: dict[str, int] = {}
        for child in self.node_gt(shape, node_id, part_ids).values():
            if child is not None:
                votes[child] = votes.get(child, 0) + 1
        if not votes:
            return None
        children = self.tree.children_labels(node_id)
        return max(votes, key=lambda c: (votes[c], -children.index(c)))

    def verify(self, shape, node_id: str, proposal) -> bool:
        """Pass iff every presented label matches GT at node granularity.

        Parts whose GT leaf no longer sits under this node (possible only
        after an erroneous earlier confirmation) are skipped rather than
        failed, since the annotator judges within the current scope.
        """
        if self.tree.kind(node_id) == OR:
            truth = self.group_gt(shape, node_id, proposal.part_ids)
            correct = truth is None or proposal.group_label == truth
        else:
            labels = proposal.labels or {}
            gt = self.node_gt(shape, node_id, proposal.part_ids)
            correct = all(
                gt[pid] is None or labels.get(pid) == gt[pid]
                for pid in proposal.part_ids
            )
        if self._flip():
            return not correct
        return correct

    def _wrong_sibling(self, node_id: str, correct: str) -> str:
        children = self.tree.children_labels(node_id)
        others = [c for c in children if c != correct]
        if not others:
            return correct
        return others[int(self._rng.integers(len(others)))]

    def modify(self, shape, node_id: str, part_ids, proposed,
               groups: SymmetryGroups | None, propagate: bool):
        """Minimal edit set correcting a shape at this node.

        Returns the labels the annotator actually touches: for an OR node a
        single type label; for an AND node a partial {part: label} map. With
        propagation on, one representative per mislabeled symmetry group is
        edited and the engine fills the rest; group members whose GT differs
        from the fill get explicit extra edits.
        """
        if self.tree.kind(node_id) == OR:
            truth = self.group_gt(shape, node_id, part_ids)
            current = proposed if isinstance(proposed, str) else None
            if truth is None:
                truth = current or self.tree.children_labels(node_id)[0]
            if truth != current and self._flip():
                truth = self._wrong_sibling(node_id, truth)
            return truth

        proposed = proposed or {}
        gt = self.node_gt(shape, node_id, part_ids)
        edits: dict[int, str] = {}

        def corrected(pid: int, target: str) -> str:
            if self._flip():
                return self._wrong_sibling(node_id, target)
            return target

        if propagate and groups is not None:
            for group in groups.restricted(part_ids).groups:
                mislabeled = sorted(
                    p for p in group
                    if gt[p] is not None and proposed.get(p) != gt[p]
                )
                if not mislabeled:
                    continue
                rep = mislabeled[0]
                fill = corrected(rep, gt[rep])
                edits[rep] = fill
                for p in group:
                    if p == rep:
                        continue
                    keep = gt[p] if gt[p] is not None else proposed.get(p, fill)
                    if keep != fill:
                        # Propagation would overwrite this member wrongly, so
                        # the annotator pins it explicitly.
                        edits[p] = corrected(p, keep) if gt[p] is not None else keep
        else:
            for pid in sorted(part_ids):
                if gt[pid] is not None and proposed.get(pid) != gt[pid]:
                    edits[pid] = corrected(pid, gt[pid])
                elif proposed.get(pid) is None:
                    # Nothing proposed and no GT scope: keep the part labeled
                    # with the first child so the shape leaves fully labeled.
                    if gt[pid] is None:
                        edits[pid] = self.tree.children_labels(node_id)[0]
        return edits
