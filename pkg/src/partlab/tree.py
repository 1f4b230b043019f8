"""Hierarchical AND/OR label taxonomy.

AND nodes enumerate the distinct parts a structure has (each part gets one
child label); OR nodes enumerate mutually exclusive types (the whole part
group gets one child label). Leaves are final part labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

AND = "and"
OR = "or"

# Fallback palette for taxonomies that omit colors.
_PALETTE = [
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
    (128, 128, 0), (255, 215, 180), (0, 0, 128), (128, 128, 128),
]


class LabelTreeError(ValueError):
    """Malformed taxonomy definition or invalid tree query."""


@dataclass
class LabelNode:
    id: str
    name: str
    kind: str
    color: tuple[int, int, int]
    children: list["LabelNode"] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children


class LabelTree:
    """Immutable taxonomy with id lookup and parent links."""

    def __init__(self, root: LabelNode):
        if root.kind != AND:
            raise LabelTreeError(f"root node {root.id!r} must have kind 'and'")
        self.root = root
        self._nodes: dict[str, LabelNode] = {}
        self._parent: dict[str, str | None] = {}
        self._index(root, None)

    def _index(self, node: LabelNode, parent_id: str | None) -> None:
        if node.id in self._nodes:
            raise LabelTreeError(f"duplicate node id {node.id!r}")
        if node.kind not in (AND, OR):
            raise LabelTreeError(f"node {node.id!r}: kind must be 'and' or 'or'")
        self._nodes[node.id] = node
        self._parent[node.id] = parent_id
        for child in node.children:
            self._index(child, node.id)

    def node(self, node_id: str) -> LabelNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise LabelTreeError(f"unknown node id {node_id!r}") from None

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._nodes

    def parent_id(self, node_id: str) -> str | None:
        self.node(node_id)
        return self._parent[node_id]

    def children_labels(self, node_id: str) -> list[str]:
        """Ordered child ids of an internal node (declaration order)."""
        node = self.node(node_id)
        if node.is_leaf:
            raise LabelTreeError(f"leaf {node_id!r} has no children")
        return [c.id for c in node.children]

    def path_to_root(self, node_id: str) -> list[str]:
        """Ids from node up to the root, inclusive."""
        self.node(node_id)
        path = [node_id]
        while (up := self._parent[path[-1]]) is not None:
            path.append(up)
        return path

    def is_descendant(self, node_id: str, ancestor_id: str) -> bool:
        """True iff ancestor lies on the node's root path (reflexive)."""
        self.node(ancestor_id)
        return ancestor_id in self.path_to_root(node_id)

    def child_toward(self, node_id: str, leaf_id: str) -> str | None:
        """The child of node_id whose subtree contains leaf_id, else None."""
        path = self.path_to_root(leaf_id)
        if node_id not in path:
            return None
        i = path.index(node_id)
        return path[i - 1] if i > 0 else None

    def leaf_ids(self) -> list[str]:
        out: list[str] = []

        def walk(node: LabelNode) -> None:
            if node.is_leaf:
                out.append(node.id)
            for c in node.children:
                walk(c)

        walk(self.root)
        return out

    def internal_ids(self) -> list[str]:
        """Internal node ids in depth-first (pre-order) declaration order."""
        out: list[str] = []

        def walk(node: LabelNode) -> None:
            if not node.is_leaf:
                out.append(node.id)
            for c in node.children:
                walk(c)

        walk(self.root)
        return out

    def is_leaf(self, node_id: str) -> bool:
        return self.node(node_id).is_leaf

    def kind(self, node_id: str) -> str:
        return self.node(node_id).kind

    def color(self, node_id: str) -> tuple[int, int, int]:
        return self.node(node_id).color

    def to_dict(self) -> dict:
        def dump(node: LabelNode) -> dict:
            return {
                "id": node.id,
                "name": node.name,
                "kind": node.kind,
                "color": list(node.color),
                "children": [dump(c) for c in node.children],
            }

        return dump(self.root)

    @classmethod
    def from_dict(cls, data: dict) -> "LabelTree":
        counter = [0]

        def parse(obj: dict, path: str) -> LabelNode:
            if not isinstance(obj, dict):
                raise LabelTreeError(f"{path}: node must be an object")
            for key in ("id", "name"):
                if key not in obj:
                    raise LabelTreeError(f"{path}: missing field {key!r}")
            kind = obj.get("kind", AND)
            color = obj.get("color")
            if color is None:
                color = _PALETTE[counter[0] % len(_PALETTE)]
            counter[0] += 1
            color = tuple(int(c) for c in color)
            if len(color) != 3 or any(not 0 <= c <= 255 for c in color):
                raise LabelTreeError(f"{path}: color must be three RGB bytes")
            children = [
                parse(c, f"{path}.children[{i}]")
                for i, c in enumerate(obj.get("children", []))
            ]
            return LabelNode(str(obj["id"]), str(obj["name"]), kind, color, children)

        return cls(parse(data, "$"))

    @classmethod
    def load(cls, path: str | Path) -> "LabelTree":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise LabelTreeError(f"label tree file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise LabelTreeError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8"
        )

    def __eq__(self, other: object) -> bool:
        return isinstance(other, LabelTree) and self.to_dict() == other.to_dict()


def prune_tree(tree: LabelTree) -> LabelTree:
    """Drop internal AND nodes with fewer than three children.

    A removed node's children are promoted to its parent, appended after the
    surviving siblings in their original order, and re-examined there so
    cascading removals resolve. OR nodes, leaves, and the root always stay.
    """

    def rebuild(node: LabelNode) -> LabelNode:
        queue = [rebuild(c) for c in node.children]
        kept: list[LabelNode] = []
        i = 0
        while i < len(queue):
            child = queue[i]
            if child.kind == AND and child.children and len(child.children) < 3:
                queue.extend(child.children)
            else:
                kept.append(child)
            i += 1
        return LabelNode(node.id, node.name, node.kind, node.color, kept)

    return LabelTree(rebuild(tree.root))


def flatten_tree(tree: LabelTree) -> LabelTree:
    """Collapse the taxonomy to a single AND root over all leaves.

    Used by the non-hierarchical ablation: one labeling task over the full
    leaf set instead of per-node subsets.
    """
    leaves = []

    def walk(node: LabelNode) -> None:
        if node.is_leaf:
            leaves.append(LabelNode(node.id, node.name, node.kind, node.color, []))
        for c in node.children:
            walk(c)

    walk(tree.root)
    root = tree.root
    return LabelTree(LabelNode(root.id, root.name, AND, root.color, leaves))
