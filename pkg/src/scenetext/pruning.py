"""Reduce an MSER tree to disjoint character candidates.

Both procedures keep whichever of parent or children has the lower
(regularized) variation, parent winning ties. They run with explicit stacks
because MSER trees of noisy images can be thousands of levels deep.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .component_tree import MserTree, RegularizationParams

FRAME_RATIO = 0.95


@dataclass(eq=False)
class PruneNode:
    ident: int
    var: float
    children: list["PruneNode"] = field(default_factory=list)

    def __repr__(self):
        return f"PruneNode({self.ident}, var={self.var:.4g}, nchildren={len(self.children)})"


class ComparisonLog:
    """Counts variation comparisons; optionally records each outcome.

    Records are ``(kept, dropped)`` tuples of node identifiers.
    """

    def __init__(self, record: bool = False):
        self.count = 0
        self.records: list[tuple[tuple[int, ...], tuple[int, ...]]] | None = [] if record else None

    def log(self, kept, dropped, n_comparisons=1):
        self.count += n_comparisons
        if self.records is not None:
            self.records.append((tuple(kept), tuple(dropped)))


def _postorder(root: PruneNode) -> list[PruneNode]:
    out = []
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            out.append(node)
        else:
            stack.append((node, True))
            stack.extend((c, False) for c in reversed(node.children))
    return out


def linear_reduction(root: PruneNode, log: ComparisonLog | None = None) -> PruneNode:
    """Collapse every single-child chain to its minimum-variation node.

    Returns the root of a new tree in which no node has exactly one child;
    the input tree is left untouched.
    """
    result: dict[int, PruneNode] = {}
    for node in _postorder(root):
        kids = node.children
        if not kids:
            out = PruneNode(node.ident, node.var)
        elif len(kids) == 1:
            c = result.pop(id(kids[0]))
            if log is not None:
                log.log(*(((node.ident,), (c.ident,)) if node.var <= c.var else ((c.ident,), (node.ident,))))
            if node.var <= c.var:
                out = PruneNode(node.ident, node.var, c.children)
            else:
                out = c
        else:
            out = PruneNode(node.ident, node.var, [result.pop(id(k)) for k in kids])
        result[id(node)] = out
    return result[id(root)]


def tree_accumulation(root: PruneNode, log: ComparisonLog | None = None) -> list[PruneNode]:
    """Resolve a reduced tree into a pairwise non-nested node list.

    A node with children keeps itself when its variation is no larger than
    the minimum over its children's accumulated sets; otherwise the sets win.
    """
    result: dict[int, tuple[list[PruneNode], float]] = {}
    for node in _postorder(root):
        kids = node.children
        if not kids:
            result[id(node)] = ([node], node.var)
            continue
        if len(kids) == 1:
            raise ValueError(f"node {node.ident} has a single child; run linear_reduction first")
        parts = [result.pop(id(k)) for k in kids]
        # extend the largest child list in place so total copying stays small
        parts.sort(key=lambda p: len(p[0]), reverse=True)
        acc = parts[0][0]
        min_var = parts[0][1]
        for lst, v in parts[1:]:
            acc.extend(lst)
            min_var = min(min_var, v)
        if log is not None:
            kept, dropped = ([node], acc) if node.var <= min_var else (acc, [node])
            log.log([n.ident for n in kept], [n.ident for n in dropped], n_comparisons=len(kids))
        if node.var <= min_var:
            result[id(node)] = ([node], node.var)
        else:
            result[id(node)] = (acc, min_var)
    return result[id(root)][0]


def prune(root: PruneNode, log: ComparisonLog | None = None) -> list[PruneNode]:
    return tree_accumulation(linear_reduction(root, log), log)


def build_prune_forest(mser: MserTree, variation: np.ndarray) -> list[PruneNode]:
    nodes = [PruneNode(int(mser.ids[i]), float(variation[i])) for i in range(len(mser))]
    roots = []
    for i, p in enumerate(mser.parent):
        if p >= 0:
            nodes[p].children.append(nodes[i])
        else:
            roots.append(nodes[i])
    return roots


def extract_character_candidates(mser: MserTree,
                                 params: RegularizationParams = RegularizationParams(),
                                 variation: np.ndarray | None = None,
                                 frame_ratio: float = FRAME_RATIO,
                                 log: ComparisonLog | None = None) -> list[int]:
    """Prune an MSER tree into disjoint candidate regions (ER node ids).

    Regions covering at least ``frame_ratio`` of the image are frame
    artifacts: they are removed before pruning and their subtrees are pruned
    independently.
    """
    if len(mser) == 0:
        return []
    if variation is None:
        variation = mser.regularized_variation(params)
    image_area = mser.er.image.size
    stack = build_prune_forest(mser, variation)
    roots = []
    while stack:
        node = stack.pop()
        if mser.er.area[node.ident] >= frame_ratio * image_area:
            stack.extend(node.children)
        else:
            roots.append(node)
    out = []
    for r in roots:
        out.extend(n.ident for n in prune(r, log))
    return sorted(out)
