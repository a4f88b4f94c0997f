"""Exact l-inf verification of a single decision tree."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .ensemble import Leaf, Tree
from .geometry import INF, Box, Interval, point_box_distance


@dataclass(frozen=True)
class LeafBox:
    leaf: int
    box: Box
    value: float


LeafBoxTable = tuple[LeafBox, ...]


def compute_leaf_boxes(tree: Tree, dim: int) -> LeafBoxTable:
    """Box of every leaf, in ``tree.leaf_ids`` order.

    Walks the tree depth first; a left child clips the split feature's upper
    end to ``min(upper, threshold)``, a right child lifts its lower end to
    ``max(lower, threshold)``.  Leaves whose box turns out empty (a split that
    contradicts an ancestor) are unreachable and left out.
    """
    out = {}
    stack: list[tuple[int, dict[int, Interval]]] = [(tree.root, {})]
    while stack:
        i, cons = stack.pop()
        node = tree.nodes[i]
        if isinstance(node, Leaf):
            box = Box(dim, cons)
            if not box.empty:
                out[i] = LeafBox(i, box, node.value)
            continue
        t, eta = node.feature, node.threshold
        cur = cons.get(t, Interval())
        left = dict(cons)
        left[t] = Interval(cur.lower, min(cur.upper, eta))
        right = dict(cons)
        right[t] = Interval(max(cur.lower, eta), cur.upper)
        stack.append((node.right, right))
        stack.append((node.left, left))
    return tuple(out[i] for i in tree.leaf_ids if i in out)


def disagreement(y0: float, compare: str = "sign") -> Callable[[float], bool]:
    """Predicate telling whether a leaf value differs from the original label.

    ``compare="sign"`` treats leaf values as margins (class +1 iff v > 0) and
    ``y0`` as -1/+1; ``compare="label"`` compares values for equality.
    """
    if compare == "label":
        return lambda v: v != y0
    if compare == "sign":
        if y0 not in (-1, 1):
            raise ValueError("sign comparison needs y0 in {-1, +1}")
        return lambda v: (1 if v > 0 else -1) != y0
    raise ValueError(f"unknown comparison {compare!r}")


def verify_tree_boxes(tree: Tree, x: Sequence[float], y0: float, compare: str = "sign") -> float:
    """Exact minimal l-inf perturbation by scanning every leaf box; inf if none flips."""
    flips = disagreement(y0, compare)
    best = INF
    for rec in compute_leaf_boxes(tree, len(x)):
        if flips(rec.value):
            best = min(best, point_box_distance(x, rec.box)[1])
    return best


def verify_tree_linear(tree: Tree, x: Sequence[float], y0: float, compare: str = "sign") -> float:
    """Same result as :func:`verify_tree_boxes` in one O(n) traversal.

    Carries the running cost and the live per-feature bounds down the tree,
    restoring the single modified bound on the way back up.
    """
    flips = disagreement(y0, compare)
    nodes = tree.nodes
    lo: dict[int, float] = {}
    hi: dict[int, float] = {}
    best = INF

    def visit(i: int, p: float) -> None:
        nonlocal best
        node = nodes[i]
        if isinstance(node, Leaf):
            if flips(node.value):
                best = min(best, p)
            return
        t, eta = node.feature, node.threshold
        xt = float(x[t])
        lt, rt = lo.get(t, -INF), hi.get(t, INF)

        new_r = min(rt, eta)
        if lt < new_r:
            hi[t] = new_r
            visit(node.left, max(p, xt - new_r) if new_r < xt else p)
        hi[t] = rt

        new_l = max(lt, eta)
        if new_l < rt:
            lo[t] = new_l
            visit(node.right, max(p, new_l - xt) if new_l >= xt else p)
        lo[t] = lt

    visit(tree.root, 0.0)
    return best


def tree_attack(tree: Tree, x: Sequence[float], y0: float, compare: str = "sign") -> tuple[float, np.ndarray | None]:
    """Minimal perturbation together with a concrete adversarial point.

    The point is ``x`` clamped into the closest flipping leaf box; an open
    lower bound is crossed by stepping to the next float, so the witness sits
    at most one ulp further out than the infimum.
    """
    flips = disagreement(y0, compare)
    best, best_box = INF, None
    for rec in compute_leaf_boxes(tree, len(x)):
        if flips(rec.value):
            d = point_box_distance(x, rec.box)[1]
            if d < best:
                best, best_box = d, rec.box
    if best_box is None:
        return best, None
    adv = np.array(x, dtype=float)
    for t, iv in best_box.constraints:
        if adv[t] > iv.upper:
            adv[t] = iv.upper
        elif adv[t] <= iv.lower:
            adv[t] = math.nextafter(iv.lower, INF)
    return best, adv
