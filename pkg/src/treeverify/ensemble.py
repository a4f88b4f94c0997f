"""Tree and ensemble representation plus the two supported model formats."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Sequence

import numpy as np


class ModelFormatError(ValueError):
    """A model file could not be parsed; the message names the offending node."""


@dataclass(frozen=True)
class Internal:
    feature: int
    threshold: float
    left: int
    right: int


@dataclass(frozen=True)
class Leaf:
    value: float


Node = Internal | Leaf


@dataclass(frozen=True)
class Tree:
    """Arena of nodes keyed by id.  ``x`` goes left iff ``x[feature] <= threshold``."""

    nodes: dict[int, Node]
    root: int = 0

    def __post_init__(self):
        _check_tree(self.nodes, self.root)

    def __hash__(self):
        return hash((self.root, tuple(sorted(self.nodes.items()))))

    @cached_property
    def leaf_ids(self) -> tuple[int, ...]:
        """Leaf ids in depth-first, left-before-right order."""
        out = []
        stack = [self.root]
        while stack:
            i = stack.pop()
            node = self.nodes[i]
            if isinstance(node, Leaf):
                out.append(i)
            else:
                stack.append(node.right)
                stack.append(node.left)
        return tuple(out)

    @property
    def leaf_count(self) -> int:
        return len(self.leaf_ids)

    @cached_property
    def max_feature(self) -> int:
        return max((n.feature for n in self.nodes.values() if isinstance(n, Internal)), default=-1)

    def features(self) -> set[int]:
        return {n.feature for n in self.nodes.values() if isinstance(n, Internal)}

    def map_leaves(self, fn) -> "Tree":
        return Tree(
            {i: Leaf(fn(n.value)) if isinstance(n, Leaf) else n for i, n in self.nodes.items()},
            self.root,
        )


def _check_tree(nodes: dict[int, Node], root: int) -> None:
    if root not in nodes:
        raise ModelFormatError(f"root {root} is not a node")
    seen = set()
    stack = [root]
    while stack:
        i = stack.pop()
        if i in seen:
            raise ModelFormatError(f"node {i} is reachable twice (cycle or shared child)")
        seen.add(i)
        node = nodes[i]
        if isinstance(node, Internal):
            for child in (node.left, node.right):
                if child not in nodes:
                    raise ModelFormatError(f"node {i} references missing child {child}")
                stack.append(child)
    if len(seen) != len(nodes):
        orphans = sorted(set(nodes) - seen)
        raise ModelFormatError(f"nodes {orphans} are not reachable from root {root}")


def route(tree: Tree, x: Sequence[float]) -> int:
    """Return the id of the leaf ``x`` falls into."""
    i = tree.root
    nodes = tree.nodes
    while True:
        node = nodes[i]
        if isinstance(node, Leaf):
            return i
        i = node.left if x[node.feature] <= node.threshold else node.right


@dataclass(frozen=True)
class Ensemble:
    """Sum-of-trees model.

    With ``num_classes == 2`` the margin is ``base_margin + sum of leaf values``
    and the positive class is predicted iff the margin is positive.  With more
    classes every tree belongs to the class group in ``tree_class`` and the
    prediction is the argmax of the per-class sums (``base_margin`` is added
    to every class and never changes the argmax).
    """

    trees: tuple[Tree, ...]
    dim: int
    num_classes: int = 2
    tree_class: tuple[int, ...] = ()
    base_margin: float = 0.0
    convention: str = field(default="native", compare=False)

    def __post_init__(self):
        if not self.trees:
            raise ModelFormatError("ensemble must contain at least one tree")
        object.__setattr__(self, "trees", tuple(self.trees))
        if not self.tree_class:
            object.__setattr__(self, "tree_class", (0,) * len(self.trees))
        object.__setattr__(self, "tree_class", tuple(int(c) for c in self.tree_class))
        if len(self.tree_class) != len(self.trees):
            raise ModelFormatError("tree_class must have one entry per tree")
        if self.num_classes < 2:
            raise ModelFormatError("num_classes must be at least 2")
        groups = 1 if self.num_classes == 2 else self.num_classes
        for k, c in enumerate(self.tree_class):
            if not 0 <= c < groups:
                raise ModelFormatError(f"/trees/{k}: class {c} out of range for {self.num_classes} classes")
        for k, tree in enumerate(self.trees):
            for nid, node in tree.nodes.items():
                if isinstance(node, Internal) and not 0 <= node.feature < self.dim:
                    raise ModelFormatError(
                        f"/trees/{k}/nodes/{nid}: feature {node.feature} out of range for dim {self.dim}"
                    )

    @property
    def binary(self) -> bool:
        return self.num_classes == 2

    def margin(self, x: Sequence[float]) -> float:
        total = 0.0
        for tree in self.trees:
            total += tree.nodes[route(tree, x)].value
        return total + self.base_margin

    def class_scores(self, x: Sequence[float]) -> np.ndarray:
        scores = np.full(self.num_classes, self.base_margin)
        for tree, c in zip(self.trees, self.tree_class):
            scores[c] += tree.nodes[route(tree, x)].value
        return scores

    def predict(self, x: Sequence[float]) -> int:
        """Class index: 0/1 for binary models (1 iff margin > 0), argmax otherwise."""
        if self.binary:
            return int(self.margin(x) > 0)
        return int(np.argmax(self.class_scores(x)))

    @cached_property
    def compiled(self):
        from .clique import compile_ensemble

        return compile_ensemble(self)


def extract_binary_pair(e: Ensemble, true_class: int, target_class: int) -> Ensemble:
    """Binary ensemble whose margin is ``score[true_class] - score[target_class]``."""
    if e.num_classes <= 2:
        raise ValueError("extract_binary_pair needs a model with more than two classes")
    for c in (true_class, target_class):
        if not 0 <= c < e.num_classes:
            raise ValueError(f"class {c} out of range for {e.num_classes} classes")
    if true_class == target_class:
        raise ValueError("true and target class must differ")
    trees = []
    for tree, c in zip(e.trees, e.tree_class):
        if c == true_class:
            trees.append(tree)
        elif c == target_class:
            trees.append(tree.map_leaves(lambda v: -v))
    return Ensemble(tuple(trees), e.dim, 2, (0,) * len(trees), 0.0, e.convention)


# -- native JSON ------------------------------------------------------------


def emit_native_json(e: Ensemble) -> bytes:
    trees = []
    for tree, c in zip(e.trees, e.tree_class):
        nodes = []
        for nid in sorted(tree.nodes):
            node = tree.nodes[nid]
            if isinstance(node, Leaf):
                nodes.append({"id": nid, "leaf": node.value})
            else:
                nodes.append(
                    {"id": nid, "feature": node.feature, "threshold": node.threshold,
                     "left": node.left, "right": node.right}
                )
        trees.append({"class": c, "nodes": nodes, "root": tree.root})
    doc = {"dim": e.dim, "num_classes": e.num_classes, "base_margin": e.base_margin, "trees": trees}
    return json.dumps(doc, indent=1).encode("utf-8")


def _need(obj: dict, key: str, kind, where: str):
    if key not in obj:
        raise ModelFormatError(f"{where}: missing key '{key}'")
    val = obj[key]
    if kind is float:
        ok = isinstance(val, (int, float)) and not isinstance(val, bool)
    else:
        ok = isinstance(val, kind) and not isinstance(val, bool)
    if not ok:
        raise ModelFormatError(f"{where}/{key}: expected {kind.__name__}, got {type(val).__name__}")
    if kind is float and math.isnan(val):
        raise ModelFormatError(f"{where}/{key}: NaN is not allowed")
    return kind(val)


def parse_native_json(data: bytes | str) -> Ensemble:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError("/: expected an object")
    dim = _need(doc, "dim", int, "")
    num_classes = _need(doc, "num_classes", int, "") if "num_classes" in doc else 2
    base = _need(doc, "base_margin", float, "") if "base_margin" in doc else 0.0
    raw_trees = doc.get("trees")
    if not isinstance(raw_trees, list):
        raise ModelFormatError("/trees: expected an array")
    if not raw_trees:
        raise ModelFormatError("ensemble must contain at least one tree")
    trees, classes = [], []
    for k, rt in enumerate(raw_trees):
        where = f"/trees/{k}"
        if not isinstance(rt, dict):
            raise ModelFormatError(f"{where}: expected an object")
        classes.append(_need(rt, "class", int, where) if "class" in rt else 0)
        raw_nodes = rt.get("nodes")
        if not isinstance(raw_nodes, list) or not raw_nodes:
            raise ModelFormatError(f"{where}/nodes: expected a non-empty array")
        nodes: dict[int, Node] = {}
        for j, rn in enumerate(raw_nodes):
            nwhere = f"{where}/nodes/{j}"
            if not isinstance(rn, dict):
                raise ModelFormatError(f"{nwhere}: expected an object")
            nid = _need(rn, "id", int, nwhere)
            if nid in nodes:
                raise ModelFormatError(f"{nwhere}: duplicate node id {nid}")
            if "leaf" in rn:
                nodes[nid] = Leaf(_need(rn, "leaf", float, nwhere))
            else:
                feat = _need(rn, "feature", int, nwhere)
                if not 0 <= feat < dim:
                    raise ModelFormatError(f"{nwhere}: node {nid} uses feature {feat} but dim is {dim}")
                nodes[nid] = Internal(
                    feat,
                    _need(rn, "threshold", float, nwhere),
                    _need(rn, "left", int, nwhere),
                    _need(rn, "right", int, nwhere),
                )
        root = _need(rt, "root", int, where) if "root" in rt else min(nodes)
        try:
            trees.append(Tree(nodes, root))
        except ModelFormatError as exc:
            raise ModelFormatError(f"{where}: {exc}") from None
    return Ensemble(tuple(trees), dim, num_classes, tuple(classes), base, "native")


# -- XGBoost JSON dump --------------------------------------------------------

XGB_CONVENTION_KEEP = "xgboost: '<' split conditions kept as '<=' thresholds"
XGB_CONVENTION_EXACT = "xgboost: thresholds moved one ulp down so '<=' equals '<'"


def _xgb_feature(split: Any, where: str) -> int:
    if isinstance(split, int) and not isinstance(split, bool):
        return split
    if isinstance(split, str):
        s = split[1:] if split.startswith("f") else split
        if s.isdigit():
            return int(s)
    raise ModelFormatError(f"{where}: unsupported feature name {split!r} (expected 'f<idx>' or an integer)")


def parse_xgboost_json(
    data: bytes | str | list,
    dim: int | None = None,
    num_classes: int = 2,
    base_margin: float = 0.0,
    exact_thresholds: bool = False,
) -> Ensemble:
    """Parse the array-of-trees JSON produced by ``Booster.dump_model(..., dump_format='json')``.

    XGBoost sends ``x`` to ``yes`` when ``x < split_condition``.  By default
    the condition is kept as a ``<=`` threshold, which disagrees with XGBoost
    only for inputs exactly on a threshold.  ``exact_thresholds`` stores the
    previous float instead, reproducing ``<`` for every float32 input.
    Thresholds are rounded back to the float32 values XGBoost stores.
    For multiclass dumps tree ``i`` belongs to class ``i % num_classes``.
    """
    if isinstance(data, (bytes, str)):
        try:
            doc = json.loads(data)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ModelFormatError(f"malformed JSON: {exc}") from None
    else:
        doc = data
    if not isinstance(doc, list):
        raise ModelFormatError("/: expected an array of trees")
    if not doc:
        raise ModelFormatError("ensemble must contain at least one tree")
    trees: list[Tree] = []
    for k, raw in enumerate(doc):
        if isinstance(raw, str):
            try:
                raw = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ModelFormatError(f"/{k}: malformed tree JSON: {exc}") from None
        nodes: dict[int, Node] = {}
        _xgb_walk(raw, f"/{k}", nodes, exact_thresholds)
        root = raw.get("nodeid", 0) if isinstance(raw, dict) else 0
        try:
            trees.append(Tree(nodes, root))
        except ModelFormatError as exc:
            raise ModelFormatError(f"/{k}: {exc}") from None
    inferred = max(t.max_feature for t in trees) + 1
    if dim is None:
        dim = max(inferred, 1)
    elif inferred > dim:
        for k, t in enumerate(trees):
            for nid, n in t.nodes.items():
                if isinstance(n, Internal) and n.feature >= dim:
                    raise ModelFormatError(f"/{k} node {nid}: feature {n.feature} but dim is {dim}")
    groups = 1 if num_classes == 2 else num_classes
    classes = tuple(k % groups for k in range(len(trees)))
    conv = XGB_CONVENTION_EXACT if exact_thresholds else XGB_CONVENTION_KEEP
    return Ensemble(tuple(trees), dim, num_classes, classes, base_margin, conv)


def _xgb_walk(raw: Any, where: str, nodes: dict[int, Node], exact: bool) -> None:
    stack = [(raw, where)]
    while stack:
        node, path = stack.pop()
        if not isinstance(node, dict):
            raise ModelFormatError(f"{path}: expected an object")
        nid = node.get("nodeid", 0 if not nodes else None)
        if not isinstance(nid, int):
            raise ModelFormatError(f"{path}: missing 'nodeid'")
        if nid in nodes:
            raise ModelFormatError(f"{path}: duplicate nodeid {nid}")
        if "leaf" in node:
            nodes[nid] = Leaf(_need(node, "leaf", float, path))
            continue
        if "split_type" in node and node["split_type"] not in ("numerical", 0) or "categories" in node:
            raise ModelFormatError(f"{path}: categorical splits are not supported")
        for key in ("split", "split_condition", "yes", "no"):
            if key not in node:
                raise ModelFormatError(f"{path}: missing key '{key}'")
        feat = _xgb_feature(node["split"], path)
        # dumps print float32 splits with 9 digits; recover the stored value
        thr = float(np.float32(_need(node, "split_condition", float, path)))
        if exact:
            thr = math.nextafter(thr, -math.inf)
        yes, no = _need(node, "yes", int, path), _need(node, "no", int, path)
        nodes[nid] = Internal(feat, thr, yes, no)
        children = node.get("children")
        if not isinstance(children, list):
            raise ModelFormatError(f"{path}: internal node without 'children'")
        for j, child in enumerate(children):
            stack.append((child, f"{path}/children/{j}"))


def load_model(path: str, fmt: str = "native", **kwargs) -> Ensemble:
    with open(path, "rb") as fh:
        data = fh.read()
    if fmt == "native":
        return parse_native_json(data)
    if fmt == "xgboost":
        return parse_xgboost_json(data, **kwargs)
    raise ValueError(f"unknown model format {fmt!r}")

