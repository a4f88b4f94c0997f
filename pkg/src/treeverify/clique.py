"""K-partite boxicity graphs of leaf boxes and bounds on their max-weight clique.

Each tree contributes one part (an independent set) whose nodes are its leaf
boxes; an edge joins two nodes whenever their boxes intersect.  A K-clique is
a tuple of leaves reachable by one common input, so the largest clique weight
``v*`` decides whether the ensemble's margin can change sign.

Boxes are held as dense ``(n, m)`` bound arrays over the ``m`` features that
some split actually uses; unused features never constrain anything.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import INF, Box, Interval
from .single_tree import LeafBoxTable, compute_leaf_boxes

DEFAULT_CAP = 1_000_000
_CHUNK_ELEMS = 1 << 22


class CapExceeded(RuntimeError):
    pass


class GraphInvariantError(RuntimeError):
    """A tree lost every leaf during pruning, which a nonempty query box rules out."""


@dataclass(frozen=True, eq=False)
class CompiledEnsemble:
    dim: int
    features: np.ndarray  # (m,) feature index of each dense column
    tables: tuple[LeafBoxTable, ...]
    offsets: np.ndarray  # (K + 1,) global leaf id range of each tree
    lo: np.ndarray  # (N, m)
    hi: np.ndarray  # (N, m)
    values: np.ndarray  # (N,)
    leaf_node: np.ndarray  # (N,) node id inside its tree

    @property
    def num_trees(self) -> int:
        return len(self.tables)

    def tree_of(self, leaf: int) -> int:
        return int(np.searchsorted(self.offsets, leaf, side="right") - 1)

    def dense_query(self, box: Box) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = box.bounds()
        return lo[self.features], hi[self.features]


def compile_ensemble(e) -> CompiledEnsemble:
    tables = tuple(compute_leaf_boxes(t, e.dim) for t in e.trees)
    used = sorted({k for table in tables for rec in table for k, _ in rec.box.constraints})
    col = {f: j for j, f in enumerate(used)}
    n = sum(len(t) for t in tables)
    lo = np.full((n, len(used)), -INF)
    hi = np.full((n, len(used)), INF)
    values = np.empty(n)
    leaf_node = np.empty(n, dtype=np.int64)
    offsets = [0]
    g = 0
    for table in tables:
        for rec in table:
            for k, iv in rec.box.constraints:
                lo[g, col[k]] = iv.lower
                hi[g, col[k]] = iv.upper
            values[g] = rec.value
            leaf_node[g] = rec.leaf
            g += 1
        offsets.append(g)
    return CompiledEnsemble(
        e.dim, np.asarray(used, dtype=np.int64), tables, np.asarray(offsets), lo, hi, values, leaf_node
    )


@dataclass(frozen=True)
class PseudoNode:
    members: tuple[int, ...]  # global leaf ids, one per spanned tree, in tree order
    box: Box
    value: float


@dataclass(frozen=True, eq=False)
class CliqueSet:
    """One part of the (pseudo-)graph: every clique over the trees in ``parts``."""

    parts: tuple[int, ...]
    members: np.ndarray  # (n, len(parts))
    lo: np.ndarray
    hi: np.ndarray
    values: np.ndarray
    leaf_values: np.ndarray  # value of every global leaf, already oriented
    features: np.ndarray
    dim: int

    def __len__(self) -> int:
        return len(self.values)

    def _with(self, parts, members, lo, hi, values) -> "CliqueSet":
        return CliqueSet(parts, members, lo, hi, values, self.leaf_values, self.features, self.dim)

    def box(self, i: int) -> Box:
        return Box(
            self.dim,
            ((int(f), Interval(float(a), float(b))) for f, a, b in zip(self.features, self.lo[i], self.hi[i])),
        )

    def nodes(self) -> list[PseudoNode]:
        return [
            PseudoNode(tuple(int(m) for m in self.members[i]), self.box(i), float(self.values[i]))
            for i in range(len(self))
        ]

    def member_tuples(self) -> set[tuple[int, ...]]:
        return {tuple(int(m) for m in row) for row in self.members}

    @property
    def max_value(self) -> float:
        return float(self.values.max()) if len(self) else -INF


def build_level0(compiled: CompiledEnsemble, query_box: Box, sign: float = 1.0) -> list[CliqueSet]:
    """One singleton-leaf part per tree, each leaf box clipped to ``query_box``.

    Leaves whose clipped box is empty are dropped.  ``sign`` multiplies every
    leaf value (-1 turns a "can the margin drop" question into "can it rise").
    """
    if query_box.empty:
        raise ValueError("query box is empty")
    if query_box.dim != compiled.dim:
        raise ValueError(f"query box has dimension {query_box.dim}, model has {compiled.dim}")
    qlo, qhi = compiled.dense_query(query_box)
    lo = np.maximum(compiled.lo, qlo)
    hi = np.minimum(compiled.hi, qhi)
    keep = (lo < hi).all(axis=1)
    leaf_values = compiled.values * sign if sign != 1.0 else compiled.values
    parts = []
    for k in range(compiled.num_trees):
        a, b = compiled.offsets[k], compiled.offsets[k + 1]
        idx = a + np.flatnonzero(keep[a:b])
        if len(idx) == 0:
            raise GraphInvariantError(f"tree {k} has no leaf inside the query box")
        parts.append(
            CliqueSet((k,), idx[:, None], lo[idx], hi[idx], leaf_values[idx], leaf_values, compiled.features, compiled.dim)
        )
    return parts


def parts_from_boxes(groups: Sequence[Sequence[tuple[Box, float]]], dim: int) -> list[CliqueSet]:
    """Level-0 parts of an arbitrary K-partite boxicity graph.

    ``groups[k]`` lists the ``(box, value)`` nodes of part ``k``; nodes get
    global ids in listing order.
    """
    flat = [(k, box, float(v)) for k, grp in enumerate(groups) for box, v in grp]
    if any(box.dim != dim for _, box, _ in flat):
        raise ValueError("every box must have the graph's dimension")
    if any(box.empty for _, box, _ in flat):
        raise ValueError("graph nodes must have nonempty boxes")
    n = len(flat)
    lo = np.full((n, dim), -INF)
    hi = np.full((n, dim), INF)
    for g, (_, box, _) in enumerate(flat):
        lo[g], hi[g] = box.bounds()
    values = np.array([v for _, _, v in flat], dtype=float)
    features = np.arange(dim, dtype=np.int64)
    parts, start = [], 0
    for k, grp in enumerate(groups):
        idx = np.arange(start, start + len(grp))
        start += len(grp)
        parts.append(CliqueSet((k,), idx[:, None], lo[idx], hi[idx], values[idx], values, features, dim))
    return parts


def _pair_mask_chunks(alo, ahi, blo, bhi):
    """Yield ``(row_offset, mask)`` with ``mask[i, j]`` true iff box a_i meets box b_j."""
    n1, n2 = len(alo), len(blo)
    m = alo.shape[1]
    rows = max(1, _CHUNK_ELEMS // max(1, n2 * max(m, 1)))
    for s in range(0, n1, rows):
        e = min(n1, s + rows)
        if m == 0:
            yield s, np.ones((e - s, n2), dtype=bool)
            continue
        lo = np.maximum(alo[s:e, None, :], blo[None, :, :])
        hi = np.minimum(ahi[s:e, None, :], bhi[None, :, :])
        yield s, (lo < hi).all(axis=2)


def merge_pair(acc: CliqueSet, nxt: CliqueSet, cap: int | None = None) -> CliqueSet:
    """All 2-cliques between two parts, as pseudo nodes.

    The pseudo value continues ``acc``'s running sum with ``nxt``'s member
    leaves one at a time, so values are always summed in member order.
    """
    iu_all, iv_all = [], []
    total = 0
    for s, mask in _pair_mask_chunks(acc.lo, acc.hi, nxt.lo, nxt.hi):
        iu, iv = np.nonzero(mask)
        total += len(iu)
        if cap is not None and total > cap:
            raise CapExceeded(f"more than {cap} pseudo nodes")
        iu_all.append(iu + s)
        iv_all.append(iv)
    iu = np.concatenate(iu_all) if iu_all else np.empty(0, dtype=np.int64)
    iv = np.concatenate(iv_all) if iv_all else np.empty(0, dtype=np.int64)
    lo = np.maximum(acc.lo[iu], nxt.lo[iv])
    hi = np.minimum(acc.hi[iu], nxt.hi[iv])
    members = np.concatenate([acc.members[iu], nxt.members[iv]], axis=1)
    values = acc.values[iu].copy()
    for j in range(nxt.members.shape[1]):
        values += acc.leaf_values[nxt.members[iv, j]]
    return acc._with(acc.parts + nxt.parts, members, lo, hi, values)


def clique_enum(parts: Sequence[CliqueSet], cap: int | None = None) -> CliqueSet:
    """Fold parts left to right, keeping every nonempty pairwise intersection.

    By the Helly property of boxes, a pseudo node meeting the next part's node
    is a clique of the whole prefix, so the result holds exactly the cliques
    spanning all input parts.
    """
    if not parts:
        raise ValueError("clique_enum needs at least one part")
    acc = parts[0]
    for nxt in parts[1:]:
        acc = merge_pair(acc, nxt, cap)
        if len(acc) == 0:
            break
    if len(acc) == 0 and len(parts) > 1:
        parts_all = tuple(p for part in parts for p in part.parts)
        m = acc.lo.shape[1]
        empty = np.empty((0, m))
        return acc._with(parts_all, np.empty((0, len(parts_all)), dtype=np.int64), empty, empty.copy(), np.empty(0))
    return acc


def bound_naive(parts: Sequence[CliqueSet]) -> float:
    """Sum over parts of the best node value (treats every part pair as fully connected)."""
    total = 0.0
    for p in parts:
        if len(p) == 0:
            return -INF
        total += p.max_value
    return total


def bound_dp(parts: Sequence[CliqueSet]) -> float:
    """Best value of a path picking one node per part, using only consecutive-part edges."""
    if any(len(p) == 0 for p in parts):
        return -INF
    d = parts[0].values.copy()
    for prev, cur in zip(parts, parts[1:]):
        live = np.flatnonzero(d > -INF)
        best = np.full(len(cur), -INF)
        if len(live):
            plo, phi, pd = prev.lo[live], prev.hi[live], d[live]
            for s, mask in _pair_mask_chunks(plo, phi, cur.lo, cur.hi):
                cand = np.where(mask, pd[s : s + mask.shape[0], None], -INF)
                np.maximum(best, cand.max(axis=0), out=best)
        d = np.where(best > -INF, cur.values + best, -INF)
    return float(d.max())


def top_level(num_parts: int, T: int) -> int:
    """Levels of T-way merging needed to reduce ``num_parts`` parts to one."""
    if T < 2:
        raise ValueError("T must be at least 2")
    levels, k = 0, num_parts
    while k > 1:
        k = math.ceil(k / T)
        levels += 1
    return levels


@dataclass(frozen=True)
class BoundResult:
    upper_bound: float
    method: str  # "naive", "dp" or "exact"
    levels_completed: int
    nodes_at_final_level: int
    capped: bool = False


def multi_level_bound(
    parts: Sequence[CliqueSet],
    T: int = 2,
    L: int = 1,
    cap: int | None = DEFAULT_CAP,
    method: str = "naive",
    good_enough: float | None = None,
) -> BoundResult:
    """Anytime upper bound on ``v*``.

    Runs up to ``L`` levels, each replacing consecutive groups of ``T`` parts
    by the cliques spanning them, then bounds what is left with the naive or
    DP relaxation.  A level whose clique enumeration would exceed ``cap``
    pseudo nodes is abandoned as a whole and the bound is taken one level
    lower; it stays valid.  ``L`` beyond the top level is clamped.

    With ``good_enough`` set, the bound is also taken after each level and
    the run stops as soon as it drops to ``good_enough`` or below; deeper
    levels can only tighten it further.
    """
    if method not in ("naive", "dp"):
        raise ValueError(f"unknown bound method {method!r}")
    if L < 0:
        raise ValueError("L must be non-negative")
    parts = list(parts)
    L = min(L, top_level(len(parts), T))
    done, capped = 0, False

    def relaxed(ps):
        return bound_naive(ps) if method == "naive" else bound_dp(ps)

    for _ in range(L):
        if good_enough is not None and len(parts) > 1:
            ub = relaxed(parts)
            if ub <= good_enough:
                return BoundResult(ub, method, done, sum(len(p) for p in parts), False)
        try:
            merged = [clique_enum(parts[i : i + T], cap) for i in range(0, len(parts), T)]
        except CapExceeded:
            capped = True
            break
        parts = merged
        done += 1
        if any(len(p) == 0 for p in parts):
            return BoundResult(-INF, "exact", done, 0, False)
    nodes = sum(len(p) for p in parts)
    if len(parts) == 1:
        return BoundResult(parts[0].max_value, "exact", done, nodes, capped)
    return BoundResult(relaxed(parts), method, done, nodes, capped)


# -- exact search -------------------------------------------------------------


class _Found(Exception):
    pass


class _OutOfBudget(Exception):
    pass


@dataclass(frozen=True)
class ExactResult:
    """Outcome of the exact clique search.

    ``value`` is ``v*`` when ``complete``.  Otherwise it is the best clique
    seen before stopping, either at one beating ``stop_above`` or because
    ``node_limit`` ran out (``exhausted``); it is then only a lower bound.
    """

    value: float
    members: tuple[int, ...] | None
    complete: bool
    nodes_visited: int
    exhausted: bool = False


def exact_max_clique(
    parts: Sequence[CliqueSet], stop_above: float | None = None, node_limit: int | None = None
) -> ExactResult:
    """Branch-and-bound maximum-weight K-clique over singleton or pseudo-node parts.

    Extends a partial clique one part at a time, always picking the part with
    the fewest nodes compatible with the current intersection box and trying
    its nodes best-first.  A branch is cut when some part has no compatible
    node or when the sum of per-part best compatible values cannot beat the
    incumbent.  Clique values are re-summed in member order, so the result is
    bitwise identical to enumerating every tuple.
    """
    parts = list(parts)
    if not parts or any(len(p) == 0 for p in parts):
        return ExactResult(-INF, None, True, 0)
    leaf_values = parts[0].leaf_values
    sizes = [len(p) for p in parts]
    starts = np.concatenate([[0], np.cumsum(sizes)])
    lo_all = np.concatenate([p.lo for p in parts])
    hi_all = np.concatenate([p.hi for p in parts])
    val_all = np.concatenate([p.values for p in parts])
    mem_all = [row for p in parts for row in p.members]
    order_key = [p.parts[0] for p in parts]
    K = len(parts)
    m = lo_all.shape[1]

    best = [-INF, None]
    visited = [0]

    def exact_value(chosen: list[int]) -> float:
        total = 0.0
        for g in sorted(chosen, key=lambda g: order_key[_part_of(g)]):
            for leaf in mem_all[g]:
                total += leaf_values[leaf]
        return total

    def _part_of(g: int) -> int:
        return int(np.searchsorted(starts, g, side="right") - 1)

    def search(remaining: list[int], lo: np.ndarray, hi: np.ndarray, partial: float, chosen: list[int]):
        visited[0] += 1
        if node_limit is not None and visited[0] > node_limit:
            raise _OutOfBudget
        if not remaining:
            val = exact_value(chosen)
            if val > best[0]:
                best[0] = val
                members = tuple(int(l) for g in sorted(chosen, key=lambda g: order_key[_part_of(g)]) for l in mem_all[g])
                best[1] = members
                if stop_above is not None and val > stop_above:
                    raise _Found
            return
        cand = []
        opt = partial
        for k in remaining:
            a, b = starts[k], starts[k + 1]
            if m:
                ok = (np.maximum(lo_all[a:b], lo) < np.minimum(hi_all[a:b], hi)).all(axis=1)
                idx = a + np.flatnonzero(ok)
            else:
                idx = np.arange(a, b)
            if len(idx) == 0:
                return
            opt += val_all[idx].max()
            cand.append((len(idx), k, idx))
        slack = 1e-9 * (1.0 + abs(best[0])) if best[0] > -INF else 0.0
        if opt < best[0] - slack:
            return
        _, k, idx = min(cand, key=lambda c: (c[0], c[1]))
        rest = [r for r in remaining if r != k]
        for g in idx[np.argsort(-val_all[idx], kind="stable")]:
            chosen.append(int(g))
            search(rest, np.maximum(lo, lo_all[g]), np.minimum(hi, hi_all[g]), partial + val_all[g], chosen)
            chosen.pop()

    try:
        search(list(range(K)), np.full(m, -INF), np.full(m, INF), 0.0, [])
    except _Found:
        return ExactResult(best[0], best[1], False, visited[0])
    except _OutOfBudget:
        return ExactResult(best[0], best[1], False, visited[0], exhausted=True)
    return ExactResult(best[0], best[1], True, visited[0])
