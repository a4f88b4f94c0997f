import itertools
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from gen import random_ensemble, random_graph, stump
from oracles import nx_cliques, tuple_oracle
from treeverify import (
    Box,
    Ensemble,
    Interval,
    Internal,
    Leaf,
    Tree,
    ball_box,
    bound_dp,
    bound_naive,
    box_intersect,
    build_level0,
    clique_enum,
    compute_leaf_boxes,
    exact_max_clique,
    multi_level_bound,
    parts_from_boxes,
    point_box_distance,
    top_level,
)
from treeverify.clique import CapExceeded, merge_pair
from treeverify.geometry import INF


# -- level 0 ------------------------------------------------------------------


def test_universal_query_keeps_every_leaf():
    rng = np.random.default_rng(0)
    e = random_ensemble(rng, 3, 2)
    parts = build_level0(e.compiled, Box.universal(2))
    for part, tree in zip(parts, e.trees):
        assert len(part) == len(compute_leaf_boxes(tree, 2))


def test_stump_ball_keeps_only_near_leaf():
    e = Ensemble((stump(0, 0.5, -1.0, 1.0),), 1)
    (part,) = build_level0(e.compiled, ball_box([0.3], 0.1))
    assert part.values.tolist() == [-1.0]


def fig_ensemble():
    """Four hand-built trees over two features."""
    t1 = stump(0, 0.5, -1.0, 2.0)
    t2 = stump(1, 0.5, 1.0, -2.0)
    t3 = Tree({0: Internal(0, 0.2, 1, 2), 1: Leaf(0.5), 2: Internal(1, 0.8, 3, 4), 3: Leaf(-0.5), 4: Leaf(1.5)})
    t4 = Tree({0: Internal(1, 0.3, 1, 2), 1: Internal(0, 0.7, 3, 4), 2: Leaf(-1.0), 3: Leaf(0.25), 4: Leaf(3.0)})
    return Ensemble((t1, t2, t3, t4), 2)


@pytest.mark.parametrize("eps", [0.0, 0.05, 0.15, 0.25, 0.45])
def test_level0_survivors_match_distance_rule(eps):
    e = fig_ensemble()
    x = [0.4, 0.6]
    parts = build_level0(e.compiled, ball_box(x, eps))
    for k, (part, tree) in enumerate(zip(parts, e.trees)):
        expected = [rec.value for rec in compute_leaf_boxes(tree, 2) if point_box_distance(x, rec.box)[1] <= eps]
        assert part.values.tolist() == expected


def test_level0_rejects_bad_query():
    e = fig_ensemble()
    with pytest.raises(ValueError):
        build_level0(e.compiled, Box(2, {0: Interval(1, 0)}))
    with pytest.raises(ValueError):
        build_level0(e.compiled, Box.universal(3))


# -- clique enumeration ------------------------------------------------------------


def test_single_part_is_returned_unchanged():
    groups = [[(Box(1, {0: Interval(0, 1)}), 1.0), (Box(1, {0: Interval(1, 2)}), 2.0)]]
    (part,) = parts_from_boxes(groups, 1)
    assert clique_enum([part]) is part


def test_disjoint_supports_give_complete_bipartite():
    a = [(Box(2, {0: Interval(i, i + 1)}), 1.0) for i in range(3)]
    b = [(Box(2, {1: Interval(i, i + 1)}), 1.0) for i in range(4)]
    assert len(clique_enum(parts_from_boxes([a, b], 2))) == 12


def test_clique_enum_matches_bron_kerbosch():
    rng = np.random.default_rng(5)
    for _ in range(200):
        groups, dim = random_graph(rng)
        got = clique_enum(parts_from_boxes(groups, dim)).member_tuples()
        assert got == nx_cliques(groups)


def test_pseudo_nodes_carry_fold_and_sum():
    rng = np.random.default_rng(6)
    for _ in range(100):
        groups, dim = random_graph(rng, K=4)
        flat = [node for grp in groups for node in grp]
        for node in clique_enum(parts_from_boxes(groups, dim)).nodes():
            box = flat[node.members[0]][0]
            total = 0.0
            for m in node.members:
                box = box_intersect(box, flat[m][0])
                total += flat[m][1]
            assert not node.box.empty and node.box == box
            assert node.value == total


def test_clique_count_within_theorem_bound():
    # leaf boxes of one tree tile the space, which the geometric count relies on
    rng = np.random.default_rng(8)
    for _ in range(100):
        dim = int(rng.integers(1, 4))
        e = random_ensemble(rng, int(rng.integers(1, 5)), dim, max_depth=3)
        parts = build_level0(e.compiled, Box.universal(dim))
        K, n = len(parts), max(len(p) for p in parts)
        assert len(clique_enum(parts)) <= min(n**K, (2 * K * n) ** dim)


def test_cap_is_enforced():
    a = [(Box(2, {0: Interval(i, i + 1)}), 1.0) for i in range(5)]
    b = [(Box(2, {1: Interval(i, i + 1)}), 1.0) for i in range(5)]
    pa, pb = parts_from_boxes([a, b], 2)
    with pytest.raises(CapExceeded):
        merge_pair(pa, pb, cap=24)
    assert len(merge_pair(pa, pb, cap=25)) == 25


def test_concurrent_enumeration_is_consistent():
    rng = np.random.default_rng(9)
    graphs = [random_graph(rng, K=5) for _ in range(20)]
    serial = [clique_enum(parts_from_boxes(g, d)).member_tuples() for g, d in graphs]
    with ThreadPoolExecutor(4) as pool:
        threaded = list(pool.map(lambda gd: clique_enum(parts_from_boxes(*gd)).member_tuples(), graphs))
    assert serial == threaded


# -- bounds ------------------------------------------------------------------


def _const_parts(values_per_part, dim=1):
    groups = [[(Box.universal(dim), v) for v in vals] for vals in values_per_part]
    return parts_from_boxes(groups, dim)


def test_naive_is_sum_of_maxima():
    assert bound_naive(_const_parts([[2.0, 1.0], [-1.0], [0.5, -3.0]])) == 1.5
    assert bound_naive(_const_parts([[2.0, 7.0]])) == 7.0


def test_fully_connected_dp_equals_naive():
    parts = _const_parts([[2.0, 1.0], [-1.0], [0.5, -3.0]])
    assert bound_dp(parts) == bound_naive(parts)


def test_empty_part_bounds():
    parts = _const_parts([[1.0], [2.0]])
    empty = parts[1]._with(parts[1].parts, parts[1].members[:0], parts[1].lo[:0], parts[1].hi[:0], parts[1].values[:0])
    assert bound_naive([parts[0], empty]) == -INF
    assert bound_dp([parts[0], empty]) == -INF


def test_dp_excludes_unreachable_nodes():
    a = [(Box(1, {0: Interval(0, 1)}), 5.0)]
    b = [(Box(1, {0: Interval(2, 3)}), 5.0), (Box(1, {0: Interval(0, 1)}), 1.0)]
    assert bound_dp(parts_from_boxes([a, b], 1)) == 6.0
    c = [(Box(1, {0: Interval(2, 3)}), 5.0)]
    assert bound_dp(parts_from_boxes([a, c], 1)) == -INF


def test_two_parts_dp_is_exact():
    rng = np.random.default_rng(10)
    for _ in range(100):
        groups, dim = random_graph(rng, K=2)
        assert bound_dp(parts_from_boxes(groups, dim)) == tuple_oracle(groups)


@pytest.mark.parametrize("k, t, top", [(1, 2, 0), (2, 2, 1), (4, 2, 2), (5, 2, 3), (20, 2, 5), (20, 3, 3), (20, 4, 3)])
def test_top_level(k, t, top):
    assert top_level(k, t) == top


def test_top_level_rejects_small_t():
    with pytest.raises(ValueError):
        top_level(4, 1)


def test_single_part_is_exact():
    res = multi_level_bound(_const_parts([[1.0, 4.0]]), T=3, L=2)
    assert res.method == "exact" and res.upper_bound == 4.0


def test_bounds_sound_ordered_and_exact_at_top():
    rng = np.random.default_rng(12)
    for _ in range(300):
        groups, dim = random_graph(rng, K=int(rng.integers(1, 7)), max_nodes=5)
        parts = parts_from_boxes(groups, dim)
        v = tuple_oracle(groups)
        assert v <= bound_dp(parts) <= bound_naive(parts)
        for T in (2, 3):
            top = top_level(len(parts), T)
            for method in ("naive", "dp"):
                prev = INF
                for L in range(top + 1):
                    ub = multi_level_bound(parts, T, L, cap=None, method=method).upper_bound
                    assert v <= ub <= prev
                    prev = ub
                assert prev == v


def test_cap_falls_back_to_lower_level():
    rng = np.random.default_rng(13)
    e = random_ensemble(rng, 6, 3, max_depth=4)
    parts = build_level0(e.compiled, Box.universal(3))
    full = multi_level_bound(parts, 2, 3, cap=None)
    l1 = multi_level_bound(parts, 2, 1, cap=None)
    capped = multi_level_bound(parts, 2, 3, cap=1)
    assert capped.capped and capped.levels_completed == 0
    assert capped.upper_bound == multi_level_bound(parts, 2, 0).upper_bound
    assert full.upper_bound <= l1.upper_bound <= capped.upper_bound


def test_level_clamped_and_validated():
    parts = _const_parts([[1.0], [2.0], [3.0]])
    assert multi_level_bound(parts, 2, 10).levels_completed == 2
    with pytest.raises(ValueError):
        multi_level_bound(parts, 2, -1)
    with pytest.raises(ValueError):
        multi_level_bound(parts, 2, 1, method="lp")


def test_early_stop_gives_same_decision():
    rng = np.random.default_rng(14)
    for _ in range(100):
        groups, dim = random_graph(rng, K=5, max_nodes=5)
        parts = parts_from_boxes(groups, dim)
        full = multi_level_bound(parts, 2, 3, cap=None).upper_bound
        quick = multi_level_bound(parts, 2, 3, cap=None, good_enough=0.0).upper_bound
        assert (full <= 0) == (quick <= 0)
        assert quick >= full


# -- exact search --------------------------------------------------------------


def test_exact_search_matches_oracle():
    rng = np.random.default_rng(15)
    for _ in range(300):
        groups, dim = random_graph(rng, K=int(rng.integers(1, 7)), max_nodes=6)
        res = exact_max_clique(parts_from_boxes(groups, dim))
        assert res.complete
        assert res.value == tuple_oracle(groups)


def test_exact_search_witness_is_a_clique():
    rng = np.random.default_rng(16)
    found = 0
    for _ in range(200):
        groups, dim = random_graph(rng, K=4, max_nodes=6)
        flat = [node for grp in groups for node in grp]
        res = exact_max_clique(parts_from_boxes(groups, dim), stop_above=0.0)
        if res.members is None:
            continue
        boxes = [flat[m][0] for m in res.members]
        assert all(box_intersect(a, b) is not None for a, b in itertools.combinations(boxes, 2))
        if not res.complete:
            found += 1
            assert res.value > 0.0
    assert found > 10


def test_exact_search_budget():
    rng = np.random.default_rng(17)
    groups, dim = random_graph(rng, K=6, max_nodes=8)
    res = exact_max_clique(parts_from_boxes(groups, dim), node_limit=3)
    assert res.exhausted and not res.complete
