"""Certified robustness radii and general box queries for tree ensembles."""

from __future__ import annotations

import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

from .clique import (
    DEFAULT_CAP,
    BoundResult,
    build_level0,
    exact_max_clique,
    multi_level_bound,
)
from .ensemble import Ensemble, extract_binary_pair
from .geometry import INF, Box, Interval, ball_box, box_intersect


@dataclass(frozen=True)
class VerifyConfig:
    T: int = 2
    L: int = 1
    method: str = "naive"
    search_steps: int = 10
    eps_max: float = 1.0
    cap: int | None = DEFAULT_CAP
    mode: str = "bound"
    # search nodes spent looking for a concrete flip before bounding; 0 = off
    witness_budget: int = 20_000

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("T must be at least 2")
        if self.L < 0:
            raise ValueError("L must be non-negative")
        if self.search_steps < 1:
            raise ValueError("search_steps must be at least 1")
        if not self.eps_max > 0:
            raise ValueError("eps_max must be positive")
        if self.method not in ("naive", "dp"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.witness_budget < 0:
            raise ValueError("witness_budget must be non-negative")
        if self.mode not in ("bound", "exact"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class Decision:
    """Answer to "can the prediction flip inside the query region?".

    ``upper_bound`` bounds the attacker's objective: the margin when the
    original class is negative, the negated margin when it is positive.
    ``robust`` implies ``upper_bound <= 0``.  In exact mode a flip is proven
    by a concrete clique; then ``upper_bound`` is inf and ``witness_value``
    holds that clique's objective.
    """

    robust: bool
    upper_bound: float
    bound: BoundResult | None = None
    witness_value: float | None = None
    witness: tuple[int, ...] | None = None


@dataclass
class TraceStep:
    eps: float
    upper_bound: float
    robust: bool
    witness_value: float | None = None


@dataclass
class VerificationReport:
    example_id: int
    predicted: int
    label: int | None
    correct: bool
    radius: float
    saturated: bool = False
    target: int | None = None
    trace: list[TraceStep] = field(default_factory=list)
    wall_time: float = 0.0
    per_target: dict[int, float] | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("wall_time")
        return d


def _objective_sign(y0: int) -> float:
    """Leaf-value multiplier turning "prediction flips" into "objective > 0"."""
    if y0 not in (-1, 1):
        raise ValueError("binary decisions need y0 in {-1, +1}")
    return 1.0 if y0 == -1 else -1.0


def _robust(objective_ub: float, y0: int) -> bool:
    # class +1 needs margin > 0, so a flip from -1 needs objective > 0 and a
    # flip from +1 needs objective >= 0
    return bool(objective_ub <= 0 if y0 == -1 else objective_ub < 0)


def decide_box_query(ensemble: Ensemble, box: Box, y0: int, cfg: VerifyConfig = VerifyConfig()) -> Decision:
    """Can some input in ``box`` be classified differently from ``y0`` (a -1/+1 sign)?

    In bound mode a short exact search for a flipping clique runs first
    (``cfg.witness_budget`` nodes).  Any bound is at least the value of such
    a clique, so finding one settles the query as not robust at every level.
    """
    if not ensemble.binary:
        raise ValueError("box queries need a binary ensemble; use extract_binary_pair")
    sign = _objective_sign(y0)
    base = sign * ensemble.base_margin
    # largest raw objective still counted as robust
    target = -base if y0 == -1 else math.nextafter(-base, -INF)
    parts = build_level0(ensemble.compiled, box, sign)
    if cfg.mode == "exact":
        res = exact_max_clique(parts, stop_above=target)
        if res.complete:
            ub = res.value + base
            return Decision(_robust(ub, y0), ub, BoundResult(res.value, "exact", 0, 0), witness=res.members)
        return Decision(False, INF, None, witness_value=float(res.value + base), witness=res.members)
    if cfg.witness_budget:
        # only a found flip is used; robustness is always left to the bound
        res = exact_max_clique(parts, stop_above=target, node_limit=cfg.witness_budget)
        if res.value > target:
            return Decision(False, INF, None, witness_value=float(res.value + base), witness=res.members)
    bound = multi_level_bound(parts, cfg.T, cfg.L, cfg.cap, cfg.method, good_enough=target)
    ub = bound.upper_bound + base
    return Decision(_robust(ub, y0), ub, bound)


def decide_at_eps(ensemble: Ensemble, x: Sequence[float], eps: float, cfg: VerifyConfig = VerifyConfig(), y0: int | None = None) -> Decision:
    """Decide robustness of ``x`` within the closed l-inf ball of radius ``eps``.

    ``y0`` defaults to the model's own prediction at ``x``.
    """
    if y0 is None:
        y0 = 1 if ensemble.predict(x) == 1 else -1
    return decide_box_query(ensemble, ball_box(x, eps), y0, cfg)


def _search(decide, hi_max: float, steps: int) -> tuple[float, bool, list[TraceStep]]:
    """Bisection for the largest radius ``decide`` certifies, on ``[0, hi_max]``.

    The first probe is ``hi_max`` itself; after that ``steps`` midpoint probes
    follow, so the answer lies within ``hi_max / 2**steps`` below the
    decision boundary.
    """
    trace = []

    def probe(eps):
        d = decide(eps)
        trace.append(TraceStep(eps, d.upper_bound, d.robust, d.witness_value))
        return d.robust

    if probe(hi_max):
        return hi_max, True, trace
    lo, hi = 0.0, hi_max
    for _ in range(steps):
        mid = (lo + hi) / 2
        if probe(mid):
            lo = mid
        else:
            hi = mid
    return lo, False, trace


def _binary_label(label) -> int | None:
    if label is None:
        return None
    label = int(label)
    if label == -1:
        return 0
    if label not in (0, 1):
        raise ValueError(f"binary label must be 0/1 or -1/+1, got {label}")
    return label


def certify_radius(
    ensemble: Ensemble,
    x: Sequence[float],
    cfg: VerifyConfig = VerifyConfig(),
    label: int | None = None,
    example_id: int = 0,
) -> VerificationReport:
    """Binary-search the largest l-inf radius certified robust for a binary model.

    A misclassified example gets radius 0 without any probe.
    """
    t0 = time.perf_counter()
    pred = ensemble.predict(x)
    label = _binary_label(label)
    correct = label is None or label == pred
    rep = VerificationReport(example_id, pred, label, correct, 0.0)
    if correct:
        y0 = 1 if pred == 1 else -1
        rep.radius, rep.saturated, rep.trace = _search(
            lambda eps: decide_at_eps(ensemble, x, eps, cfg, y0), cfg.eps_max, cfg.search_steps
        )
    rep.wall_time = time.perf_counter() - t0
    return rep


def certify_untargeted_multiclass(
    ensemble: Ensemble,
    x: Sequence[float],
    cfg: VerifyConfig = VerifyConfig(),
    label: int | None = None,
    example_id: int = 0,
) -> VerificationReport:
    """Minimum over target classes of the pairwise certified radius."""
    if ensemble.binary:
        raise ValueError("multiclass certification needs more than two classes")
    t0 = time.perf_counter()
    pred = ensemble.predict(x)
    correct = label is None or int(label) == pred
    rep = VerificationReport(example_id, pred, None if label is None else int(label), correct, 0.0)
    if correct:
        rep.per_target = {}
        best = None
        for c2 in range(ensemble.num_classes):
            if c2 == pred:
                continue
            pair = extract_binary_pair(ensemble, pred, c2)
            if pair.predict(x) != 1:
                r, sat, trace = 0.0, False, []
            else:
                r, sat, trace = _search(
                    lambda eps: decide_at_eps(pair, x, eps, cfg, 1), cfg.eps_max, cfg.search_steps
                )
            rep.per_target[c2] = r
            if best is None or r < best[0]:
                best = (r, sat, c2, trace)
        rep.radius, rep.saturated, rep.target, rep.trace = best
    rep.wall_time = time.perf_counter() - t0
    return rep


def certify(ensemble: Ensemble, x, cfg: VerifyConfig = VerifyConfig(), label=None, example_id: int = 0) -> VerificationReport:
    if ensemble.binary:
        return certify_radius(ensemble, x, cfg, label, example_id)
    return certify_untargeted_multiclass(ensemble, x, cfg, label, example_id)


def iter_certify(
    ensemble: Ensemble,
    X: Sequence[Sequence[float]],
    labels: Sequence[int] | None = None,
    cfg: VerifyConfig = VerifyConfig(),
    threads: int = 1,
) -> Iterator[VerificationReport]:
    """Yield reports in completion order; ``example_id`` gives the input position."""
    labels = [None] * len(X) if labels is None else labels
    ensemble.compiled  # build once before workers share it
    if threads <= 1:
        for i, (x, y) in enumerate(zip(X, labels)):
            yield certify(ensemble, x, cfg, y, i)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(certify, ensemble, x, cfg, y, i) for i, (x, y) in enumerate(zip(X, labels))]
        for fut in as_completed(futures):
            yield fut.result()


def certify_batch(ensemble, X, labels=None, cfg: VerifyConfig = VerifyConfig(), threads: int = 1) -> list[VerificationReport]:
    return sorted(iter_certify(ensemble, X, labels, cfg, threads), key=lambda r: r.example_id)


# -- general box queries ---------------------------------------------------------


def _domain_interval(domain, i: int) -> Interval:
    if domain is None:
        return Interval()
    lo, hi = domain[i]
    return Interval(math.nextafter(float(lo), -INF), float(hi))


def single_feature_box(x: Sequence[float], i: int, eps: float, domain=None) -> Box:
    """All features pinned to ``x`` except feature ``i``, free within ``eps`` (clipped to the domain)."""
    xi = float(x[i])
    free = Interval(
        math.nextafter(math.nextafter(xi - eps, -INF), -INF),
        math.nextafter(math.nextafter(xi + eps, INF), INF),
    )
    dom = _domain_interval(domain, i)
    free = Interval(max(free.lower, dom.lower), min(free.upper, dom.upper))
    cons = {j: Interval(math.nextafter(float(v), -INF), float(v)) for j, v in enumerate(x) if j != i}
    cons[i] = free
    return Box(len(x), cons)


def feature_importance(
    ensemble: Ensemble,
    x: Sequence[float],
    y0: int | None = None,
    domain: Sequence[tuple[float, float]] | None = None,
    cfg: VerifyConfig = VerifyConfig(),
) -> list[float]:
    """Per-feature certified radius when only that feature is perturbed.

    With a domain, the search for feature ``i`` runs over ``[0, hi_i - lo_i]``
    and a feature no perturbation inside the domain can exploit saturates at
    that width.  Without one it runs over ``[0, eps_max]``.
    """
    if y0 is None:
        y0 = 1 if ensemble.predict(x) == 1 else -1
    out = []
    for i in range(len(x)):
        width = cfg.eps_max if domain is None else float(domain[i][1] - domain[i][0])
        r, _, _ = _search(
            lambda eps: decide_box_query(ensemble, single_feature_box(x, i, eps, domain), y0, cfg),
            width,
            cfg.search_steps,
        )
        out.append(r)
    return out


def free_features_box(x: Sequence[float], fixed: set[int], domain=None) -> Box:
    cons = {}
    for j, v in enumerate(x):
        cons[j] = Interval(math.nextafter(float(v), -INF), float(v)) if j in fixed else _domain_interval(domain, j)
    return Box(len(x), cons)


def find_anchors(
    ensemble: Ensemble,
    x: Sequence[float],
    y0: int | None = None,
    domain=None,
    cfg: VerifyConfig = VerifyConfig(),
    importance: Sequence[float] | None = None,
) -> list[int]:
    """Greedy anchor set: fix features most-important first until the rest cannot flip the prediction."""
    if y0 is None:
        y0 = 1 if ensemble.predict(x) == 1 else -1
    if importance is None:
        importance = feature_importance(ensemble, x, y0, domain, cfg)
    order = sorted(range(len(x)), key=lambda i: (importance[i], i))
    fixed: list[int] = []
    for i in [None] + order:
        if i is not None:
            fixed.append(i)
        if decide_box_query(ensemble, free_features_box(x, set(fixed), domain), y0, cfg).robust:
            return fixed
    return fixed


# -- brute-force reference -------------------------------------------------------


class OracleLimitExceeded(RuntimeError):
    pass


def exact_vstar_oracle(ensemble: Ensemble, query_box: Box, limit: int = 10**7, sign: float = 1.0) -> float:
    """Maximum leaf-value sum over valid leaf tuples, by enumerating all of them.

    Uses only sparse boxes from the geometry module.  A tuple is valid when its
    boxes meet pairwise and the fold of all of them is nonempty; both checks
    run so a disagreement surfaces as an error.  Returns -inf if no tuple is
    valid.  Values are summed in tree order.
    """
    from .single_tree import compute_leaf_boxes

    survivors = []
    for tree in ensemble.trees:
        keep = []
        for rec in compute_leaf_boxes(tree, ensemble.dim):
            clipped = box_intersect(rec.box, query_box)
            if clipped is not None:
                keep.append((clipped, sign * rec.value))
        survivors.append(keep)
    count = math.prod(len(s) for s in survivors)
    if count > limit:
        raise OracleLimitExceeded(f"{count} tuples exceed the limit of {limit}")
    best = -INF
    for combo in itertools.product(*survivors):
        pairwise = all(box_intersect(a[0], b[0]) is not None for a, b in itertools.combinations(combo, 2))
        acc = combo[0][0] if combo else None
        for b, _ in combo[1:]:
            acc = box_intersect(acc, b)
            if acc is None:
                break
        if pairwise != (acc is not None):
            raise AssertionError("pairwise and K-way intersection disagree")
        if pairwise:
            total = 0.0
            for _, v in combo:
                total += v
            best = max(best, total)
    return best
