"""Half-open intervals and sparse axis-aligned boxes.

Every interval is the half-open set ``(lower, upper]`` over the extended
reals; a box is a product of such intervals stored sparsely, so a feature
without a stored interval is unconstrained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from collections.abc import Iterable, Mapping, Sequence

import numpy as np

INF = math.inf


class InvalidInput(ValueError):
    """Raised when an operation receives arguments violating its contract."""


@dataclass(frozen=True)
class Interval:
    lower: float = -INF
    upper: float = INF

    @property
    def empty(self) -> bool:
        return not self.lower < self.upper

    @property
    def universal(self) -> bool:
        return self.lower == -INF and self.upper == INF

    def __contains__(self, value: float) -> bool:
        return self.lower < value <= self.upper

    def __repr__(self) -> str:
        return f"({self.lower!r}, {self.upper!r}]"


UNIVERSAL = Interval()


def interval_intersect(a: Interval, b: Interval) -> Interval:
    """Return ``(max(lower), min(upper)]``; the result may be empty."""
    return Interval(max(a.lower, b.lower), min(a.upper, b.upper))


@dataclass(frozen=True, init=False)
class Box:
    """Sparse half-open box in ``dim`` dimensions.

    ``constraints`` is kept canonical: sorted by feature index, universal
    intervals dropped.  Two boxes describing the same set of constraints
    therefore compare equal.
    """

    dim: int
    constraints: tuple[tuple[int, Interval], ...]

    def __init__(self, dim: int, constraints: Mapping[int, Interval] | Iterable[tuple[int, Interval]] = ()):
        items = constraints.items() if isinstance(constraints, Mapping) else constraints
        canon: dict[int, Interval] = {}
        for idx, iv in items:
            idx = int(idx)
            if not 0 <= idx < dim:
                raise InvalidInput(f"feature index {idx} outside dimension {dim}")
            if not isinstance(iv, Interval):
                iv = Interval(*iv)
            if idx in canon:
                iv = interval_intersect(canon[idx], iv)
            canon[idx] = iv
        object.__setattr__(self, "dim", int(dim))
        object.__setattr__(
            self,
            "constraints",
            tuple(sorted((k, v) for k, v in canon.items() if not v.universal)),
        )

    @classmethod
    def _canonical(cls, dim: int, constraints: tuple[tuple[int, Interval], ...]) -> "Box":
        # caller guarantees sorted, in-range, non-universal constraints
        box = object.__new__(cls)
        object.__setattr__(box, "dim", dim)
        object.__setattr__(box, "constraints", constraints)
        return box

    @classmethod
    def universal(cls, dim: int) -> "Box":
        return cls(dim)

    @classmethod
    def from_bounds(cls, lower: Sequence[float], upper: Sequence[float]) -> "Box":
        if len(lower) != len(upper):
            raise InvalidInput("lower and upper bounds differ in length")
        return cls(len(lower), ((i, Interval(float(lo), float(hi))) for i, (lo, hi) in enumerate(zip(lower, upper))))

    @classmethod
    def point(cls, x: Sequence[float]) -> "Box":
        """Degenerate box ``{x}`` expressed in half-open form ``(prev(x), x]``."""
        return cls(len(x), ((i, Interval(math.nextafter(float(v), -INF), float(v))) for i, v in enumerate(x)))

    def get(self, idx: int) -> Interval:
        for k, iv in self.constraints:
            if k == idx:
                return iv
        return UNIVERSAL

    def as_dict(self) -> dict[int, Interval]:
        return dict(self.constraints)

    @property
    def empty(self) -> bool:
        return any(iv.empty for _, iv in self.constraints)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense ``(lower, upper)`` arrays of length ``dim``."""
        lo = np.full(self.dim, -INF)
        hi = np.full(self.dim, INF)
        for k, iv in self.constraints:
            lo[k] = iv.lower
            hi[k] = iv.upper
        return lo, hi

    def contains(self, x: Sequence[float]) -> bool:
        return all(x[k] in iv for k, iv in self.constraints)

    def __repr__(self) -> str:
        body = ", ".join(f"f{k}:{iv!r}" for k, iv in self.constraints)
        return f"Box(dim={self.dim}, {{{body}}})"


def box_intersect(a: Box, b: Box) -> Box | None:
    """Intersect two boxes; ``None`` stands for the empty box."""
    if a.dim != b.dim:
        raise InvalidInput(f"dimension mismatch: {a.dim} vs {b.dim}")
    merged = dict(a.constraints)
    for k, iv in b.constraints:
        if k in merged:
            iv = interval_intersect(merged[k], iv)
            if iv.empty:
                return None
        merged[k] = iv
    if any(iv.empty for iv in merged.values()):
        return None
    return Box._canonical(a.dim, tuple(sorted(merged.items())))


def point_box_distance(x: Sequence[float], b: Box) -> tuple[np.ndarray, float]:
    """Per-coordinate perturbation needed to move ``x`` into ``b`` and its max.

    A coordinate sitting exactly on an open lower bound gets distance 0: the
    distance is an infimum.
    """
    if len(x) != b.dim:
        raise InvalidInput(f"point has dimension {len(x)}, box has {b.dim}")
    if b.empty:
        raise InvalidInput("distance to an empty box is undefined")
    vec = np.zeros(b.dim)
    for t, iv in b.constraints:
        xt = float(x[t])
        if xt > iv.upper:
            vec[t] = xt - iv.upper
        elif xt <= iv.lower:
            vec[t] = iv.lower - xt
    return vec, float(vec.max()) if b.dim else 0.0


def box_intersects_ball(x: Sequence[float], eps: float, b: Box) -> bool:
    if eps < 0:
        raise InvalidInput("eps must be non-negative")
    return point_box_distance(x, b)[1] <= eps


def ball_box(x: Sequence[float], eps: float) -> Box:
    """Half-open box covering the closed l-inf ball around ``x``.

    Both ends are pushed out by two ulps so the box keeps every leaf whose
    infimum distance to ``x`` is at most ``eps`` (boundary-touching leaves
    included) despite rounding in ``x +- eps``.  Keeping extra leaves only
    loosens the bound, so this errs on the safe side.
    """
    if eps < 0:
        raise InvalidInput("eps must be non-negative")
    cons = []
    for i, v in enumerate(x):
        v = float(v)
        lo = math.nextafter(math.nextafter(v - eps, -INF), -INF)
        hi = math.nextafter(math.nextafter(v + eps, INF), INF)
        cons.append((i, Interval(lo, hi)))
    return Box(len(x), cons)
