"""Closed-form capsule geometry.

Capsules (line segment + radius) are the single occupancy primitive for both
robot links and human bodies.  Everything here is exact, allocation-light and
deterministic; the batch variants operate on packed ``(K, 3)`` arrays and are
the building blocks of the per-tick verification loop.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_EPS = 1e-12


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("vector components must be finite")
    return a


@dataclass(frozen=True)
class Segment:
    """Line segment between two points; p1 == p2 denotes a point."""

    p1: np.ndarray
    p2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p1", _as_vec3(self.p1))
        object.__setattr__(self, "p2", _as_vec3(self.p2))


@dataclass(frozen=True)
class Capsule:
    """Cylinder with hemispherical caps: all points within `radius` of `seg`."""

    seg: Segment
    radius: float

    def __post_init__(self):
        if not (np.isfinite(self.radius) and self.radius >= 0.0):
            raise ValueError("capsule radius must be finite and >= 0")

    @property
    def p1(self) -> np.ndarray:
        return self.seg.p1

    @property
    def p2(self) -> np.ndarray:
        return self.seg.p2


def point_segment_distance(p, s: Segment) -> float:
    """Distance from point `p` to segment `s` (exact, degenerate-safe)."""
    p = np.asarray(p, dtype=np.float64)
    d = s.p2 - s.p1
    dd = float(d @ d)
    if dd < _EPS:
        return float(np.linalg.norm(p - s.p1))
    t = float((p - s.p1) @ d) / dd
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(p - (s.p1 + t * d)))


def segment_segment_distance(a: Segment, b: Segment) -> float:
    """Minimum distance between two segments.

    Handles parallel, skew and degenerate (point) cases by minimizing the
    quadratic over the unit square: the unconstrained minimizer if interior,
    otherwise the best of the four clamped edge projections.
    """
    d = segments_distance_batch(
        a.p1[None, :], a.p2[None, :], b.p1[None, :], b.p2[None, :]
    )
    return float(d[0])


def segments_distance_batch(p1, p2, q1, q2) -> np.ndarray:
    """Pairwise segment-segment distances for packed ``(K, 3)`` endpoints."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    u = p2 - p1
    v = q2 - q1
    w0 = p1 - q1
    aa = np.einsum("ij,ij->i", u, u)
    bb = np.einsum("ij,ij->i", u, v)
    cc = np.einsum("ij,ij->i", v, v)
    dd = np.einsum("ij,ij->i", u, w0)
    ee = np.einsum("ij,ij->i", v, w0)
    den = aa * cc - bb * bb

    # Interior critical point of the quadratic (only valid when inside [0,1]^2
    # and the segments are not parallel/degenerate).
    safe_den = np.where(den > _EPS, den, 1.0)
    s_int = (bb * ee - cc * dd) / safe_den
    t_int = (aa * ee - bb * dd) / safe_den
    interior = (den > _EPS) & (s_int >= 0.0) & (s_int <= 1.0) & (t_int >= 0.0) & (t_int <= 1.0)

    safe_aa = np.where(aa > _EPS, aa, 1.0)
    safe_cc = np.where(cc > _EPS, cc, 1.0)

    def piece(s_fix=None, t_fix=None):
        # Fix one parameter, project the other; degenerate axes clamp to 0.
        if t_fix is not None:
            qpt = q1 + t_fix[:, None] * v
            s = np.clip(np.einsum("ij,ij->i", qpt - p1, u) / safe_aa, 0.0, 1.0)
            s = np.where(aa > _EPS, s, 0.0)
            t = t_fix
        else:
            ppt = p1 + s_fix[:, None] * u
            t = np.clip(np.einsum("ij,ij->i", ppt - q1, v) / safe_cc, 0.0, 1.0)
            t = np.where(cc > _EPS, t, 0.0)
            s = s_fix
        diff = (p1 + s[:, None] * u) - (q1 + t[:, None] * v)
        return np.einsum("ij,ij->i", diff, diff)

    k = len(aa)
    zeros = np.zeros(k)
    ones = np.ones(k)
    d2 = np.minimum.reduce([
        piece(t_fix=zeros),
        piece(t_fix=ones),
        piece(s_fix=zeros),
        piece(s_fix=ones),
    ])
    if np.any(interior):
        diff = (p1 + s_int[:, None] * u) - (q1 + t_int[:, None] * v)
        d2_int = np.einsum("ij,ij->i", diff, diff)
        d2 = np.where(interior, np.minimum(d2, d2_int), d2)
    return np.sqrt(d2)


def capsules_intersect(c1: Capsule, c2: Capsule) -> bool:
    """Closed intersection test: touching counts as intersecting."""
    return segment_segment_distance(c1.seg, c2.seg) <= c1.radius + c2.radius


def enclosing_capsule(c1: Capsule, c2: Capsule) -> Capsule:
    """Sound over-approximating enclosure of two capsules.

    Axis runs between the paired endpoint midpoints; the radius covers every
    input endpoint sphere.  Point-to-segment distance is convex along each
    input axis, so covering the endpoints covers the interiors.
    """
    a = 0.5 * (c1.p1 + c2.p1)
    b = 0.5 * (c1.p2 + c2.p2)
    axis = Segment(a, b)
    r = max(
        c1.radius + max(point_segment_distance(c1.p1, axis),
                        point_segment_distance(c1.p2, axis)),
        c2.radius + max(point_segment_distance(c2.p1, axis),
                        point_segment_distance(c2.p2, axis)),
    )
    return Capsule(axis, r)


def capsule_contains_capsule(outer: Capsule, inner: Capsule, slack: float = 0.0) -> bool:
    """Exact containment check (used by occupancy soundness tests)."""
    d = max(point_segment_distance(inner.p1, outer.seg),
            point_segment_distance(inner.p2, outer.seg))
    return d + inner.radius <= outer.radius + slack


def segment_aabb_distance(p1, p2, center, half_extents, iters: int = 80) -> float:
    """Distance from a segment to an axis-aligned box.

    dist(point, box) is convex, so its restriction to the segment is convex in
    the parameter; golden-section search localizes the minimum to ~1e-13.
    """
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    c = np.asarray(center, dtype=np.float64)
    h = np.asarray(half_extents, dtype=np.float64)

    def dist_at(t):
        p = p1 + t * (p2 - p1)
        excess = np.maximum(np.abs(p - c) - h, 0.0)
        return float(np.linalg.norm(excess))

    lo, hi = 0.0, 1.0
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1, f2 = dist_at(x1), dist_at(x2)
    for _ in range(iters):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = dist_at(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = dist_at(x2)
    return min(dist_at(lo), dist_at(hi), f1, f2)


@dataclass
class OccupancySet:
    """A set of capsules covering some actor over a time interval.

    Packed array layout (``(K, 3)`` endpoints, ``(K,)`` radii) keeps the
    verification loop allocation-light; `capsules` materializes objects on
    demand for tests and diagnostics.
    """

    p1: np.ndarray
    p2: np.ndarray
    radii: np.ndarray
    t_begin: float
    t_end: float
    link_index: np.ndarray = field(default=None)
    interval_index: np.ndarray = field(default=None)

    def __post_init__(self):
        self.p1 = np.asarray(self.p1, dtype=np.float64).reshape(-1, 3)
        self.p2 = np.asarray(self.p2, dtype=np.float64).reshape(-1, 3)
        self.radii = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        if self.t_end < self.t_begin:
            raise ValueError("t_end must be >= t_begin")

    def __len__(self) -> int:
        return self.radii.shape[0]

    @property
    def capsules(self) -> list[Capsule]:
        return [Capsule(Segment(a, b), r)
                for a, b, r in zip(self.p1, self.p2, self.radii)]


def occupancy_sets_min_distance(a: OccupancySet, b: OccupancySet) -> float:
    """Minimum surface-to-surface distance between two occupancy sets.

    Negative values measure penetration depth along the axis distance.
    """
    if len(a) == 0 or len(b) == 0:
        return np.inf
    ia, ib = np.meshgrid(np.arange(len(a)), np.arange(len(b)), indexing="ij")
    ia = ia.ravel()
    ib = ib.ravel()
    d = segments_distance_batch(a.p1[ia], a.p2[ia], b.p1[ib], b.p2[ib])
    return float(np.min(d - a.radii[ia] - b.radii[ib]))


def occupancy_sets_disjoint(a: OccupancySet, b: OccupancySet) -> bool:
    """True iff no capsule of `a` intersects any capsule of `b` (closed test)."""
    return occupancy_sets_min_distance(a, b) > 0.0
