"""Bounded regions (interval, axis-aligned box, ball) with membership,
boundary-distance and boundary-crossing queries.

Regions are open: ``contains`` is strict-interior membership, so a point on
the boundary counts as having exited.  All region objects are immutable and
safe to share between workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Interval",
    "Box",
    "Ball",
    "Region",
    "DimensionMismatchError",
    "dimension",
    "contains",
    "contains_many",
    "closure_contains",
    "boundary_distance",
    "boundary_distance_many",
    "bounding_box",
    "boundary_crossing",
    "nearest_boundary_point",
    "region_from_dict",
    "region_to_dict",
]


class DimensionMismatchError(ValueError):
    """Point dimension does not match the region dimension."""


@dataclass(frozen=True)
class Interval:
    """Open interval (lo, hi) in one dimension."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"interval requires lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def dim(self) -> int:
        return 1


@dataclass(frozen=True)
class Box:
    """Open axis-aligned box, product of (lo[j], hi[j])."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(x) for x in self.lo))
        object.__setattr__(self, "hi", tuple(float(x) for x in self.hi))
        if len(self.lo) != len(self.hi) or not self.lo:
            raise ValueError("box lo/hi must be non-empty vectors of equal length")
        for a, b in zip(self.lo, self.hi):
            if not a < b:
                raise ValueError(f"box requires lo < hi componentwise, got {a} >= {b}")

    @property
    def dim(self) -> int:
        return len(self.lo)


@dataclass(frozen=True)
class Ball:
    """Open ball of given center and radius, dimension >= 2.

    One-dimensional balls are disallowed; use Interval so each region has a
    single representation.
    """

    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(x) for x in self.center))
        if len(self.center) < 2:
            raise ValueError("ball requires dimension >= 2; use Interval in 1D")
        if not self.radius > 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")

    @property
    def dim(self) -> int:
        return len(self.center)


Region = Interval | Box | Ball


def dimension(region: Region) -> int:
    return region.dim


def _as_points(region: Region, points) -> np.ndarray:
    """Coerce to an (m, n) float array, checking n against the region."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[-1] != region.dim:
        raise DimensionMismatchError(
            f"point dimension {pts.shape[-1]} does not match region dimension {region.dim}"
        )
    return pts


def contains_many(region: Region, points) -> np.ndarray:
    """Strict-interior membership for an (m, n) array of points."""
    pts = _as_points(region, points)
    if isinstance(region, Interval):
        x = pts[:, 0]
        return (x > region.lo) & (x < region.hi)
    if isinstance(region, Box):
        lo = np.asarray(region.lo)
        hi = np.asarray(region.hi)
        return np.all((pts > lo) & (pts < hi), axis=1)
    c = np.asarray(region.center)
    r2 = np.sum((pts - c) ** 2, axis=1)
    return r2 < region.radius**2


def contains(region: Region, point) -> bool:
    """True iff the point is strictly inside the open region."""
    return bool(contains_many(region, point)[0])


def closure_contains(region: Region, point) -> bool:
    """Membership in the closure (interior plus boundary)."""
    pts = _as_points(region, point)
    if isinstance(region, Interval):
        x = pts[0, 0]
        return region.lo <= x <= region.hi
    if isinstance(region, Box):
        return bool(
            np.all((pts[0] >= np.asarray(region.lo)) & (pts[0] <= np.asarray(region.hi)))
        )
    r2 = float(np.sum((pts[0] - np.asarray(region.center)) ** 2))
    return r2 <= region.radius**2


def boundary_distance_many(region: Region, points) -> np.ndarray:
    """Exact Euclidean distance to the boundary for (m, n) points."""
    pts = _as_points(region, points)
    if isinstance(region, Interval):
        x = pts[:, 0]
        return np.minimum(np.abs(x - region.lo), np.abs(x - region.hi))
    if isinstance(region, Box):
        lo = np.asarray(region.lo)
        hi = np.asarray(region.hi)
        inside = np.all((pts >= lo) & (pts <= hi), axis=1)
        # Inside the closed box: nearest face along some axis.
        face = np.min(np.minimum(pts - lo, hi - pts), axis=1)
        # Outside: distance to the closed box equals distance to its boundary.
        gap = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
        outer = np.sqrt(np.sum(gap**2, axis=1))
        return np.where(inside, np.abs(face), outer)
    c = np.asarray(region.center)
    r = np.sqrt(np.sum((pts - c) ** 2, axis=1))
    return np.abs(r - region.radius)


def boundary_distance(region: Region, point) -> float:
    return float(boundary_distance_many(region, point)[0])


def bounding_box(region: Region) -> tuple[np.ndarray, np.ndarray]:
    """Finite axis-aligned bounding box (lo, hi) as n-vectors."""
    if isinstance(region, Interval):
        return np.array([region.lo]), np.array([region.hi])
    if isinstance(region, Box):
        return np.asarray(region.lo, dtype=float), np.asarray(region.hi, dtype=float)
    c = np.asarray(region.center, dtype=float)
    return c - region.radius, c + region.radius


# Relative inflation applied when snapping onto a curved boundary, so the
# snapped point never rounds back into the open region.
_BALL_SNAP_INFLATE = 1.0 + 2.0**-50


def boundary_crossing(region: Region, p_inside, p_outside):
    """First boundary crossing of the segments p_inside[i] -> p_outside[i].

    Each p_inside row must lie in the open region and each p_outside row in
    its complement (closure boundary included).  Returns ``(theta, point)``
    where theta in (0, 1] is the crossing parameter and point lies on the
    boundary (snapped exactly onto faces for Interval/Box, fractionally
    outside the sphere for Ball so that ``contains`` is false).
    """
    p0 = _as_points(region, p_inside).astype(float)
    p1 = _as_points(region, p_outside).astype(float)
    if p0.shape != p1.shape:
        raise ValueError("p_inside and p_outside must have matching shapes")
    d = p1 - p0

    if isinstance(region, (Interval, Box)):
        if isinstance(region, Interval):
            lo = np.array([region.lo])
            hi = np.array([region.hi])
        else:
            lo = np.asarray(region.lo)
            hi = np.asarray(region.hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hi = np.where(p1 >= hi, (hi - p0) / d, np.inf)
            t_lo = np.where(p1 <= lo, (lo - p0) / d, np.inf)
        t_axis = np.minimum(t_hi, t_lo)
        theta = np.min(t_axis, axis=1)
        axis = np.argmin(t_axis, axis=1)
        point = p0 + theta[:, None] * d
        rows = np.arange(point.shape[0])
        hit_hi = t_hi[rows, axis] <= t_lo[rows, axis]
        point[rows, axis] = np.where(hit_hi, hi[axis], lo[axis])
        return theta, point

    c = np.asarray(region.center)
    q = p0 - c
    a = np.sum(d**2, axis=1)
    b = np.sum(d * q, axis=1)
    c0 = np.sum(q**2, axis=1) - region.radius**2
    disc = np.maximum(b**2 - a * c0, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = (-b + np.sqrt(disc)) / a
    theta = np.clip(theta, 0.0, 1.0)
    point = p0 + theta[:, None] * d
    rel = point - c
    norm = np.sqrt(np.sum(rel**2, axis=1))
    scale = region.radius * _BALL_SNAP_INFLATE / norm
    point = c + rel * scale[:, None]
    return theta, point


def nearest_boundary_point(region: Region, points) -> np.ndarray:
    """Closest boundary point for each (interior) input point."""
    pts = _as_points(region, points).astype(float)
    if isinstance(region, Interval):
        x = pts[:, 0]
        near_lo = np.abs(x - region.lo) <= np.abs(x - region.hi)
        return np.where(near_lo, region.lo, region.hi)[:, None]
    if isinstance(region, Box):
        lo = np.asarray(region.lo)
        hi = np.asarray(region.hi)
        out = pts.copy()
        gaps = np.minimum(pts - lo, hi - pts)
        axis = np.argmin(gaps, axis=1)
        rows = np.arange(pts.shape[0])
        to_lo = (pts[rows, axis] - lo[axis]) <= (hi[axis] - pts[rows, axis])
        out[rows, axis] = np.where(to_lo, lo[axis], hi[axis])
        return out
    c = np.asarray(region.center)
    rel = pts - c
    norm = np.sqrt(np.sum(rel**2, axis=1))
    # Center maps to an arbitrary boundary point; pick the +x pole.
    safe = norm > 0
    out = np.empty_like(pts)
    out[safe] = c + rel[safe] * (region.radius * _BALL_SNAP_INFLATE / norm[safe])[:, None]
    if not np.all(safe):
        pole = np.array(c)
        pole[0] += region.radius * _BALL_SNAP_INFLATE
        out[~safe] = pole
    return out


def region_from_dict(decl: dict) -> Region:
    """Build a region from its scenario-file declaration."""
    if not isinstance(decl, dict) or "kind" not in decl:
        raise ValueError("region declaration must be a table with a 'kind' key")
    kind = decl["kind"]
    keys = set(decl) - {"kind"}
    if kind == "interval":
        if keys != {"lo", "hi"}:
            raise ValueError("interval region requires exactly lo, hi")
        return Interval(float(decl["lo"]), float(decl["hi"]))
    if kind == "box":
        if keys != {"lo", "hi"}:
            raise ValueError("box region requires exactly lo, hi")
        return Box(tuple(decl["lo"]), tuple(decl["hi"]))
    if kind == "ball":
        if keys != {"center", "radius"}:
            raise ValueError("ball region requires exactly center, radius")
        return Ball(tuple(decl["center"]), float(decl["radius"]))
    raise ValueError(f"unknown region kind {kind!r}")


def region_to_dict(region: Region) -> dict:
    """Inverse of region_from_dict, for report metadata."""
    if isinstance(region, Interval):
        return {"kind": "interval", "lo": region.lo, "hi": region.hi}
    if isinstance(region, Box):
        return {"kind": "box", "lo": list(region.lo), "hi": list(region.hi)}
    return {"kind": "ball", "center": list(region.center), "radius": region.radius}
