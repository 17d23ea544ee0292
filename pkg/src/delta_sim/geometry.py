"""Planar geometry kernels: angle wrapping, oriented boxes, polylines.

All functions broadcast over leading dimensions so the metric code can
evaluate every (rollout, timestep, agent) combination in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Boxes overlapping by less than this along their least-penetrating axis
#: are treated as touching, not colliding.
COLLISION_TOLERANCE = 1e-6


def wrap_angle(angle):
    """Wrap angles to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), 2.0 * np.pi)


@dataclass(frozen=True)
class OrientedBox:
    """Rectangle with a center, a heading and full extents in meters."""

    center: tuple[float, float]
    heading: float
    length: float
    width: float

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError("box extents must be positive")

    def corners(self) -> np.ndarray:
        return box_corners(np.asarray(self.center, float), self.heading, self.length, self.width)


def box_axes(heading):
    """Unit longitudinal and lateral axes, each shaped ``heading.shape + (2,)``."""
    heading = np.asarray(heading, dtype=float)
    c, s = np.cos(heading), np.sin(heading)
    return np.stack([c, s], axis=-1), np.stack([-s, c], axis=-1)


def box_corners(center, heading, length, width) -> np.ndarray:
    """Corners in counter-clockwise order, shape ``(..., 4, 2)``."""
    center = np.asarray(center, dtype=float)
    lon, lat = box_axes(heading)
    hl = 0.5 * np.asarray(length, dtype=float)[..., None]
    hw = 0.5 * np.asarray(width, dtype=float)[..., None]
    signs = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])
    return (
        center[..., None, :]
        + signs[:, 0, None] * (hl * lon)[..., None, :]
        + signs[:, 1, None] * (hw * lat)[..., None, :]
    )


def _half_extent(axis, lon, lat, hl, hw):
    return hl * np.abs(np.sum(axis * lon, -1)) + hw * np.abs(np.sum(axis * lat, -1))


def box_penetration(c1, h1, l1, w1, c2, h2, l2, w2) -> np.ndarray:
    """Separating-axis penetration depth of two oriented boxes.

    Returns the smallest projected overlap over the four box axes. A negative
    value is the gap along a separating axis; positive means the boxes
    overlap by at least that much along every axis.
    """
    c1, c2 = np.asarray(c1, float), np.asarray(c2, float)
    lon1, lat1 = box_axes(h1)
    lon2, lat2 = box_axes(h2)
    hl1, hw1 = 0.5 * np.asarray(l1, float), 0.5 * np.asarray(w1, float)
    hl2, hw2 = 0.5 * np.asarray(l2, float), 0.5 * np.asarray(w2, float)
    d = c2 - c1
    depth = None
    for axis in (lon1, lat1, lon2, lat2):
        r1 = _half_extent(axis, lon1, lat1, hl1, hw1)
        r2 = _half_extent(axis, lon2, lat2, hl2, hw2)
        overlap = r1 + r2 - np.abs(np.sum(d * axis, -1))
        depth = overlap if depth is None else np.minimum(depth, overlap)
    return depth


def boxes_collide(c1, h1, l1, w1, c2, h2, l2, w2, tol: float = COLLISION_TOLERANCE):
    return box_penetration(c1, h1, l1, w1, c2, h2, l2, w2) > tol


def point_segment_distance(p, a, b) -> np.ndarray:
    """Euclidean distance from points ``p`` to segments ``a``-``b`` (broadcasting)."""
    p, a, b = np.asarray(p, float), np.asarray(a, float), np.asarray(b, float)
    ab = b - a
    denom = np.sum(ab * ab, -1)
    t = np.clip(np.sum((p - a) * ab, -1) / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


def box_distance(c1, h1, l1, w1, c2, h2, l2, w2) -> np.ndarray:
    """Minimum separation between two oriented boxes, 0 when they overlap.

    For disjoint convex polygons the closest pair always involves a vertex of
    one polygon and an edge of the other, so 32 vertex-edge distances cover it.
    """
    k1 = box_corners(c1, h1, l1, w1)
    k2 = box_corners(c2, h2, l2, w2)
    e1a, e1b = k1, np.roll(k1, -1, axis=-2)
    e2a, e2b = k2, np.roll(k2, -1, axis=-2)
    # (..., 4 vertices, 4 edges)
    d12 = point_segment_distance(k1[..., :, None, :], e2a[..., None, :, :], e2b[..., None, :, :])
    d21 = point_segment_distance(k2[..., :, None, :], e1a[..., None, :, :], e1b[..., None, :, :])
    dist = np.minimum(d12.min(axis=(-1, -2)), d21.min(axis=(-1, -2)))
    overlapping = box_penetration(c1, h1, l1, w1, c2, h2, l2, w2) >= 0.0
    return np.where(overlapping, 0.0, dist)


def point_in_box(points, center, heading, length, width) -> np.ndarray:
    """Containment test of points (..., 2) in a single box (inclusive)."""
    lon, lat = box_axes(heading)
    rel = np.asarray(points, float) - np.asarray(center, float)
    return (np.abs(rel @ lon) <= 0.5 * length) & (np.abs(rel @ lat) <= 0.5 * width)


class PolylineSet:
    """Segments of several polylines prepared for signed distance queries.

    The sign convention is negative on the left of each polyline's traversal
    direction. At a vertex shared by two segments the sign comes from the
    averaged normal of both segments, which keeps the sign consistent no matter
    which of the two equidistant segments is reported as nearest.
    """

    def __init__(self, polylines):
        starts, ends, n_start, n_end, owner = [], [], [], [], []
        for idx, line in enumerate(polylines):
            pts = np.asarray(line, dtype=float)
            if pts.ndim != 2 or len(pts) < 2:
                raise ValueError("polyline needs at least two points")
            seg = np.diff(pts, axis=0)
            seg_len = np.linalg.norm(seg, axis=1)
            if np.any(seg_len == 0):
                raise ValueError("polyline has a zero-length segment")
            normals = np.stack([-seg[:, 1], seg[:, 0]], axis=1) / seg_len[:, None]
            vertex_normals = np.empty((len(pts), 2))
            vertex_normals[0] = normals[0]
            vertex_normals[-1] = normals[-1]
            vertex_normals[1:-1] = normals[:-1] + normals[1:]
            starts.append(pts[:-1])
            ends.append(pts[1:])
            n_start.append(vertex_normals[:-1])
            n_end.append(vertex_normals[1:])
            owner.append(np.full(len(seg), idx))
        if not starts:
            raise ValueError("no polylines")
        self.a = np.concatenate(starts)
        self.b = np.concatenate(ends)
        self.normal_a = np.concatenate(n_start)
        self.normal_b = np.concatenate(n_end)
        self.owner = np.concatenate(owner)
        seg = self.b - self.a
        self.direction = seg / np.linalg.norm(seg, axis=1)[:, None]

    def nearest(self, points):
        """Distance, segment index and projection parameter of the nearest segment."""
        p = np.asarray(points, float)[..., None, :]
        ab = self.b - self.a
        t = np.clip(np.sum((p - self.a) * ab, -1) / np.sum(ab * ab, -1), 0.0, 1.0)
        closest = self.a + t[..., None] * ab
        dist = np.linalg.norm(p - closest, axis=-1)
        idx = np.argmin(dist, axis=-1)
        pick = np.take_along_axis
        return (
            pick(dist, idx[..., None], -1)[..., 0],
            idx,
            pick(t, idx[..., None], -1)[..., 0],
        )

    def signed_distance(self, points) -> np.ndarray:
        points = np.asarray(points, float)
        dist, idx, t = self.nearest(points)
        a, b = self.a[idx], self.b[idx]
        seg = b - a
        cross = seg[..., 0] * (points[..., 1] - a[..., 1]) - seg[..., 1] * (points[..., 0] - a[..., 0])
        at_start = np.sum((points - a) * self.normal_a[idx], -1)
        at_end = np.sum((points - b) * self.normal_b[idx], -1)
        side = np.where(t <= 0.0, at_start, np.where(t >= 1.0, at_end, cross))
        # left of traversal (side > 0) is the drivable side
        return np.where(side > 0, -dist, dist)

    def lateral_offset(self, points):
        """Signed offset (left positive) and direction of the nearest segment."""
        points = np.asarray(points, float)
        dist, idx, t = self.nearest(points)
        a = self.a[idx]
        d = self.direction[idx]
        cross = d[..., 0] * (points[..., 1] - a[..., 1]) - d[..., 1] * (points[..., 0] - a[..., 0])
        return cross, d, idx
