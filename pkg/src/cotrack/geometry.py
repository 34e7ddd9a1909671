"""Planar poses, oriented 3D boxes, frame transforms and box overlap measures.

All rotations are yaw-only (about the vertical axis). Every function here is
pure and operates on immutable values, so concurrent use is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(angle):
    """Wrap an angle (scalar or ndarray) into (-pi, pi]."""
    return angle - TWO_PI * np.ceil((angle - math.pi) / TWO_PI)


class Category(Enum):
    CAR = "car"
    VAN = "van"
    BUS = "bus"
    TRUCK = "truck"


# Stable wire-format codes, index == position in this tuple.
CATEGORY_ORDER = (Category.CAR, Category.VAN, Category.BUS, Category.TRUCK)


@dataclass(frozen=True)
class Pose:
    """Rigid planar transform: translation (x, y, z) plus yaw about +z.

    Applying a pose maps points from its source frame into its target frame.
    """

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", float(wrap_angle(self.yaw)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    def apply_to_points(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array of points into the target frame."""
        pts = np.asarray(points, dtype=float)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        out = np.empty_like(pts)
        out[:, 0] = c * pts[:, 0] - s * pts[:, 1] + self.x
        out[:, 1] = s * pts[:, 0] + c * pts[:, 1] + self.y
        out[:, 2] = pts[:, 2] + self.z
        return out

    def apply_to_point(self, x: float, y: float, z: float = 0.0):
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return (c * x - s * y + self.x, s * x + c * y + self.y, z + self.z)


def compose(a: Pose, b: Pose) -> Pose:
    """Chain two poses: the result applies ``b`` first, then ``a``."""
    x, y, z = a.apply_to_point(b.x, b.y, b.z)
    return Pose(x, y, z, a.yaw + b.yaw)


def inverse(p: Pose) -> Pose:
    """Pose undoing ``p``: compose(p, inverse(p)) is the identity."""
    c, s = math.cos(p.yaw), math.sin(p.yaw)
    return Pose(-(c * p.x + s * p.y), -(-s * p.x + c * p.y), -p.z, -p.yaw)


@dataclass(frozen=True)
class Box3D:
    """Oriented cuboid: center (x, y, z), dims (w, l, h), yaw heading.

    Width is across the heading, length along it. Dims must be positive.
    """

    x: float
    y: float
    z: float
    w: float
    l: float
    h: float
    yaw: float = 0.0
    category: Category = Category.CAR

    def __post_init__(self):
        if not (self.w > 0 and self.l > 0 and self.h > 0):
            raise ValueError(f"box dims must be positive, got w={self.w} l={self.l} h={self.h}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z, self.w, self.l, self.h, self.yaw)):
            raise ValueError("box fields must be finite")
        object.__setattr__(self, "yaw", float(wrap_angle(self.yaw)))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def corners_bev(self) -> np.ndarray:
        """Ground-plane footprint corners, (4, 2), counter-clockwise."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        half_l, half_w = 0.5 * self.l, 0.5 * self.w
        local = np.array(
            [[half_l, -half_w], [half_l, half_w], [-half_l, half_w], [-half_l, -half_w]]
        )
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.x, self.y])


def transform_box(b: Box3D, src_to_dst: Pose) -> Box3D:
    """Re-express a box in another frame; dims are unchanged."""
    x, y, z = src_to_dst.apply_to_point(b.x, b.y, b.z)
    return replace(b, x=x, y=y, z=z, yaw=float(wrap_angle(b.yaw + src_to_dst.yaw)))


def center_distance(a: Box3D, b: Box3D) -> float:
    """Euclidean distance between box centers, in meters."""
    return math.dist((a.x, a.y, a.z), (b.x, b.y, b.z))


def center_distance_matrix(rows: Sequence[Box3D], cols: Sequence[Box3D]) -> np.ndarray:
    """Pairwise center distances, shape (len(rows), len(cols))."""
    if not rows or not cols:
        return np.zeros((len(rows), len(cols)))
    a = np.array([[b.x, b.y, b.z] for b in rows])
    c = np.array([[b.x, b.y, b.z] for b in cols])
    diff = a[:, None, :] - c[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def polygon_area(poly: np.ndarray) -> float:
    """Unsigned area of a simple polygon given as (N, 2) vertices."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman intersection of two convex polygons.

    Returns the clipped vertex list, possibly empty. The clip polygon is
    re-wound counter-clockwise if needed; the subject winding is free.
    """
    if _signed_area(clip) < 0:
        clip = clip[::-1]
    output = [tuple(p) for p in subject]
    for k in range(len(clip)):
        if not output:
            break
        a = clip[k]
        b = clip[(k + 1) % len(clip)]
        edge = (b[0] - a[0], b[1] - a[1])
        inp = output
        output = []

        def inside(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0]) >= 0.0

        for i in range(len(inp)):
            cur = inp[i]
            prev = inp[i - 1]
            cur_in = inside(cur)
            prev_in = inside(prev)
            if cur_in:
                if not prev_in:
                    output.append(_segment_line_intersection(prev, cur, a, b))
                output.append(cur)
            elif prev_in:
                output.append(_segment_line_intersection(prev, cur, a, b))
    return np.array(output) if output else np.zeros((0, 2))


def _segment_line_intersection(p, q, a, b):
    # Intersection of segment p-q with the infinite line a-b.
    d1 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
    d2 = (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0])
    t = d1 / (d1 - d2)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Ground-plane IoU of two yaw-rotated box footprints, in [0, 1].

    Degenerate intersections with near-zero area clamp to exactly 0.
    """
    ca, cb = a.corners_bev(), b.corners_bev()
    inter = polygon_area(clip_convex(ca, cb))
    if inter < 1e-12:
        return 0.0
    union = a.w * a.l + b.w * b.l - inter
    if union <= 0.0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle in the ego frame, the evaluation region."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("region must have x_min < x_max and y_min < y_max")

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


_EPS_T = 1e-9


def segments_hit_aabb(starts: np.ndarray, ends: np.ndarray, rect) -> np.ndarray:
    """Whether 2D segments cross the interior of an axis-aligned rectangle.

    ``rect`` is (x_min, y_min, x_max, y_max). Endpoints exactly on the
    boundary do not count as hits; the crossing must be strictly interior to
    the segment (slab test with a small parametric margin).
    """
    starts = np.asarray(starts, dtype=float)
    ends = np.asarray(ends, dtype=float)
    x_min, y_min, x_max, y_max = rect
    lo = np.array([x_min, y_min])
    hi = np.array([x_max, y_max])
    d = ends - starts
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - starts) / d
        t2 = (hi - starts) / d
    t_near = np.minimum(t1, t2)
    t_far = np.maximum(t1, t2)
    # Axis-parallel segments: hit only if within the slab on that axis.
    parallel = d == 0.0
    inside = (starts >= lo) & (starts <= hi)
    t_near[parallel] = np.where(inside[parallel], -np.inf, np.inf)
    t_far[parallel] = np.where(inside[parallel], np.inf, -np.inf)
    enter = t_near.max(axis=1)
    exit_ = t_far.min(axis=1)
    return (enter <= exit_) & (enter < 1.0 - _EPS_T) & (exit_ > _EPS_T)


def segments_hit_box(starts: np.ndarray, ends: np.ndarray, box: Box3D) -> np.ndarray:
    """Whether 2D segments cross a box footprint (oriented rectangle)."""
    starts = np.asarray(starts, dtype=float)
    ends = np.asarray(ends, dtype=float)
    c, s = math.cos(-box.yaw), math.sin(-box.yaw)
    rot = np.array([[c, -s], [s, c]])
    shift = np.array([box.x, box.y])
    local_starts = (starts - shift) @ rot.T
    local_ends = (ends - shift) @ rot.T
    rect = (-0.5 * box.l, -0.5 * box.w, 0.5 * box.l, 0.5 * box.w)
    return segments_hit_aabb(local_starts, local_ends, rect)
