"""Cooperative fusion strategies: raw-point, detection, and feature-grid level.

Four cooperative variants plus a no-cooperation baseline:

* early: transmitted raw points merged into the ego cloud before rasterizing
* late: transmitted boxes merged with ego boxes by gated assignment
* middle_static: the latest transmitted feature grid, warped and fused as-is
* middle_flow: like middle_static but the grid is linearly extrapolated to
  the ego timestamp using its transmitted flow before warping

With zero effective latency middle_flow reduces exactly to middle_static.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from .assignment import solve_assignment
from .channel import Channel, MessageKind
from .detector import Detection
from .errors import ShapeMismatchError
from .geometry import Pose, center_distance_matrix, inverse, transform_box
from .sensing import (
    FeatureGrid,
    GridSpec,
    PointCloud,
    predict_feature,
    rasterize_bev,
)


class FusionKind(Enum):
    VEHICLE_ONLY = "vehicle_only"
    EARLY = "early"
    LATE = "late"
    MIDDLE_STATIC = "middle_static"
    MIDDLE_FLOW = "middle_flow"


class GridReducer(Enum):
    MAX = "max"
    SUM = "sum"


MESSAGE_KIND_FOR_FUSION = {
    FusionKind.EARLY: MessageKind.RAW_POINTS,
    FusionKind.LATE: MessageKind.DETECTIONS,
    FusionKind.MIDDLE_STATIC: MessageKind.FEATURE,
    FusionKind.MIDDLE_FLOW: MessageKind.FEATURE_WITH_FLOW,
}


@dataclass(frozen=True)
class FusionMethod:
    kind: FusionKind
    late_threshold_m: float = 2.0
    reducer: GridReducer = GridReducer.MAX

    def __post_init__(self):
        if self.kind is FusionKind.LATE and self.late_threshold_m <= 0:
            raise ValueError("late-fusion distance threshold must be positive")


def align_grid(f_inf: FeatureGrid, infra_to_ego: Pose, dst_spec: GridSpec) -> FeatureGrid:
    """Resample a grid into the ego frame by inverse warping.

    Each destination cell center maps through the ego-to-infra transform and
    samples the source bilinearly; destinations outside the source footprint
    are zero. At exact cell alignment the copy is lossless.
    """
    ego_to_infra = inverse(infra_to_ego)
    spec = f_inf.spec

    # Pure translation by whole cells between equal-resolution grids is a
    # lossless block copy; the general bilinear path reduces to it exactly,
    # this just skips the arithmetic.
    if ego_to_infra.yaw == 0.0 and spec.cell_size == dst_spec.cell_size:
        col_shift = (dst_spec.x0 + ego_to_infra.x - spec.x0) / spec.cell_size
        row_shift = (dst_spec.y0 + ego_to_infra.y - spec.y0) / spec.cell_size
        if col_shift == round(col_shift) and row_shift == round(row_shift):
            out = np.zeros(dst_spec.shape)
            dc, dr = int(round(col_shift)), int(round(row_shift))
            c_lo = max(0, -dc)
            c_hi = min(dst_spec.cols, spec.cols - dc)
            r_lo = max(0, -dr)
            r_hi = min(dst_spec.rows, spec.rows - dr)
            if c_lo < c_hi and r_lo < r_hi:
                out[r_lo:r_hi, c_lo:c_hi] = f_inf.values[
                    r_lo + dr : r_hi + dr, c_lo + dc : c_hi + dc
                ]
            return FeatureGrid(spec=dst_spec, values=out, timestamp=f_inf.timestamp,
                               frame="vehicle")

    xs, ys = dst_spec.cell_centers()
    c, s = math.cos(ego_to_infra.yaw), math.sin(ego_to_infra.yaw)
    src_x = c * xs - s * ys + ego_to_infra.x
    src_y = s * xs + c * ys + ego_to_infra.y
    u = (src_x - spec.x0) / spec.cell_size - 0.5
    v = (src_y - spec.y0) / spec.cell_size - 0.5
    u0 = np.floor(u).astype(int)
    v0 = np.floor(v).astype(int)
    fu = u - u0
    fv = v - v0

    out = np.zeros(dst_spec.shape)
    src = f_inf.values.reshape(-1, spec.channels)
    for dv in (0, 1):
        for du in (0, 1):
            uu = u0 + du
            vv = v0 + dv
            weight = (fu if du else (1.0 - fu)) * (fv if dv else (1.0 - fv))
            valid = (uu >= 0) & (uu < spec.cols) & (vv >= 0) & (vv < spec.rows)
            weight = np.where(valid, weight, 0.0)
            flat = np.clip(vv, 0, spec.rows - 1) * spec.cols + np.clip(uu, 0, spec.cols - 1)
            out += weight[:, :, None] * src[flat]
    return FeatureGrid(spec=dst_spec, values=out, timestamp=f_inf.timestamp, frame="vehicle")


def fuse_early(
    pc_ego: PointCloud,
    pc_inf: PointCloud,
    infra_to_ego: Pose,
    spec: GridSpec,
    density_cap: float = 10.0,
) -> FeatureGrid:
    """Merge the transmitted cloud into the ego cloud and rasterize once."""
    if len(pc_inf) == 0:
        merged = pc_ego.points
    else:
        moved = pc_inf.points.copy()
        moved[:, :3] = infra_to_ego.apply_to_points(pc_inf.points[:, :3])
        merged = np.concatenate([pc_ego.points, moved], axis=0) if len(pc_ego) else moved
    cloud = PointCloud(points=merged, frame="vehicle", timestamp=pc_ego.timestamp)
    return rasterize_bev(cloud, spec, density_cap=density_cap)


def fuse_middle(f_ego: FeatureGrid, f_inf_aligned: FeatureGrid, reducer: GridReducer) -> FeatureGrid:
    """Elementwise max or sum of two ego-frame grids with equal specs."""
    if f_ego.spec != f_inf_aligned.spec:
        raise ShapeMismatchError("middle fusion requires identical grid specs")
    if reducer is GridReducer.MAX:
        values = np.maximum(f_ego.values, f_inf_aligned.values)
    else:
        values = f_ego.values + f_inf_aligned.values
    return FeatureGrid(spec=f_ego.spec, values=values, timestamp=f_ego.timestamp, frame=f_ego.frame)


def fuse_late(
    dets_ego: Sequence[Detection],
    dets_inf_ego_frame: Sequence[Detection],
    threshold_m: float,
) -> List[Detection]:
    """Merge two ego-frame detection lists by gated optimal assignment.

    Matched pairs (center distance <= threshold) merge into one box whose
    center and dims are score-weighted averages, yaw comes from the
    higher-score member, and the score is the max. Unmatched detections on
    either side pass through. Output order: ego-list order with matched
    entries replaced by their merge, then leftover transmitted detections.
    """
    if not dets_ego:
        return list(dets_inf_ego_frame)
    if not dets_inf_ego_frame:
        return list(dets_ego)
    cost = center_distance_matrix([d.box for d in dets_ego], [d.box for d in dets_inf_ego_frame])
    pairs = solve_assignment(cost)
    matched_inf = set()
    out: List[Detection] = []
    merged_for_ego = {}
    for r, c in pairs:
        if cost[r, c] <= threshold_m:
            merged_for_ego[r] = c
            matched_inf.add(c)
    for i, d in enumerate(dets_ego):
        if i in merged_for_ego:
            out.append(_merge_pair(d, dets_inf_ego_frame[merged_for_ego[i]]))
        else:
            out.append(d)
    for j, d in enumerate(dets_inf_ego_frame):
        if j not in matched_inf:
            out.append(d)
    return out


def _merge_pair(a: Detection, b: Detection) -> Detection:
    wa, wb = a.score, b.score
    if wa + wb <= 0:
        wa = wb = 1.0
    total = wa + wb

    def avg(fa, fb):
        return (wa * fa + wb * fb) / total

    lead = a if a.score >= b.score else b
    box = replace(
        a.box,
        x=avg(a.box.x, b.box.x),
        y=avg(a.box.y, b.box.y),
        z=avg(a.box.z, b.box.z),
        w=avg(a.box.w, b.box.w),
        l=avg(a.box.l, b.box.l),
        h=avg(a.box.h, b.box.h),
        yaw=lead.box.yaw,
        category=lead.box.category,
    )
    return Detection(box=box, score=max(a.score, b.score))


@dataclass
class EgoInputs:
    """Per-frame vehicle-side products handed to the fusion stage."""

    cloud: PointCloud  # ego frame
    grid: FeatureGrid  # ego frame
    detections: List[Detection]  # ego frame
    grid_spec: GridSpec
    density_cap: float = 10.0


@dataclass
class FusionOutput:
    """Either a fused grid (grid-level strategies) or fused detections."""

    grid: Optional[FeatureGrid] = None
    detections: Optional[List[Detection]] = None
    used_fallback: bool = False
    tau_s: float = 0.0


def cooperative_feature(
    fusion: FusionMethod,
    channel: Optional[Channel],
    t_v: float,
    ego: EgoInputs,
    infra_to_ego: Pose,
) -> FusionOutput:
    """Produce the fused representation for one ego frame.

    Strategies consuming the channel use the latest arrived message; the
    extrapolating variant predicts the grid forward by tau = t_v minus the
    message capture time before warping. When nothing has arrived yet the
    frame falls back to vehicle-only and is flagged.
    """
    if fusion.kind is FusionKind.VEHICLE_ONLY:
        return FusionOutput(grid=ego.grid, detections=ego.detections)

    msg = channel.latest(t_v) if channel is not None else None
    if msg is None:
        if fusion.kind is FusionKind.LATE:
            return FusionOutput(detections=list(ego.detections), used_fallback=True)
        return FusionOutput(grid=ego.grid, used_fallback=True)

    tau = t_v - msg.t_send
    if fusion.kind is FusionKind.EARLY:
        grid = fuse_early(ego.cloud, msg.content, infra_to_ego, ego.grid_spec, ego.density_cap)
        return FusionOutput(grid=grid, tau_s=tau)
    if fusion.kind is FusionKind.LATE:
        moved = [replace(d, box=transform_box(d.box, infra_to_ego)) for d in msg.content]
        return FusionOutput(
            detections=fuse_late(ego.detections, moved, fusion.late_threshold_m), tau_s=tau
        )
    if fusion.kind is FusionKind.MIDDLE_STATIC:
        aligned = align_grid(msg.content, infra_to_ego, ego.grid_spec)
        return FusionOutput(grid=fuse_middle(ego.grid, aligned, fusion.reducer), tau_s=tau)
    if fusion.kind is FusionKind.MIDDLE_FLOW:
        f0, f1 = msg.content
        predicted = predict_feature(f0, f1, tau)
        aligned = align_grid(predicted, infra_to_ego, ego.grid_spec)
        return FusionOutput(grid=fuse_middle(ego.grid, aligned, fusion.reducer), tau_s=tau)
    raise ValueError(f"unknown fusion kind {fusion.kind}")
