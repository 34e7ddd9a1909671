"""Deterministic BEV detection head: fused feature grid in, scored boxes out.

A learned detector cannot be reproduced at desk scale, so this module fits
oriented boxes to thresholded connected components of the density channel.
The substitution keeps the pipeline contract (grid in, scored boxes out) so
fusion and latency effects stay measurable end to end; see the README for
the full rationale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError
from .geometry import Box3D, Category
from .sensing import DENSITY_CHANNEL, FeatureGrid, HEIGHT_CHANNEL


@dataclass(frozen=True)
class Detection:
    """A detected box with a confidence score in [0, 1]."""

    box: Box3D
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class DetectParams:
    tau: float = 0.15  # density threshold
    min_cells: int = 3  # smaller components are discarded
    min_dim_m: float = 0.5
    max_dim_m: float = 15.0
    max_height_m: float = 5.0

    def __post_init__(self):
        if self.tau < 0 or self.min_cells < 1:
            raise ConfigurationError("invalid detection parameters")


_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


def detect(g: FeatureGrid, params: DetectParams = DetectParams()) -> List[Detection]:
    """Fit one oriented box per connected blob of the density channel.

    Cells with density above ``params.tau`` are labeled with 8-connectivity.
    Per component, the box center is the density-weighted centroid of cell
    centers, yaw is the principal axis of the weighted scatter folded into
    (-pi/2, pi/2], and the planar dims are the extents along the principal
    axes plus one cell, clamped to [min_dim_m, max_dim_m]. Height comes from
    the median of the component's max-height cells (robust to extrapolation
    overshoot) with the center z at half height. The score is the mean
    density of the component. Boxes come out in the grid's frame.
    """
    density = g.values[:, :, DENSITY_CHANNEL]
    mask = density > params.tau
    labels, n_components = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    detections: List[Detection] = []
    cell = g.spec.cell_size
    bounding = ndimage.find_objects(labels) if n_components else []
    for comp, slices in enumerate(bounding, start=1):
        rows, cols = np.nonzero(labels[slices] == comp)
        if len(rows) < params.min_cells:
            continue
        rows = rows + slices[0].start
        cols = cols + slices[1].start
        weights = density[rows, cols]
        xs = g.spec.x0 + (cols + 0.5) * cell
        ys = g.spec.y0 + (rows + 0.5) * cell
        wsum = weights.sum()
        cx = float((weights * xs).sum() / wsum)
        cy = float((weights * ys).sum() / wsum)

        dx = xs - cx
        dy = ys - cy
        cov = np.array([
            [(weights * dx * dx).sum(), (weights * dx * dy).sum()],
            [(weights * dx * dy).sum(), (weights * dy * dy).sum()],
        ]) / wsum
        eigvals, eigvecs = np.linalg.eigh(cov)
        major = eigvecs[:, int(np.argmax(eigvals))]
        yaw = math.atan2(major[1], major[0])
        if yaw > math.pi / 2:
            yaw -= math.pi
        elif yaw <= -math.pi / 2:
            yaw += math.pi

        c, s = math.cos(yaw), math.sin(yaw)
        along = dx * c + dy * s
        across = -dx * s + dy * c
        length = float(np.clip(along.max() - along.min() + cell, params.min_dim_m, params.max_dim_m))
        width = float(np.clip(across.max() - across.min() + cell, params.min_dim_m, params.max_dim_m))

        heights = g.values[rows, cols, HEIGHT_CHANNEL]
        h = float(np.clip(np.median(heights), params.min_dim_m, params.max_height_m))
        score = float(np.clip(weights.mean(), 0.0, 1.0))
        detections.append(
            Detection(
                box=Box3D(x=cx, y=cy, z=0.5 * h, w=width, l=length, h=h, yaw=yaw,
                          category=Category.CAR),
                score=score,
            )
        )
    return detections
