"""Per-frame feature extraction from precomputed convolutional feature maps.

Two pooled views feed the progress predictor: a region feature max-pooled over
the (re-projected) tube box, and a whole-frame pyramid feature that encodes
context at several grid resolutions.  Their concatenation is the model input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tubes import BoundingBox, Tube

REGION = "region"
CONTEXT = "context"
BLENDED = "blended"


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """A height x width x channels grid of activations for one frame.

    ``spatial_scale`` is the ratio of grid cells to image pixels, so an image
    coordinate times the scale lands in grid coordinates.
    """

    spatial_scale: float
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"feature map must be (H, W, C) with all dims >= 1, got {data.shape}")
        if not self.spatial_scale > 0:
            raise ValueError(f"spatial_scale must be positive, got {self.spatial_scale}")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return self.spatial_scale == other.spatial_scale and np.array_equal(
            self.data, other.data
        )


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """A fixed-length pooled feature with its provenance kind."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in (REGION, CONTEXT, BLENDED):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).ravel())

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class PoolingConfig:
    """Geometry of the two pooling stages; output lengths depend only on this."""

    pool_h: int = 3
    pool_w: int = 3
    levels: tuple[int, ...] = (1, 2, 4)

    def __post_init__(self):
        if self.pool_h < 1 or self.pool_w < 1:
            raise ValueError("pool_h and pool_w must be >= 1")
        if not self.levels or any(lv < 1 for lv in self.levels):
            raise ValueError("levels must be a non-empty list of ints >= 1")
        object.__setattr__(self, "levels", tuple(self.levels))

    def region_length(self, channels: int) -> int:
        return self.pool_h * self.pool_w * channels

    def context_length(self, channels: int) -> int:
        return sum(lv * lv for lv in self.levels) * channels

    def blended_length(self, channels: int) -> int:
        return self.region_length(channels) + self.context_length(channels)


def _bin_edges(extent: int, n_bins: int) -> list[tuple[int, int]]:
    # bin b spans [floor(b*extent/n), ceil((b+1)*extent/n)); never empty for extent >= 1
    return [
        (math.floor(b * extent / n_bins), math.ceil((b + 1) * extent / n_bins))
        for b in range(n_bins)
    ]


def _max_pool_cells(data: np.ndarray, r0: int, r1: int, c0: int, c1: int) -> np.ndarray:
    if r1 <= r0 or c1 <= c0:
        return np.zeros(data.shape[2])
    return data[r0:r1, c0:c1].max(axis=(0, 1)).astype(float)


def roi_pool(
    fmap: FeatureMap, box: BoundingBox, pool_h: int = 3, pool_w: int = 3
) -> FeatureVector:
    """Max-pool the grid cells under a box into a pool_h x pool_w x channels vector.

    The box is re-projected onto the grid via the map's spatial scale and
    covers every cell its projection touches.  Raises ValueError when the
    projection misses the grid entirely.
    """
    if pool_h < 1 or pool_w < 1:
        raise ValueError("pool_h and pool_w must be >= 1")
    scale = fmap.spatial_scale
    r0 = math.floor(box.y_min * scale)
    r1 = math.ceil(box.y_max * scale)
    c0 = math.floor(box.x_min * scale)
    c1 = math.ceil(box.x_max * scale)
    r0, r1 = max(r0, 0), min(r1, fmap.height)
    c0, c1 = max(c0, 0), min(c1, fmap.width)
    if r1 <= r0 or c1 <= c0:
        raise ValueError(
            f"projected box lies outside the {fmap.height}x{fmap.width} grid"
        )
    out = np.empty((pool_h, pool_w, fmap.channels))
    row_bins = _bin_edges(r1 - r0, pool_h)
    col_bins = _bin_edges(c1 - c0, pool_w)
    for i, (rb0, rb1) in enumerate(row_bins):
        for j, (cb0, cb1) in enumerate(col_bins):
            out[i, j] = _max_pool_cells(fmap.data, r0 + rb0, r0 + rb1, c0 + cb0, c0 + cb1)
    return FeatureVector(out.ravel(), REGION)


def spp_pool(fmap: FeatureMap, levels: Sequence[int] = (1, 2, 4)) -> FeatureVector:
    """Pyramid-pool the whole frame: an L x L max-pool grid per level, concatenated."""
    levels = tuple(levels)
    if not levels or any(lv < 1 for lv in levels):
        raise ValueError("levels must be a non-empty list of ints >= 1")
    parts = []
    for lv in levels:
        out = np.empty((lv, lv, fmap.channels))
        row_bins = _bin_edges(fmap.height, lv)
        col_bins = _bin_edges(fmap.width, lv)
        for i, (r0, r1) in enumerate(row_bins):
            for j, (c0, c1) in enumerate(col_bins):
                out[i, j] = _max_pool_cells(fmap.data, r0, r1, c0, c1)
        parts.append(out.ravel())
    return FeatureVector(np.concatenate(parts), CONTEXT)


def blend_input(region: FeatureVector, context: FeatureVector) -> FeatureVector:
    """Concatenate a region feature with a context feature, region first."""
    if region.kind != REGION or context.kind != CONTEXT:
        raise ValueError(f"expected (region, context) kinds, got ({region.kind}, {context.kind})")
    return FeatureVector(np.concatenate([region.values, context.values]), BLENDED)


def pool_tube_features(
    maps: Sequence[FeatureMap], tube: Tube, pooling: PoolingConfig = PoolingConfig()
) -> np.ndarray:
    """Blended model inputs for every frame of a tube, as a (n_frames, D) matrix.

    ``maps`` holds one feature map per video frame, indexed by absolute frame.
    """
    rows = []
    for frame in tube.frames:
        fmap = maps[frame]
        region = roi_pool(fmap, tube.box_at(frame), pooling.pool_h, pooling.pool_w)
        context = spp_pool(fmap, pooling.levels)
        rows.append(blend_input(region, context).values)
    return np.stack(rows)
