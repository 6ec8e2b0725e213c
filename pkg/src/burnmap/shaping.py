"""Burned-area shaping: seed components, small-component removal, region growing.

All connectivity is 8-adjacency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch, ValidationError
from .raster_store import Raster

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
BA_NODATA = 255


@dataclass(frozen=True)
class GrowthParams:
    grow_threshold: float = 0.5
    min_component_pixels: int = 11

    def __post_init__(self):
        if not 0 < self.grow_threshold <= 1:
            raise ValidationError("grow_threshold must be in (0, 1]")
        if self.min_component_pixels < 1:
            raise ValidationError("min_component_pixels must be >= 1")


@dataclass(eq=False)
class ComponentLabeling:
    labels: np.ndarray  # uint32, 0 = background, components 1..K
    sizes: np.ndarray  # sizes[k - 1] = pixel count of component k

    @property
    def count(self) -> int:
        return len(self.sizes)


def _as_mask(mask) -> np.ndarray:
    if isinstance(mask, Raster):
        mask = mask.data[0]
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValidationError(f"mask must be 2-D, got {mask.ndim}-D")
    return mask.astype(bool) if mask.dtype != bool else mask


def label_components(seeds) -> ComponentLabeling:
    """8-connected components, numbered in row-major order of their first pixel."""
    mask = _as_mask(seeds)
    raw, k = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if k == 0:
        return ComponentLabeling(np.zeros(mask.shape, dtype=np.uint32), np.zeros(0, dtype=np.int64))
    flat = raw.ravel()
    first = np.full(k + 1, flat.size, dtype=np.int64)
    np.minimum.at(first, flat, np.arange(flat.size))
    order = np.argsort(first[1:], kind="stable") + 1
    relabel = np.zeros(k + 1, dtype=np.uint32)
    relabel[order] = np.arange(1, k + 1, dtype=np.uint32)
    labels = relabel[raw]
    sizes = np.bincount(labels.ravel(), minlength=k + 1)[1:]
    return ComponentLabeling(labels, sizes)


def remove_small(labeling: ComponentLabeling, params: GrowthParams = GrowthParams()) -> np.ndarray:
    """Mask of the components with at least ``min_component_pixels`` pixels."""
    keep = np.concatenate(([False], labeling.sizes >= params.min_component_pixels))
    return keep[labeling.labels]


def _probability_array(probability, nodata=None):
    if isinstance(probability, Raster):
        values = probability.data[0]
        valid = probability.valid_mask()
    else:
        values = np.asarray(probability)
        valid = np.ones(values.shape, dtype=bool) if nodata is None else values != nodata
    return values, valid & ~np.isnan(values)


def region_grow(seeds, probability, params: GrowthParams = GrowthParams(), nodata=None) -> np.ndarray:
    """Least fixpoint of adding 8-neighbours with probability >= grow_threshold.

    ``probability`` is a Raster (its nodata honoured) or an array with an
    optional ``nodata`` value. Seeds are always part of the result; nodata
    pixels never grow. The result is every pixel connected to a seed through
    candidate pixels, which is what the iterative procedure converges to.
    """
    mask = _as_mask(seeds)
    values, valid = _probability_array(probability, nodata)
    if values.shape != mask.shape:
        raise DimensionMismatch(f"seed mask {mask.shape} and probability {values.shape} differ")
    threshold = np.asarray(params.grow_threshold, dtype=values.dtype)
    with np.errstate(invalid="ignore"):
        candidates = (valid & (values >= threshold)) | mask
    labels, _ = ndimage.label(candidates, structure=EIGHT_CONNECTED)
    hit = np.zeros(labels.max() + 1, dtype=bool)
    hit[labels[mask]] = True
    hit[0] = False
    return hit[labels]


def shape_burned_area(seeds, probability: Raster, params: GrowthParams = GrowthParams()) -> Raster:
    """Seeds -> small-component removal -> region growing, as a uint8 BA raster.

    Output: 1 burned, 0 unburned, 255 where the probability raster has nodata.
    """
    labeling = label_components(seeds)
    kept = remove_small(labeling, params)
    burned = region_grow(kept, probability, params)
    _, valid = _probability_array(probability)
    out = np.where(valid, burned, BA_NODATA).astype(np.uint8)
    return probability.like(out, nodata=BA_NODATA)
