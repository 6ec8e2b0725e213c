"""Accuracy assessment and product intercomparison.

Undefined statistics (zero denominators) are reported as ``None``, never NaN.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionMismatch, ValidationError
from .raster_store import Raster

GRID_NODATA = -9999.0
JULIAN_DAY_MIN, JULIAN_DAY_MAX = 1, 366


@dataclass(frozen=True)
class CrossTab:
    """Prediction x reference counts, burned first: x12 = predicted burned, reference unburned."""

    x11: float
    x12: float
    x21: float
    x22: float

    def __post_init__(self):
        for name in ("x11", "x12", "x21", "x22"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValidationError(f"{name} must be a finite nonnegative count, got {value}")

    @property
    def total(self):
        return self.x11 + self.x12 + self.x21 + self.x22

    def transposed(self) -> "CrossTab":
        return CrossTab(self.x11, self.x21, self.x12, self.x22)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AccuracyStats:
    commission: float | None
    omission: float | None
    overall: float | None

    def percent(self) -> dict:
        return {k: None if v is None else 100.0 * v for k, v in asdict(self).items()}


def _mask(a, name):
    if isinstance(a, Raster):
        a = a.data[0]
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValidationError(f"{name} must be 2-D")
    return a


def cross_tab(pred, ref, valid=None) -> CrossTab:
    """Counts over valid pixels; masks are 0/1 (or bool) arrays."""
    pred = _mask(pred, "pred").astype(bool)
    ref = _mask(ref, "ref").astype(bool)
    if pred.shape != ref.shape:
        raise DimensionMismatch(f"prediction {pred.shape} and reference {ref.shape} differ")
    if valid is None:
        valid = np.ones(pred.shape, dtype=bool)
    else:
        valid = _mask(valid, "valid").astype(bool)
        if valid.shape != pred.shape:
            raise DimensionMismatch(f"valid mask {valid.shape} differs from {pred.shape}")
    p, r = pred[valid], ref[valid]
    x11 = int(np.count_nonzero(p & r))
    x12 = int(np.count_nonzero(p & ~r))
    x21 = int(np.count_nonzero(~p & r))
    x22 = int(p.size - x11 - x12 - x21)
    return CrossTab(x11, x12, x21, x22)


def _ratio(num, den):
    return None if den == 0 else num / den


def accuracy_stats(t: CrossTab) -> AccuracyStats:
    """Commission error, omission error and overall accuracy (fractions)."""
    return AccuracyStats(
        commission=_ratio(t.x12, t.x11 + t.x12),
        omission=_ratio(t.x21, t.x11 + t.x21),
        overall=_ratio(t.x11 + t.x22, t.total),
    )


def average_tabs(tabs) -> CrossTab:
    tabs = list(tabs)
    if not tabs:
        raise ValidationError("cannot average an empty list of cross tabulations")
    n = len(tabs)
    return CrossTab(*(sum(getattr(t, f) for t in tabs) / n for f in ("x11", "x12", "x21", "x22")))


def _cells_per(cell_deg, pixel):
    ratio = cell_deg / pixel
    k = round(ratio)
    if k < 1 or abs(ratio - k) > 1e-6 * max(1.0, ratio):
        raise ValidationError(f"pixel size {pixel} does not divide cell size {cell_deg}")
    return k


def _cell_index(mask: Raster, cell_deg: float):
    """Flat output-cell index of every pixel, output shape and output geotransform."""
    _cells_per(cell_deg, mask.pixel_w)
    _cells_per(cell_deg, mask.pixel_h)
    ox, pw, _, oy, _, gt5 = mask.geotransform
    ph = -gt5
    gx0 = math.floor(ox / cell_deg + 1e-9) * cell_deg
    gy0 = math.ceil(oy / cell_deg - 1e-9) * cell_deg
    xc = ox + (np.arange(mask.width) + 0.5) * pw
    yc = oy - (np.arange(mask.height) + 0.5) * ph
    col = np.floor((xc - gx0) / cell_deg).astype(np.int64)
    row = np.floor((gy0 - yc) / cell_deg).astype(np.int64)
    nrows, ncols = int(row.max()) + 1, int(col.max()) + 1
    cell = (row[:, None] * ncols + col[None, :]).ravel()
    return cell, (nrows, ncols), (gx0, cell_deg, 0.0, gy0, 0.0, -cell_deg)


def grid_valid_counts(mask: Raster, cell_deg: float = 0.25) -> np.ndarray:
    """Valid-pixel count per cell, on the grid of ``grid_composite``."""
    cell, shape, _ = _cell_index(mask, cell_deg)
    counts = np.bincount(cell, weights=mask.valid_mask().ravel(), minlength=shape[0] * shape[1])
    return counts.reshape(shape).astype(np.int64)


def grid_composite(mask: Raster, cell_deg: float = 0.25) -> Raster:
    """Proportion of burned pixels per cell of a grid aligned to multiples of ``cell_deg``.

    Pixels are assigned to cells by their centre. Pixels equal to the mask's
    nodata value are excluded; cells without valid pixels get nodata.
    """
    cell, shape, gt = _cell_index(mask, cell_deg)
    valid = mask.valid_mask()
    burned = valid & (mask.data[0] != 0)
    n_valid = np.bincount(cell, weights=valid.ravel(), minlength=shape[0] * shape[1])
    n_burned = np.bincount(cell, weights=burned.ravel(), minlength=shape[0] * shape[1])
    with np.errstate(invalid="ignore", divide="ignore"):
        prop = np.where(n_valid > 0, n_burned / n_valid, GRID_NODATA)
    return Raster(prop.reshape(shape).astype(np.float32), GRID_NODATA, gt)


def annual_from_monthly(jd_layers) -> np.ndarray:
    """Annual burned mask: a pixel is burned if any of 12 monthly Julian-day
    layers holds a valid day (1..366). Repeat burns count once."""
    layers = [_mask(a, "Julian-day layer") for a in jd_layers]
    if len(layers) != 12:
        raise ValidationError(f"expected 12 monthly layers, got {len(layers)}")
    shape = layers[0].shape
    if any(a.shape != shape for a in layers):
        raise DimensionMismatch("monthly layers are not co-registered")
    burned = np.zeros(shape, dtype=bool)
    for a in layers:
        burned |= (a >= JULIAN_DAY_MIN) & (a <= JULIAN_DAY_MAX)
    return burned


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    r2: float | None
    n: int


def regress(x, y) -> RegressionResult:
    """Ordinary least squares y = slope * x + intercept with R^2 = 1 - SSres/SStot."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValidationError("x and y differ in length")
    if len(x) < 2:
        raise ValidationError("regression needs at least two points")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValidationError("regression inputs must be finite")
    xm, ym = x.mean(), y.mean()
    dx, dy = x - xm, y - ym
    sxx = float(dx @ dx)
    if sxx == 0:
        raise ValidationError("x is constant; slope is undefined")
    slope = float(dx @ dy) / sxx
    intercept = float(ym - slope * xm)
    resid = y - (slope * x + intercept)
    ss_tot = float(dy @ dy)
    r2 = None if ss_tot == 0 else 1.0 - float(resid @ resid) / ss_tot
    return RegressionResult(slope, intercept, r2, len(x))


def regress_by_category(x, y, category) -> dict:
    """Regression per category code plus an ``"all"`` entry.

    Categories with fewer than two points or constant ``x`` are skipped.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    category = np.asarray(category).ravel()
    out = {}
    for code in np.unique(category):
        sel = category == code
        try:
            out[code.item()] = regress(x[sel], y[sel])
        except ValidationError:
            continue
    out["all"] = regress(x, y)
    return out
