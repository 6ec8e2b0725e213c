"""Per-pixel annual processing.

For every pixel the current-year stack of clear observations is turned into
burn probabilities; the date of the most burn-like observation (``t1``) and
the NDVI/NBR there are compared with two-year NDVI and previous-year NBR
statistics. Pixels that pass the NDVI, NBR and temporal filters and reach a
probability of 0.95 become seeds for region growing.

Days are continuous indices counted from Jan 1 of the previous year, so
dates in either year compare directly.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDenominator, DimensionMismatch, NoObservations, ValidationError
from .forest import ForestModel, predict_probability
from .raster_store import Raster, SceneManifest
from .spectral import FEATURE_INDEX, feature_stack, feature_vector

log = logging.getLogger(__name__)

SEED_PROBABILITY = 0.95
PROBABILITY_NODATA = -9999.0
VCF_NODATA = 255

_NDVI = FEATURE_INDEX["NDVI"]
_NBR = FEATURE_INDEX["NBR"]


class Reason(enum.IntEnum):
    """Diagnostic codes written to the diagnostics raster."""

    PASS = 0
    C1 = 1  # maximum NDVI too low
    C2 = 2  # NDVI decline too small
    C3 = 3  # NBR decline against previous-year minimum too small
    C4 = 4  # greenest date too long after the burn-like date
    INSUFFICIENT_HISTORY = 5
    NO_OBSERVATIONS = 6


class VegetationRegime(enum.IntEnum):
    HERBACEOUS = 0
    TREE_DOMINATED = 1


@dataclass(frozen=True)
class FilterThresholds:
    t_ndvi: float = 0.2
    t_dndvi: float = 0.2
    t_dnbr: float = 0.1
    t_day: float = 100

    def __post_init__(self):
        for name in ("t_ndvi", "t_dndvi", "t_dnbr", "t_day"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValidationError(f"{name} must be finite and nonnegative, got {value}")


@dataclass(frozen=True)
class PixelSummary:
    p_max: float
    t1: int
    ndvi1: float
    nbr1: float
    ndvi2: float
    t2: int
    nbr2: float | None
    n_obs_current: int
    n_obs_previous: int


def _usable_features(observations):
    out = []
    for day, refl in sorted(observations, key=lambda o: o[0]):
        try:
            out.append((int(day), feature_vector(refl)))
        except DegenerateDenominator:
            continue
    return out


def summarize_pixel(current, previous, model: ForestModel) -> PixelSummary:
    """Annual statistics of one pixel from its clear (day, reflectance) observations.

    Observations whose feature vector is singular are dropped as if masked.
    Ties for the maximum probability and the maximum NDVI go to the earliest day.
    """
    cur = _usable_features(current)
    prev = _usable_features(previous)
    if not cur:
        raise NoObservations("no usable current-year observation")

    p_max, t1, f1 = -1.0, None, None
    for day, f in cur:
        p = predict_probability(model, f)
        if p > p_max:
            p_max, t1, f1 = p, day, f

    ndvi2, t2 = -math.inf, None
    for day, f in sorted(prev + cur, key=lambda o: o[0]):
        if f[_NDVI] > ndvi2:
            ndvi2, t2 = float(f[_NDVI]), day

    nbr2 = min((float(f[_NBR]) for _, f in prev), default=None)
    return PixelSummary(p_max, t1, float(f1[_NDVI]), float(f1[_NBR]), ndvi2, t2, nbr2,
                        len(cur), len(prev))


def _check_percent(value, name):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    if not 0 <= value <= 100:
        raise ValidationError(f"{name} percent {value} outside [0, 100]")
    return value


def classify_regime(tree_pct_cur, tree_pct_prev, nontree_pct_cur, nontree_pct_prev) -> VegetationRegime:
    """Tree-dominated when the larger tree cover of the two years exceeds the
    larger non-tree vegetation cover; any missing value gives herbaceous.

    Missing values are ``None`` or NaN.
    """
    values = [
        _check_percent(tree_pct_cur, "tree_pct_cur"),
        _check_percent(tree_pct_prev, "tree_pct_prev"),
        _check_percent(nontree_pct_cur, "nontree_pct_cur"),
        _check_percent(nontree_pct_prev, "nontree_pct_prev"),
    ]
    if any(v is None for v in values):
        return VegetationRegime.HERBACEOUS
    if max(values[0], values[1]) > max(values[2], values[3]):
        return VegetationRegime.TREE_DOMINATED
    return VegetationRegime.HERBACEOUS


def regime_array(vcf: Raster) -> np.ndarray:
    """Regime codes from a 4-band cover raster.

    Band order: tree cover current year, tree cover previous year, non-tree
    vegetation current year, non-tree vegetation previous year (percent).
    """
    if vcf.bands != 4:
        raise ValidationError(f"vegetation cover raster needs 4 bands, got {vcf.bands}")
    data = vcf.data.astype(np.float64)
    valid = np.ones(vcf.shape, dtype=bool)
    for b in range(4):
        valid &= vcf.valid_mask(b)
    bad = valid[np.newaxis] & ((data < 0) | (data > 100))
    if bad.any():
        raise ValidationError(f"{int(bad.sum())} cover values outside [0, 100]")
    tree = np.maximum(data[0], data[1])
    nontree = np.maximum(data[2], data[3])
    regime = np.where(valid & (tree > nontree), VegetationRegime.TREE_DOMINATED, VegetationRegime.HERBACEOUS)
    return regime.astype(np.uint8)


def apply_filters(s: PixelSummary, regime: VegetationRegime,
                  th: FilterThresholds = FilterThresholds()) -> Reason:
    """First failing constraint, or Reason.PASS.

    Herbaceous pixels are checked against the NDVI filter only (C1, C2);
    tree-dominated pixels also need the NBR (C3) and temporal (C4) filters.
    """
    if not s.ndvi2 > th.t_ndvi:
        return Reason.C1
    if not s.ndvi2 - s.ndvi1 > th.t_dndvi:
        return Reason.C2
    if regime == VegetationRegime.HERBACEOUS:
        return Reason.PASS
    if s.nbr2 is None:
        return Reason.INSUFFICIENT_HISTORY
    if not s.nbr2 - s.nbr1 > th.t_dnbr:
        return Reason.C3
    if not (s.t1 > s.t2 or s.t2 - s.t1 <= th.t_day):
        return Reason.C4
    return Reason.PASS


def stored_probability(p):
    """Probability as written to the float32 output raster."""
    return np.float32(p)


def is_seed(s: PixelSummary, reason: Reason, threshold: float = SEED_PROBABILITY) -> bool:
    return reason == Reason.PASS and bool(stored_probability(s.p_max) >= np.float32(threshold))


# -- raster path ---------------------------------------------------------------

@dataclass
class SummaryArrays:
    """PixelSummary fields as arrays; undefined entries are NaN (or -1 for days)."""

    p_max: np.ndarray
    t1: np.ndarray
    ndvi1: np.ndarray
    nbr1: np.ndarray
    ndvi2: np.ndarray
    t2: np.ndarray
    nbr2: np.ndarray
    n_obs_current: np.ndarray
    n_obs_previous: np.ndarray

    def at(self, row, col) -> PixelSummary | None:
        if self.n_obs_current[row, col] == 0:
            return None
        nbr2 = self.nbr2[row, col]
        return PixelSummary(
            float(self.p_max[row, col]), int(self.t1[row, col]),
            float(self.ndvi1[row, col]), float(self.nbr1[row, col]),
            float(self.ndvi2[row, col]), int(self.t2[row, col]),
            None if np.isnan(nbr2) else float(nbr2),
            int(self.n_obs_current[row, col]), int(self.n_obs_previous[row, col]),
        )


def summarize_stack(days, reflectance, usable, is_current, model: ForestModel) -> SummaryArrays:
    """Vectorised ``summarize_pixel`` over a block of pixels.

    ``reflectance`` is indexable as ``[k] -> (6, rows, cols)``, ``usable`` as
    ``[k] -> (rows, cols)`` bool, for every scene ``k``.
    """
    order = sorted(range(len(days)), key=lambda k: days[k])
    shape = np.shape(usable[order[0]]) if order else (0, 0)

    p_max = np.full(shape, -1.0)
    t1 = np.full(shape, -1, dtype=np.int64)
    ndvi1 = np.full(shape, np.nan)
    nbr1 = np.full(shape, np.nan)
    ndvi2 = np.full(shape, -np.inf)
    t2 = np.full(shape, -1, dtype=np.int64)
    nbr2 = np.full(shape, np.inf)
    n_cur = np.zeros(shape, dtype=np.int32)
    n_prev = np.zeros(shape, dtype=np.int32)

    for k in order:
        feats, ok = feature_stack(reflectance[k])
        ok &= np.asarray(usable[k], dtype=bool)
        ndvi = feats[..., _NDVI]
        nbr = feats[..., _NBR]
        greener = ok & (ndvi > ndvi2)
        ndvi2[greener] = ndvi[greener]
        t2[greener] = days[k]
        if is_current[k]:
            prob = np.full(shape, -1.0)
            prob[ok] = model.predict_proba(feats[ok])
            better = ok & (prob > p_max)
            p_max[better] = prob[better]
            t1[better] = days[k]
            ndvi1[better] = ndvi[better]
            nbr1[better] = nbr[better]
            n_cur += ok
        else:
            lower = ok & (nbr < nbr2)
            nbr2[lower] = nbr[lower]
            n_prev += ok

    none = n_cur == 0
    p_max[none] = np.nan
    ndvi2[ndvi2 == -np.inf] = np.nan
    nbr2[n_prev == 0] = np.nan
    return SummaryArrays(p_max, t1, ndvi1, nbr1, ndvi2, t2, nbr2, n_cur, n_prev)


def filter_codes(s: SummaryArrays, regime: np.ndarray, th: FilterThresholds = FilterThresholds()) -> np.ndarray:
    """Vectorised ``apply_filters``; NO_OBSERVATIONS where no current-year data."""
    tree = np.asarray(regime) == VegetationRegime.TREE_DOMINATED
    with np.errstate(invalid="ignore"):
        c1 = ~(s.ndvi2 > th.t_ndvi)
        c2 = ~(s.ndvi2 - s.ndvi1 > th.t_dndvi)
        history = ~np.isnan(s.nbr2)
        c3 = ~(s.nbr2 - s.nbr1 > th.t_dnbr)
        c4 = ~((s.t1 > s.t2) | (s.t2 - s.t1 <= th.t_day))
    codes = np.select(
        [s.n_obs_current == 0, c1, c2, ~tree, ~history, c3, c4],
        [Reason.NO_OBSERVATIONS, Reason.C1, Reason.C2, Reason.PASS,
         Reason.INSUFFICIENT_HISTORY, Reason.C3, Reason.C4],
        default=Reason.PASS,
    )
    return codes.astype(np.uint8)


@dataclass(eq=False)
class PixelOutputs:
    probability: Raster  # float32, nodata where no current-year observation
    seeds: Raster  # uint8, 1 = seed
    diagnostics: Raster  # uint8 Reason codes
    summary: SummaryArrays


def _tiles(height, tile_rows):
    tile_rows = max(1, int(tile_rows))
    return [(r, min(r + tile_rows, height)) for r in range(0, height, tile_rows)]


def seed_and_probability_rasters(manifest: SceneManifest, model: ForestModel, regimes,
                                 th: FilterThresholds = FilterThresholds(),
                                 seed_threshold: float = SEED_PROBABILITY,
                                 threads: int = 1, tile_rows: int = 64) -> PixelOutputs:
    """Run per-pixel processing over every scene of a manifest.

    ``regimes`` is a ``(rows, cols)`` array of VegetationRegime codes. Tiles
    of ``tile_rows`` rows are processed independently; ``threads`` caps the
    worker count and does not change the result.
    """
    if not manifest.current:
        raise NoObservations("manifest has no current-year scenes")
    scenes = [e.load() for e in manifest.entries]
    ref = scenes[0].reflectance
    for entry, scene in zip(manifest.entries, scenes):
        if not scene.reflectance.same_grid(ref):
            raise DimensionMismatch(f"scene {entry.date} is not co-registered with {manifest.entries[0].date}")
    regimes = np.asarray(regimes)
    if regimes.shape != ref.shape:
        raise DimensionMismatch(f"regime grid {regimes.shape} differs from scene grid {ref.shape}")

    days = [manifest.day(e) for e in manifest.entries]
    is_current = [False] * len(manifest.previous) + [True] * len(manifest.current)
    usable = [s.usable() for s in scenes]
    refl = [s.reflectance.data for s in scenes]

    height, width = ref.shape
    fields = ("p_max", "t1", "ndvi1", "nbr1", "ndvi2", "t2", "nbr2", "n_obs_current", "n_obs_previous")
    full = {}
    codes = np.zeros((height, width), dtype=np.uint8)

    def work(bounds):
        r0, r1 = bounds
        part = summarize_stack(days, [a[:, r0:r1] for a in refl], [u[r0:r1] for u in usable],
                               is_current, model)
        return bounds, part

    tiles = _tiles(height, tile_rows)
    if threads > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, tiles))
    else:
        results = [work(t) for t in tiles]

    for (r0, r1), part in results:
        for name in fields:
            arr = getattr(part, name)
            if name not in full:
                full[name] = np.empty((height, width), dtype=arr.dtype)
            full[name][r0:r1] = arr
        codes[r0:r1] = filter_codes(part, regimes[r0:r1], th)
    summary = SummaryArrays(**full)

    observed = summary.n_obs_current > 0
    prob = np.full((height, width), PROBABILITY_NODATA, dtype=np.float32)
    prob[observed] = stored_probability(summary.p_max[observed])
    seeds = (codes == Reason.PASS) & observed & (prob >= np.float32(seed_threshold))

    gt = ref.geotransform
    log.info("per-pixel processing: %d scenes, %d seeds", len(scenes), int(seeds.sum()))
    return PixelOutputs(
        Raster(prob, PROBABILITY_NODATA, gt),
        Raster(seeds.astype(np.uint8), 255, gt),
        Raster(codes, 255, gt),
        summary,
    )
