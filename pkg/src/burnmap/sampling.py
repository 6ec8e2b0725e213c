"""Stratified random sampling of training and validation sites.

Strata are the intersection of seven fire-prone land-cover categories with
five equal-frequency burned-area density levels. Sites are drawn per level,
with categories weighted by their burned-area extent inside the level, and
validation sites are kept a minimum great-circle distance from training sites.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, SamplingInfeasible, ValidationError
from .raster_store import Raster

EARTH_RADIUS_KM = 6371.0
MAX_RETRIES = 10_000


class LandCoverCategory(enum.IntEnum):
    BROADLEAVED_EVERGREEN = 1
    BROADLEAVED_DECIDUOUS = 2
    CONIFEROUS = 3
    MIXED_FOREST = 4
    SHRUB = 5
    RANGELAND = 6
    AGRICULTURE = 7
    OTHERS = 8

    @property
    def label(self) -> str:
        return self.name.replace("_", " ").title()

    @classmethod
    def parse(cls, text) -> "LandCoverCategory":
        key = str(text).strip().upper().replace(" ", "_")
        try:
            return cls[key]
        except KeyError:
            raise ValidationError(f"unknown land-cover category {text!r}") from None


FIRE_PRONE = tuple(c for c in LandCoverCategory if c is not LandCoverCategory.OTHERS)

# UMD scheme code -> (name, category)
UMD_CLASSES = {
    0: ("Water", LandCoverCategory.OTHERS),
    1: ("Evergreen Needleleaf forest", LandCoverCategory.CONIFEROUS),
    2: ("Evergreen Broadleaf forest", LandCoverCategory.BROADLEAVED_EVERGREEN),
    3: ("Deciduous Needleleaf forest", LandCoverCategory.CONIFEROUS),
    4: ("Deciduous Broadleaf forest", LandCoverCategory.BROADLEAVED_DECIDUOUS),
    5: ("Mixed forest", LandCoverCategory.MIXED_FOREST),
    6: ("Closed shrublands", LandCoverCategory.SHRUB),
    7: ("Open shrublands", LandCoverCategory.SHRUB),
    8: ("Woody savannas", LandCoverCategory.RANGELAND),
    9: ("Savannas", LandCoverCategory.RANGELAND),
    10: ("Grasslands", LandCoverCategory.RANGELAND),
    12: ("Croplands", LandCoverCategory.AGRICULTURE),
    13: ("Urban and built-up", LandCoverCategory.OTHERS),
    16: ("Barren or sparsely vegetated", LandCoverCategory.OTHERS),
}
_UMD_BY_NAME = {name.lower(): code for code, (name, _) in UMD_CLASSES.items()}


def reclassify(umd_class) -> LandCoverCategory:
    """Category of a UMD land-cover class, given by numeric code or by name."""
    if isinstance(umd_class, str):
        code = _UMD_BY_NAME.get(umd_class.strip().lower())
    else:
        code = int(umd_class) if float(umd_class).is_integer() else None
    if code not in UMD_CLASSES:
        raise ValidationError(f"unknown UMD land-cover class {umd_class!r}")
    return UMD_CLASSES[code][1]


def reclassify_grid(umd: np.ndarray) -> np.ndarray:
    """Category codes for a grid of UMD codes; unknown codes map to 0 (unsampled)."""
    lut = np.zeros(256, dtype=np.uint8)
    for code, (_, cat) in UMD_CLASSES.items():
        lut[code] = cat
    umd = np.asarray(umd)
    inside = (umd >= 0) & (umd < 256)
    out = np.zeros(umd.shape, dtype=np.uint8)
    out[inside] = lut[umd[inside].astype(np.int64)]
    return out


def quantile_levels(density: np.ndarray, k: int = 5) -> np.ndarray:
    """Equal-frequency levels 1..k over positive cells; zero cells get level 0.

    Cells are ranked by density with ties kept in row-major order, and rank
    ``r`` of ``n`` goes to level ``floor(r * k / n) + 1``.
    """
    density = np.asarray(density, dtype=np.float64)
    if k < 1:
        raise ValidationError("k must be >= 1")
    if np.any(density < 0) or not np.isfinite(density).all():
        raise ValidationError("densities must be finite and nonnegative")
    flat = density.ravel()
    positive = np.flatnonzero(flat > 0)
    n = len(positive)
    if n < k:
        raise ValidationError(f"need at least {k} positive cells, found {n}")
    order = positive[np.argsort(flat[positive], kind="stable")]
    levels = np.zeros(flat.size, dtype=np.uint8)
    levels[order] = (np.arange(n) * k // n + 1).astype(np.uint8)
    return levels.reshape(density.shape)


def allocate(n_total: int, k_levels: int = 5) -> list[int]:
    """Equal split of ``n_total`` over levels, remainder to the lowest levels."""
    if k_levels < 1:
        raise ValidationError("k_levels must be >= 1")
    if n_total < k_levels:
        raise ValidationError(f"cannot allocate {n_total} samples over {k_levels} levels")
    base, extra = divmod(n_total, k_levels)
    return [base + (1 if i < extra else 0) for i in range(k_levels)]


def great_circle_km(a, b) -> float:
    """Haversine distance in km between two (lat, lon) points in degrees."""
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = (math.sin((lat2 - lat1) / 2) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2)
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def haversine_km(lat1, lon1, lat2, lon2):
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(v, dtype=np.float64)) for v in (lat1, lon1, lat2, lon2))
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


@dataclass(frozen=True)
class Stratum:
    category: LandCoverCategory
    level: int


@dataclass(frozen=True)
class Site:
    id: str
    role: str  # "training" or "validation"
    lat: float
    lon: float
    category: LandCoverCategory
    level: int

    def __post_init__(self):
        if self.role not in ("training", "validation"):
            raise ValidationError(f"unknown site role {self.role!r}")
        if not -90 <= self.lat <= 90 or not -180 <= self.lon <= 180:
            raise ValidationError(f"site {self.id} has invalid coordinates ({self.lat}, {self.lon})")

    @property
    def stratum(self) -> Stratum:
        return Stratum(self.category, self.level)


@dataclass(eq=False)
class StrataMap:
    category: np.ndarray  # LandCoverCategory codes, 0 = unmapped
    level: np.ndarray  # density level 1..k, 0 = no burned area
    density: np.ndarray
    geotransform: tuple
    k: int = 5

    def strata(self) -> list[Stratum]:
        return [Stratum(c, lv) for c in FIRE_PRONE for lv in range(1, self.k + 1)]

    def centroid(self, flat_index):
        rows, cols = np.divmod(np.asarray(flat_index), self.category.shape[1])
        ox, pw, _, oy, _, ph = self.geotransform
        return oy + (rows + 0.5) * ph, ox + (cols + 0.5) * pw


def build_strata(density: Raster, landcover: Raster, k: int = 5) -> StrataMap:
    """Strata from a burned-area density grid and a co-registered UMD class grid."""
    if not density.same_grid(landcover):
        raise ValidationError("density and land-cover grids are not co-registered")
    values = density.data[0].astype(np.float64)
    values = np.where(density.valid_mask(), values, 0.0)
    levels = quantile_levels(values, k)
    return StrataMap(reclassify_grid(landcover.data[0]), levels, values, density.geotransform, k)


def draw_sites(strata: StrataMap, allocation, role: str, existing=(), min_km: float = 200.0,
               seed: int = 0, id_prefix: str | None = None) -> list[Site]:
    """Random sites per density level following ``allocation``.

    Within a level a category is chosen with probability proportional to its
    summed density there, then a cell of that stratum uniformly. New sites
    keep ``min_km`` from every existing site of the other role and never reuse
    a cell. Raises SamplingInfeasible naming the most-blocked stratum when a
    site cannot be placed within the retry budget.
    """
    if role not in ("training", "validation"):
        raise ValidationError(f"unknown site role {role!r}")
    if len(allocation) != strata.k:
        raise ValidationError(f"allocation has {len(allocation)} levels, strata have {strata.k}")
    rng = np.random.default_rng(seed)
    prefix = id_prefix or ("T" if role == "training" else "V")

    cat_flat = strata.category.ravel()
    lev_flat = strata.level.ravel()
    dens_flat = strata.density.ravel()
    ox, pw, _, oy, _, ph = strata.geotransform
    ncols = strata.category.shape[1]

    used = set()
    for s in existing:
        r = int((s.lat - oy) // ph)
        c = int((s.lon - ox) // pw)
        used.add(r * ncols + c)
    others = [s for s in existing if s.role != role]
    other_lat = np.array([s.lat for s in others])
    other_lon = np.array([s.lon for s in others])

    sites = []
    for level, count in enumerate(allocation, start=1):
        if count == 0:
            continue
        in_level = lev_flat == level
        cells, weights, cats = [], [], []
        for cat in FIRE_PRONE:
            idx = np.flatnonzero(in_level & (cat_flat == cat))
            if idx.size:
                cats.append(cat)
                cells.append(idx)
                weights.append(dens_flat[idx].sum())
        if not cats:
            raise SamplingInfeasible(f"level {level} has no fire-prone cells", stratum=(None, level))
        p = np.asarray(weights) / np.sum(weights)
        for _ in range(count):
            rejected = np.zeros(len(cats), dtype=np.int64)
            for _attempt in range(MAX_RETRIES):
                j = int(rng.choice(len(cats), p=p))
                cell = int(cells[j][rng.integers(len(cells[j]))])
                if cell in used:
                    rejected[j] += 1
                    continue
                lat, lon = strata.centroid(cell)
                if others and haversine_km(lat, lon, other_lat, other_lon).min() < min_km:
                    rejected[j] += 1
                    continue
                break
            else:
                worst = Stratum(cats[int(np.argmax(rejected))], level)
                raise SamplingInfeasible(
                    f"cannot place a {role} site in level {level} after {MAX_RETRIES} tries; "
                    f"most blocked stratum: {worst.category.label} / level {level}",
                    stratum=worst,
                )
            used.add(cell)
            sites.append(Site(f"{prefix}{len(sites) + 1:03d}", role, float(lat), float(lon), cats[j], level))
    return sites


SITE_COLUMNS = ("id", "role", "lat", "lon", "category", "level")


def write_sites(sites, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SITE_COLUMNS)
        for s in sites:
            w.writerow([s.id, s.role, repr(s.lat), repr(s.lon), s.category.label, s.level])


def read_sites(path) -> list[Site]:
    sites = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in SITE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise FormatError(f"{path}: missing column(s) {', '.join(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                sites.append(Site(row["id"], row["role"], float(row["lat"]), float(row["lon"]),
                                  LandCoverCategory.parse(row["category"]), int(row["level"])))
            except (ValueError, ValidationError) as exc:
                raise FormatError(f"{path}: row {lineno}: {exc}") from exc
    return sites
