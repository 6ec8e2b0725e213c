"""Synthetic two-year scene stacks with known burned-area truth.

Reflectance is a linear mixture of a vegetation and a soil spectrum, with
the vegetation fraction following a seasonal cosine per region. A burn mixes
in a char spectrum, with the char fraction chosen so NBR drops by exactly
the event severity on the burn day; the char fraction then decays linearly
over a regime-dependent recovery horizon. Gaussian noise is added per band,
and smooth random cloud blobs set the QA cloud bit.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage.draw import polygon as draw_polygon

from .errors import ValidationError
from .pixel_pipeline import VCF_NODATA
from .raster_store import (
    LabeledSample,
    ManifestEntry,
    QaFlags,
    Raster,
    default_geotransform,
    save_manifest,
    write_raster,
    write_samples,
    year_bounds,
)

#                     blue  green  red   nir   swir1 swir2
VEGETATION = np.array([0.03, 0.06, 0.04, 0.40, 0.20, 0.09])
SOIL = np.array([0.10, 0.14, 0.18, 0.25, 0.32, 0.28])
CHAR = np.array([0.04, 0.05, 0.06, 0.08, 0.15, 0.20])
CLOUD = np.array([0.45, 0.45, 0.46, 0.48, 0.40, 0.32])

_NIR, _SWIR2 = 3, 5


@dataclass(frozen=True)
class Region:
    """Rectangular phenology region (half-open row/col ranges)."""

    rows: tuple[int, int]
    cols: tuple[int, int]
    regime: str = "tree"  # "tree" or "herbaceous"
    veg_base: float = 0.7
    veg_amplitude: float = 0.1
    peak_doy: float = 200.0
    tree_pct: int = 60
    nontree_pct: int = 25


@dataclass(frozen=True)
class BurnEvent:
    """``polygon`` vertices are (row, col); ``day`` is a two-year window day index."""

    polygon: tuple[tuple[float, float], ...]
    day: int
    severity: float = 0.4
    occluded: bool = False  # cloud-covered in every scene from the burn day on


@dataclass(frozen=True)
class SynthScenario:
    height: int = 256
    width: int = 256
    year: int = 2015
    revisit_days: int = 16
    first_day: int = 3
    regions: tuple[Region, ...] = ()
    events: tuple[BurnEvent, ...] = ()
    cloud_fraction: float = 0.2
    cloud_scale: float = 6.0
    noise_sigma: float = 0.02
    herb_recovery_days: int = 90
    tree_recovery_days: int = 540
    pixel_deg: float = 0.00025
    origin: tuple[float, float] = (20.0, 10.0)  # (lon, lat) of the upper-left corner
    rng_seed: int = 0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValidationError("grid size must be positive")
        if not 0 <= self.cloud_fraction < 1:
            raise ValidationError("cloud_fraction must be in [0, 1)")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")
        if self.revisit_days < 1:
            raise ValidationError("revisit_days must be >= 1")
        _, _, end = year_bounds(self.year)
        for ev in self.events:
            if not 0 <= ev.day < end:
                raise ValidationError(f"burn day {ev.day} outside the two-year window [0, {end})")
            if not ev.severity > 0:
                raise ValidationError("burn severity must be > 0")
            if len(ev.polygon) < 3:
                raise ValidationError("burn polygon needs at least 3 vertices")
        for r in self.regions:
            if r.regime not in ("tree", "herbaceous"):
                raise ValidationError(f"unknown regime {r.regime!r}")

    @property
    def current_year_start(self) -> int:
        return year_bounds(self.year)[1]

    def scene_days(self) -> list[int]:
        return list(range(self.first_day, year_bounds(self.year)[2], self.revisit_days))

    def date_of(self, day: int) -> dt.date:
        return dt.date(self.year - 1, 1, 1) + dt.timedelta(days=day)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_dict(cls, d) -> "SynthScenario":
        d = dict(d)
        d["regions"] = tuple(Region(**{**r, "rows": tuple(r["rows"]), "cols": tuple(r["cols"])})
                             for r in d.get("regions", ()))
        d["events"] = tuple(BurnEvent(**{**e, "polygon": tuple(tuple(p) for p in e["polygon"])})
                            for e in d.get("events", ()))
        if "origin" in d:
            d["origin"] = tuple(d["origin"])
        return cls(**d)


def two_regions(height: int, width: int) -> tuple[Region, ...]:
    """Tree-dominated left half, herbaceous right half."""
    half = width // 2
    return (
        Region((0, height), (0, half), "tree", 0.7, 0.1, 200.0, 60, 25),
        Region((0, height), (half, width), "herbaceous", 0.45, 0.25, 170.0, 5, 70),
    )


def _box(r0, c0, h, w):
    return ((r0, c0), (r0, c0 + w), (r0 + h, c0 + w), (r0 + h, c0))


def default_scenario(rng_seed: int = 0, size: int = 256) -> SynthScenario:
    """Five current-year burns, three in the tree half and two in the herbaceous half."""
    s = size / 256.0
    cy = year_bounds(SynthScenario.year)[1]

    def poly(*pts):
        return tuple((r * s, c * s) for r, c in pts)

    events = (
        BurnEvent(poly((20, 20), (22, 80), (60, 95), (75, 40), (50, 15)), cy + 70, 0.45),
        BurnEvent(poly(*_box(110, 30, 40, 30)), cy + 160, 0.35),
        BurnEvent(poly((180, 60), (185, 110), (230, 100), (215, 55)), cy + 250, 0.5),
        BurnEvent(poly((30, 150), (40, 230), (90, 220), (80, 160)), cy + 120, 0.35),
        BurnEvent(poly(*_box(150, 170, 50, 45)), cy + 270, 0.4),
    )
    return SynthScenario(height=size, width=size, regions=two_regions(size, size),
                         events=events, rng_seed=rng_seed)


def with_previous_year_burn(scenario: SynthScenario) -> tuple[SynthScenario, BurnEvent]:
    """Add an unrecovered previous-year burn in the tree half, away from other events."""
    s = scenario.height / 256.0
    ev = BurnEvent(tuple((r * s, c * s) for r, c in _box(160, 5, 30, 30)), 210, 0.45)
    return replace(scenario, events=scenario.events + (ev,)), ev


def with_occluded_burn(scenario: SynthScenario) -> tuple[SynthScenario, BurnEvent]:
    """Add a current-year tree burn hidden by clouds in every post-fire scene."""
    s = scenario.height / 256.0
    ev = BurnEvent(tuple((r * s, c * s) for r, c in _box(235, 5, 18, 40)),
                   scenario.current_year_start + 150, 0.45, occluded=True)
    return replace(scenario, events=scenario.events + (ev,)), ev


class SceneModel:
    """Noise-free reflectance model of a scenario, renderable at any day."""

    def __init__(self, scenario: SynthScenario):
        self.scenario = sc = scenario
        shape = (sc.height, sc.width)
        self.base = np.full(shape, 0.5)
        self.amp = np.zeros(shape)
        self.peak = np.full(shape, 180.0)
        self.tree = np.zeros(shape, dtype=bool)
        self.tree_pct = np.zeros(shape, dtype=np.uint8)
        self.nontree_pct = np.full(shape, 50, dtype=np.uint8)
        for r in sc.regions:
            sl = (slice(*r.rows), slice(*r.cols))
            self.base[sl] = r.veg_base
            self.amp[sl] = r.veg_amplitude
            self.peak[sl] = r.peak_doy
            self.tree[sl] = r.regime == "tree"
            self.tree_pct[sl] = r.tree_pct
            self.nontree_pct[sl] = r.nontree_pct
        self.horizon = np.where(self.tree, sc.tree_recovery_days, sc.herb_recovery_days).astype(np.float64)
        self.masks = [self._rasterize(ev.polygon) for ev in sc.events]
        self.char0 = []
        for ev, m in zip(sc.events, self.masks):
            # reflectance just before the burn, including earlier-listed events
            pre = self.render(ev.day, upto=len(self.char0))
            self.char0.append(char_fraction(pre[_NIR], pre[_SWIR2], ev.severity) * m)

    def _rasterize(self, poly):
        rows = [p[0] for p in poly]
        cols = [p[1] for p in poly]
        rr, cc = draw_polygon(rows, cols, shape=(self.scenario.height, self.scenario.width))
        mask = np.zeros((self.scenario.height, self.scenario.width), dtype=bool)
        mask[rr, cc] = True
        return mask

    def vegetation_fraction(self, day):
        doy = day % 365.25
        v = self.base + self.amp * np.cos(2 * math.pi * (doy - self.peak) / 365.25)
        return np.clip(v, 0.0, 1.0)

    def clean(self, day):
        v = self.vegetation_fraction(day)
        return v[np.newaxis] * VEGETATION[:, None, None] + (1 - v[np.newaxis]) * SOIL[:, None, None]

    def render(self, day, upto=None):
        """Noise-free, cloud-free reflectance ``(6, rows, cols)`` at ``day``."""
        refl = self.clean(day)
        n = len(self.scenario.events) if upto is None else upto
        for ev, c0 in zip(self.scenario.events[:n], self.char0[:n]):
            if day < ev.day:
                continue
            c = c0 * np.clip(1.0 - (day - ev.day) / self.horizon, 0.0, 1.0)
            refl = (1 - c)[np.newaxis] * refl + c[np.newaxis] * CHAR[:, None, None]
        return refl

    def truth(self) -> np.ndarray:
        start = self.scenario.current_year_start
        out = np.zeros((self.scenario.height, self.scenario.width), dtype=bool)
        for ev, m in zip(self.scenario.events, self.masks):
            if ev.day >= start:
                out |= m
        return out

    def vcf(self) -> np.ndarray:
        return np.stack([self.tree_pct, self.tree_pct, self.nontree_pct, self.nontree_pct])


def char_fraction(nir, swir2, severity):
    """Char mixing fraction that lowers NBR by ``severity`` (clipped to [0, 1])."""
    nir = np.asarray(nir, dtype=np.float64)
    swir2 = np.asarray(swir2, dtype=np.float64)
    target = (nir - swir2) / (nir + swir2) - severity
    dn = CHAR[_NIR] - nir
    ds = CHAR[_SWIR2] - swir2
    num = (1 + target) * swir2 - (1 - target) * nir
    den = (1 - target) * dn - (1 + target) * ds
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(np.abs(den) > 1e-12, num / den, 1.0)
    return np.clip(c, 0.0, 1.0)


def cloud_mask(rng, shape, fraction, scale):
    if fraction <= 0:
        return np.zeros(shape, dtype=bool)
    field_ = ndimage.gaussian_filter(rng.standard_normal(shape), scale, mode="wrap")
    cut = np.quantile(field_, 1.0 - fraction)
    return field_ > cut


@dataclass
class SynthOutputs:
    directory: Path
    manifest: Path
    truth: Path
    vcf: Path
    samples: Path | None = None
    scene_paths: list = field(default_factory=list)


def synth_generate(scenario: SynthScenario, out_dir, n_samples: int = 0) -> SynthOutputs:
    """Write scenes, manifest, truth mask and cover rasters for ``scenario``.

    With ``n_samples > 0`` a labeled training table drawn from the same
    spectral model is written too.
    """
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    sc = scenario
    model = SceneModel(sc)
    rng = np.random.default_rng(sc.rng_seed)
    lon0, lat0 = sc.origin
    gt = default_geotransform(sc.pixel_deg, lon0, lat0)

    entries = []
    for day in sc.scene_days():
        refl = model.render(day)
        if sc.noise_sigma > 0:
            refl = refl + rng.normal(0.0, sc.noise_sigma, size=refl.shape)
        clouds = cloud_mask(rng, (sc.height, sc.width), sc.cloud_fraction, sc.cloud_scale)
        for ev, m in zip(sc.events, model.masks):
            if ev.occluded and day >= ev.day:
                clouds |= m
        refl = np.where(clouds[np.newaxis], CLOUD[:, None, None], refl)
        qa = np.where(clouds, np.uint8(QaFlags.CLOUD), np.uint8(0)).astype(np.uint8)

        date = sc.date_of(day)
        rp = out / "scenes" / f"{date.isoformat()}_sr.bgrd"
        qp = out / "scenes" / f"{date.isoformat()}_qa.bgrd"
        write_raster(Raster(refl.astype(np.float32), -9999.0, gt), rp)
        write_raster(Raster(qa, 255, gt), qp)
        entries.append(ManifestEntry(date, rp, qp))

    manifest = out / "manifest.json"
    save_manifest(entries, manifest)
    truth = out / "truth.bgrd"
    write_raster(Raster(model.truth().astype(np.uint8), 255, gt), truth)
    vcf = out / "vcf.bgrd"
    write_raster(Raster(model.vcf(), VCF_NODATA, gt), vcf)
    (out / "scenario.json").write_text(sc.to_json())

    result = SynthOutputs(out, manifest, truth, vcf, scene_paths=entries)
    if n_samples > 0:
        result.samples = out / "samples.csv"
        write_samples(training_samples(sc, n_samples, rng_seed=sc.rng_seed + 1), result.samples)
    return result


def training_samples(scenario: SynthScenario, n: int, rng_seed: int = 0) -> list[LabeledSample]:
    """Labeled reflectance samples from the scenario's spectral model.

    Half burned (fresh to partly recovered char mixtures over random
    phenology states), half unburned (plain vegetation/soil mixtures).
    """
    rng = np.random.default_rng(rng_seed)
    regions = scenario.regions or two_regions(scenario.height, scenario.width)
    out = []
    for i in range(n):
        burned = i % 2 == 0
        r = regions[int(rng.integers(len(regions)))]
        doy = rng.uniform(0, 365)
        v = np.clip(r.veg_base + r.veg_amplitude * math.cos(2 * math.pi * (doy - r.peak_doy) / 365.25), 0, 1)
        refl = v * VEGETATION + (1 - v) * SOIL
        if burned:
            severity = rng.uniform(0.25, 0.6)
            c = float(char_fraction(refl[_NIR], refl[_SWIR2], severity))
            c *= 1.0 - rng.uniform(0.0, 0.3)
            refl = (1 - c) * refl + c * CHAR
        refl = refl + rng.normal(0.0, scenario.noise_sigma, size=6)
        out.append(LabeledSample(int(burned), tuple(float(x) for x in refl)))
    return out
