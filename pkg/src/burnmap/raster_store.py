"""BGRID raster container, scene manifests, QA masking and sample tables.

BGRID layout (little-endian)::

    magic     4s   b"BGRD"
    version   u16  1
    dtype     u8   0=float32, 1=uint8, 2=uint16
    reserved  u8   0
    width     u32
    height    u32
    bands     u16
    nodata    f64
    geotrans  6*f64  (origin_x, pixel_w, 0, origin_y, 0, -pixel_h)
    payload   band-sequential, row-major samples
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, FormatError, ValidationError

log = logging.getLogger(__name__)

MAGIC = b"BGRD"
VERSION = 1
_HEADER = struct.Struct("<4sHBBIIHd6d")
HEADER_SIZE = _HEADER.size

DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1"), 2: np.dtype("<u2")}
_CODE_OF = {np.dtype(v).name: k for k, v in DTYPE_CODES.items()}

BAND_NAMES = ("blue", "green", "red", "nir", "swir1", "swir2")

# Reflectances outside this window are treated like a QA flag.
REFLECTANCE_MIN = -0.2
REFLECTANCE_MAX = 1.6


class QaFlags(enum.IntFlag):
    FILL = 1 << 0
    CLOUD = 1 << 1
    CLOUD_SHADOW = 1 << 2
    WATER = 1 << 3
    SNOW_ICE = 1 << 4
    SATURATED = 1 << 5


def default_geotransform(pixel_deg: float = 0.00025, origin_x: float = 0.0,
                         origin_y: float = 0.0) -> tuple:
    return (float(origin_x), float(pixel_deg), 0.0, float(origin_y), 0.0, -float(pixel_deg))


@dataclass(eq=False)
class Raster:
    """A georeferenced multi-band grid.

    ``data`` always has shape ``(bands, height, width)``.
    """

    data: np.ndarray
    nodata: float = 0.0
    geotransform: tuple = field(default_factory=default_geotransform)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[np.newaxis]
        self.data = data
        self.geotransform = tuple(float(v) for v in self.geotransform)
        self.nodata = float(self.nodata)
        self.validate()

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1:]

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def pixel_w(self) -> float:
        return self.geotransform[1]

    @property
    def pixel_h(self) -> float:
        return -self.geotransform[5]

    def validate(self) -> None:
        if self.data.ndim != 3:
            raise ValidationError(f"raster data must be 3-D (bands, rows, cols), got {self.data.ndim}-D")
        if self.data.shape[0] < 1:
            raise ValidationError("raster must have at least one band")
        if self.data.dtype.name not in _CODE_OF:
            raise ValidationError(f"unsupported raster dtype {self.data.dtype}")
        if len(self.geotransform) != 6:
            raise ValidationError("geotransform must have 6 entries")
        if not self.pixel_w > 0 or not self.pixel_h > 0:
            raise ValidationError("pixel width and height must be positive")
        if self.geotransform[2] != 0.0 or self.geotransform[4] != 0.0:
            raise ValidationError("rotated geotransforms are not supported")
        if self.width > 0xFFFFFFFF or self.height > 0xFFFFFFFF or self.bands > 0xFFFF:
            raise ValidationError("raster dimensions exceed format limits")

    def band(self, i: int = 0) -> np.ndarray:
        return self.data[i]

    def valid_mask(self, band: int = 0) -> np.ndarray:
        """True where ``band`` differs from nodata (NaN nodata honoured)."""
        values = self.data[band]
        if math.isnan(self.nodata):
            return ~np.isnan(values)
        return values != self.nodata

    def same_grid(self, other: "Raster") -> bool:
        return self.shape == other.shape and self.geotransform == other.geotransform

    def identical(self, other: "Raster") -> bool:
        """Bit-for-bit equality of header fields and payload."""
        return (
            self.data.dtype == other.data.dtype
            and self.data.shape == other.data.shape
            and struct.pack("<d", self.nodata) == struct.pack("<d", other.nodata)
            and struct.pack("<6d", *self.geotransform) == struct.pack("<6d", *other.geotransform)
            and self.data.tobytes() == other.data.tobytes()
        )

    def like(self, data, nodata=None) -> "Raster":
        """New raster on the same grid."""
        return Raster(data, self.nodata if nodata is None else nodata, self.geotransform)


def write_raster(r: Raster, path) -> None:
    r.validate()
    code = _CODE_OF[r.data.dtype.name]
    header = _HEADER.pack(MAGIC, VERSION, code, 0, r.width, r.height, r.bands,
                          r.nodata, *r.geotransform)
    payload = np.ascontiguousarray(r.data, dtype=DTYPE_CODES[code]).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_raster(path) -> Raster:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < HEADER_SIZE:
        raise FormatError(f"{path}: truncated header ({len(blob)} of {HEADER_SIZE} bytes)")
    _magic, version, code, _reserved, width, height, bands, nodata, *gt = _HEADER.unpack_from(blob)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if code not in DTYPE_CODES:
        raise FormatError(f"{path}: unsupported dtype code {code}")
    dtype = DTYPE_CODES[code]
    expected = width * height * bands * dtype.itemsize
    payload = blob[HEADER_SIZE:]
    if len(payload) < expected:
        raise FormatError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    data = np.frombuffer(payload, dtype=dtype).reshape(bands, height, width).copy()
    try:
        return Raster(data, nodata, tuple(gt))
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def clear_mask(qa: Raster) -> np.ndarray:
    """Boolean mask of clear-land pixels: every QA bit unset."""
    if qa.bands != 1 or qa.dtype != np.uint8:
        raise ValidationError(f"QA raster must be 1-band uint8, got {qa.bands}-band {qa.dtype}")
    return qa.data[0] == 0


def reflectance_in_range(reflectance: np.ndarray) -> np.ndarray:
    """Per-pixel mask of reflectance stacks whose bands all lie in the accepted window.

    ``reflectance`` has the bands on axis 0.
    """
    ok = (reflectance >= REFLECTANCE_MIN) & (reflectance <= REFLECTANCE_MAX)
    return ok.all(axis=0)


# -- scenes and manifests ----------------------------------------------------

def day_index(date: dt.date, year: int) -> int:
    """Days since Jan 1 of the year before ``year``."""
    return (date - dt.date(year - 1, 1, 1)).days


def year_bounds(year: int) -> tuple[int, int, int]:
    """(first previous-year day, first current-year day, one past last current-year day)."""
    start = dt.date(year - 1, 1, 1)
    return 0, (dt.date(year, 1, 1) - start).days, (dt.date(year + 1, 1, 1) - start).days


@dataclass(eq=False)
class SceneObservation:
    date: dt.date
    reflectance: Raster
    qa: Raster

    def __post_init__(self):
        if self.reflectance.bands != 6 or self.reflectance.dtype != np.float32:
            raise ValidationError("reflectance raster must be 6-band float32")
        if self.qa.bands != 1 or self.qa.dtype != np.uint8:
            raise ValidationError("QA raster must be 1-band uint8")
        if not self.reflectance.same_grid(self.qa):
            raise DimensionMismatch(f"scene {self.date}: reflectance and QA grids differ")

    def usable(self) -> np.ndarray:
        """Clear-land pixels whose reflectances are within the accepted window."""
        return clear_mask(self.qa) & reflectance_in_range(self.reflectance.data)


@dataclass(frozen=True)
class ManifestEntry:
    date: dt.date
    reflectance: Path
    qa: Path

    def load(self) -> SceneObservation:
        return SceneObservation(self.date, read_raster(self.reflectance), read_raster(self.qa))


@dataclass
class SceneManifest:
    year: int
    previous: list[ManifestEntry]
    current: list[ManifestEntry]

    def __post_init__(self):
        for name, entries in (("previous", self.previous), ("current", self.current)):
            days = [e.date for e in entries]
            if any(b <= a for a, b in zip(days, days[1:])):
                raise FormatError(f"manifest {name}-year dates are not strictly increasing")

    @property
    def entries(self) -> list[ManifestEntry]:
        return self.previous + self.current

    def __len__(self):
        return len(self.previous) + len(self.current)

    def day(self, entry: ManifestEntry) -> int:
        return day_index(entry.date, self.year)


def _parse_date(text, where) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{where}: bad date {text!r}") from exc


def load_manifest(path, year: int | None = None) -> SceneManifest:
    """Read a JSON manifest and split it into previous- and current-year scenes.

    Relative paths resolve against the manifest's directory. ``year`` defaults
    to the latest year present. Scenes outside the two-year window are dropped.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, list):
        raise FormatError(f"{path}: manifest must be a JSON array")
    if not raw:
        raise FormatError(f"{path}: manifest is empty")
    base = path.parent
    entries = []
    for i, item in enumerate(raw):
        where = f"{path} entry {i}"
        if not isinstance(item, dict):
            raise FormatError(f"{where}: not an object")
        for key in ("date", "reflectance", "qa"):
            if key not in item:
                raise FormatError(f"{where}: missing '{key}'")
        entries.append(ManifestEntry(_parse_date(item["date"], where),
                                     base / item["reflectance"], base / item["qa"]))
    return manifest_from_entries(entries, year)


def manifest_from_entries(entries, year: int | None = None) -> SceneManifest:
    entries = sorted(entries, key=lambda e: e.date)
    if year is None:
        year = entries[-1].date.year
    previous = [e for e in entries if e.date.year == year - 1]
    current = [e for e in entries if e.date.year == year]
    dropped = len(entries) - len(previous) - len(current)
    if dropped:
        log.warning("dropped %d scenes outside %d-%d", dropped, year - 1, year)
    return SceneManifest(year, previous, current)


def save_manifest(entries, path) -> None:
    path = Path(path)
    base = path.parent.resolve()
    out = []
    for e in sorted(entries, key=lambda e: e.date):
        out.append({
            "date": e.date.isoformat(),
            "reflectance": _relative(e.reflectance, base),
            "qa": _relative(e.qa, base),
        })
    path.write_text(json.dumps(out, indent=1))


def _relative(p, base) -> str:
    p = Path(p).resolve()
    try:
        return p.relative_to(base).as_posix()
    except ValueError:
        return str(p)


# -- sample tables -------------------------------------------------------------

SAMPLE_COLUMNS = ("label",) + BAND_NAMES


@dataclass(frozen=True)
class LabeledSample:
    label: int  # 1 burned, 0 unburned
    reflectance: tuple[float, float, float, float, float, float]

    @property
    def burned(self) -> bool:
        return self.label == 1


def read_samples(path) -> list[LabeledSample]:
    samples = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FormatError(f"{path}: empty sample table")
        header = [h.strip().lower() for h in header]
        missing = [c for c in SAMPLE_COLUMNS if c not in header]
        if missing:
            raise FormatError(f"{path}: missing column(s) {', '.join(missing)}")
        cols = [header.index(c) for c in SAMPLE_COLUMNS]
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise FormatError(f"{path}: row {lineno}: expected {len(header)} cells, got {len(row)}")
            try:
                values = [float(row[c]) for c in cols]
            except ValueError as exc:
                raise FormatError(f"{path}: row {lineno}: non-numeric cell ({exc})") from exc
            label = values[0]
            if label not in (0.0, 1.0):
                raise FormatError(f"{path}: row {lineno}: label {row[cols[0]]!r} not in {{0,1}}")
            if not all(math.isfinite(v) for v in values[1:]):
                raise FormatError(f"{path}: row {lineno}: non-finite reflectance")
            samples.append(LabeledSample(int(label), tuple(values[1:])))
    return samples


def write_samples(samples, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SAMPLE_COLUMNS)
        for s in samples:
            w.writerow([s.label, *(repr(float(v)) for v in s.reflectance)])
