"""Burn-sensitive spectral indices and the 14-element classifier feature vector.

Every formula is written once and works on Python floats and numpy arrays
alike, so the scalar API and the raster path produce bit-identical values.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import DegenerateDenominator, ValidationError

DENOMINATOR_TOL = 1e-10
SAVI_L = 0.5

INDEX_NAMES = ("NBR", "NBR2", "BAI", "MIRBI", "NDVI", "GEMI", "SAVI", "NDMI")
FEATURE_NAMES = ("blue", "green", "red", "nir", "swir1", "swir2") + INDEX_NAMES
N_FEATURES = len(FEATURE_NAMES)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}


class ReflectanceVector(NamedTuple):
    blue: float
    green: float
    red: float
    nir: float
    swir1: float
    swir2: float


def _gemi_eta(red, nir):
    return (2.0 * (nir * nir - red * red) + 1.5 * nir + 0.5 * red) / (nir + red + 0.5)


# name -> (value(b), denominators(b)); ``b`` is a ReflectanceVector of floats or arrays
_FORMULAS = {
    "NBR": (lambda b: (b.nir - b.swir2) / (b.nir + b.swir2),
            lambda b: (b.nir + b.swir2,)),
    "NBR2": (lambda b: (b.swir1 - b.swir2) / (b.swir1 + b.swir2),
             lambda b: (b.swir1 + b.swir2,)),
    "BAI": (lambda b: 1.0 / ((b.nir - 0.06) * (b.nir - 0.06) + (b.red - 0.1) * (b.red - 0.1)),
            lambda b: ((b.nir - 0.06) * (b.nir - 0.06) + (b.red - 0.1) * (b.red - 0.1),)),
    "MIRBI": (lambda b: 10.0 * b.swir2 - 0.98 * b.swir1 + 2.0,
              lambda b: ()),
    "NDVI": (lambda b: (b.nir - b.red) / (b.nir + b.red),
             lambda b: (b.nir + b.red,)),
    "GEMI": (lambda b: (_gemi_eta(b.red, b.nir) * (1.0 - 0.25 * _gemi_eta(b.red, b.nir))
                        - (b.red - 0.125)) / (1.0 - b.red),
             lambda b: (b.nir + b.red + 0.5, 1.0 - b.red)),
    "SAVI": (lambda b: (1.0 + SAVI_L) * (b.nir - b.red) / (b.nir + b.red + SAVI_L),
             lambda b: (b.nir + b.red + SAVI_L,)),
    "NDMI": (lambda b: (b.nir - b.swir1) / (b.nir + b.swir1),
             lambda b: (b.nir + b.swir1,)),
}


def _as_vector(r) -> ReflectanceVector:
    if isinstance(r, ReflectanceVector):
        values = r
    else:
        values = tuple(r)
        if len(values) != 6:
            raise ValidationError(f"expected 6 reflectances, got {len(values)}")
    values = [float(v) for v in values]
    if not all(math.isfinite(v) for v in values):
        raise ValidationError("reflectances must be finite")
    return ReflectanceVector(*(np.float64(v) for v in values))


def spectral_index(kind: str, r) -> float:
    """Value of one index for one reflectance vector.

    Raises DegenerateDenominator when any denominator of the formula is
    within 1e-10 of zero.
    """
    try:
        value, denominators = _FORMULAS[kind]
    except KeyError:
        raise ValidationError(f"unknown spectral index {kind!r}") from None
    b = _as_vector(r)
    for d in denominators(b):
        if abs(d) < DENOMINATOR_TOL:
            raise DegenerateDenominator(f"{kind} is singular at {tuple(float(v) for v in b)}")
    return float(value(b))


def feature_vector(r) -> np.ndarray:
    """The 14 classifier inputs: six reflectances followed by the eight indices."""
    b = _as_vector(r)
    out = np.empty(N_FEATURES, dtype=np.float64)
    out[:6] = b
    for i, kind in enumerate(INDEX_NAMES):
        out[6 + i] = spectral_index(kind, b)
    return out


def index_array(kind: str, reflectance: np.ndarray):
    """Vectorised index over a ``(6, ...)`` reflectance array.

    Returns ``(values, ok)`` where ``ok`` is False at singular pixels; values
    there are unspecified.
    """
    value, denominators = _FORMULAS[kind]
    b = ReflectanceVector(*np.asarray(reflectance, dtype=np.float64))
    ok = np.ones(b.red.shape, dtype=bool)
    for d in denominators(b):
        ok &= np.abs(d) >= DENOMINATOR_TOL
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        values = value(b)
    return np.asarray(values, dtype=np.float64), ok


def feature_stack(reflectance: np.ndarray):
    """Features for every pixel of a ``(6, ...)`` reflectance array.

    Returns ``(features, ok)``: ``features`` has shape ``(..., 14)`` and
    ``ok`` marks pixels whose vector assembled without singularities and
    with all entries finite.
    """
    refl = np.asarray(reflectance, dtype=np.float64)
    if refl.shape[0] != 6:
        raise ValidationError(f"expected 6 bands on axis 0, got {refl.shape[0]}")
    feats = np.empty(refl.shape[1:] + (N_FEATURES,), dtype=np.float64)
    ok = np.isfinite(refl).all(axis=0)
    for i in range(6):
        feats[..., i] = refl[i]
    for i, kind in enumerate(INDEX_NAMES):
        values, good = index_array(kind, refl)
        feats[..., 6 + i] = values
        ok &= good
    ok &= np.isfinite(feats).all(axis=-1)
    return feats, ok


def feature_matrix(samples):
    """Feature matrix and labels for labeled samples.

    Samples whose feature vector cannot be assembled are dropped; the mask of
    kept rows is returned as the third element.
    """
    refl = np.array([s.reflectance for s in samples], dtype=np.float64).reshape(-1, 6)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    feats, ok = feature_stack(refl.T)
    return feats[ok], labels[ok], ok
