import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from burnmap.errors import DegenerateDenominator, ValidationError
from burnmap.raster_store import LabeledSample
from burnmap.spectral import (
    FEATURE_NAMES,
    INDEX_NAMES,
    ReflectanceVector,
    feature_matrix,
    feature_stack,
    feature_vector,
    index_array,
    spectral_index,
)

# blue, green, red, nir, swir1, swir2
HAND = ReflectanceVector(0.05, 0.08, 0.1, 0.4, 0.2, 0.1)


def oracle(kind, b):
    """Direct transcription of the index definitions, kept separate from the library."""
    blue, green, red, nir, swir1, swir2 = b
    if kind == "NBR":
        return (nir - swir2) / (nir + swir2)
    if kind == "NBR2":
        return (swir1 - swir2) / (swir1 + swir2)
    if kind == "BAI":
        return 1 / ((nir - 0.06) ** 2 + (red - 0.1) ** 2)
    if kind == "MIRBI":
        return 10 * swir2 - 0.98 * swir1 + 2
    if kind == "NDVI":
        return (nir - red) / (nir + red)
    if kind == "GEMI":
        eta = (2 * (nir ** 2 - red ** 2) + 1.5 * nir + 0.5 * red) / (nir + red + 0.5)
        return (eta * (1 - 0.25 * eta) - (red - 0.125)) / (1 - red)
    if kind == "SAVI":
        return 1.5 * (nir - red) / (nir + red + 0.5)
    if kind == "NDMI":
        return (nir - swir1) / (nir + swir1)
    raise KeyError(kind)


# hand-derived values for HAND
EXPECTED = {
    "NBR": 0.3 / 0.5,
    "NBR2": 0.1 / 0.3,
    "BAI": 1 / (0.34 ** 2),
    "MIRBI": 1.0 - 0.196 + 2,
    "NDVI": 0.3 / 0.5,
    "GEMI": None,
    "SAVI": 1.5 * 0.3 / 1.0,
    "NDMI": 0.2 / 0.6,
}


@pytest.mark.parametrize("kind", INDEX_NAMES)
def test_hand_values(kind):
    expected = EXPECTED[kind] if EXPECTED[kind] is not None else oracle(kind, HAND)
    assert spectral_index(kind, HAND) == pytest.approx(expected, abs=1e-9)


def test_gemi_hand_value():
    # nir 0.4, red 0.1: eta = 0.95, GEMI = (0.95 * 0.7625 - (-0.025)) / 0.9
    assert spectral_index("GEMI", (0, 0, 0.1, 0.4, 0, 0)) == pytest.approx(0.749375 / 0.9, abs=1e-12)


@pytest.mark.parametrize("kind", ["NBR", "NDVI", "NBR2", "NDMI"])
def test_normalized_difference_of_equal_bands_is_zero(kind):
    assert spectral_index(kind, (0.2,) * 6) == 0.0


def test_mirbi_constant_at_zero():
    assert spectral_index("MIRBI", (0.3, 0.3, 0.3, 0.3, 0.0, 0.0)) == 2.0


@pytest.mark.parametrize("kind, r", [
    ("NBR", (0.1, 0.1, 0.1, 0.0, 0.1, 0.0)),
    ("NDVI", (0.1, 0.1, 0.0, 0.0, 0.1, 0.1)),
    ("NBR2", (0.1, 0.1, 0.1, 0.1, 0.0, 0.0)),
    ("NDMI", (0.1, 0.1, 0.1, 0.2, -0.2, 0.1)),
    ("BAI", (0.1, 0.1, 0.1, 0.06, 0.1, 0.1)),
    ("GEMI", (0.1, 0.1, 1.0, 0.3, 0.1, 0.1)),
    ("SAVI", (0.1, 0.1, -0.2, -0.3, 0.1, 0.1)),
])
def test_degenerate_denominators(kind, r):
    with pytest.raises(DegenerateDenominator):
        spectral_index(kind, r)


def test_denominator_tolerance_boundary():
    # nir + swir2 = 1e-9 is above the 1e-10 tolerance
    assert math.isfinite(spectral_index("NBR", (0, 0, 0, 0.5e-9, 0, 0.5e-9)))
    with pytest.raises(DegenerateDenominator):
        spectral_index("NBR", (0, 0, 0, 0.2e-10, 0, 0.2e-10))


def test_bad_inputs():
    with pytest.raises(ValidationError):
        spectral_index("NOPE", HAND)
    with pytest.raises(ValidationError):
        spectral_index("NBR", (0.1,) * 5)
    with pytest.raises(ValidationError):
        spectral_index("NBR", (0.1, 0.1, 0.1, math.nan, 0.1, 0.1))


def test_feature_vector_order():
    f = feature_vector(HAND)
    assert len(f) == 14 and len(FEATURE_NAMES) == 14
    assert f[:6].tolist() == list(HAND)
    assert FEATURE_NAMES[6:] == INDEX_NAMES
    for i, kind in enumerate(INDEX_NAMES):
        assert f[6 + i] == spectral_index(kind, HAND)


band = st.floats(min_value=-0.2, max_value=1.6, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.tuples(band, band, band, band, band, band))
def test_indices_match_oracle(r):
    for kind in INDEX_NAMES:
        try:
            value = spectral_index(kind, r)
        except DegenerateDenominator:
            continue
        expected = oracle(kind, r)
        assert value == pytest.approx(expected, rel=1e-9, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.tuples(band, band, band, band, band, band))
def test_normalized_differences_bounded_for_nonnegative_bands(r):
    r = tuple(abs(v) for v in r)
    for kind in ("NBR", "NBR2", "NDVI", "NDMI"):
        try:
            assert -1.0 <= spectral_index(kind, r) <= 1.0
        except DegenerateDenominator:
            pass


def test_array_path_bit_identical_to_scalar(rng):
    refl = rng.uniform(-0.2, 1.6, size=(6, 20, 20))
    refl[3, 0, 0], refl[5, 0, 0] = 0.1, -0.1  # singular NBR
    feats, ok = feature_stack(refl)
    assert not ok[0, 0]
    for r in range(20):
        for c in range(20):
            try:
                expected = feature_vector(refl[:, r, c])
            except DegenerateDenominator:
                assert not ok[r, c]
                continue
            assert ok[r, c]
            assert feats[r, c].tobytes() == expected.tobytes()


def test_index_array_flags_singular_pixels():
    refl = np.full((6, 1, 2), 0.2)
    refl[3, 0, 1] = refl[2, 0, 1] = 0.0
    values, ok = index_array("NDVI", refl)
    assert ok.tolist() == [[True, False]]
    assert values[0, 0] == 0.0


def test_feature_matrix_drops_singular_samples():
    samples = [LabeledSample(1, (0.1, 0.1, 0.1, 0.4, 0.2, 0.1)), LabeledSample(0, (0.1, 0.1, 0.0, 0.0, 0.1, 0.0))]
    X, y, ok = feature_matrix(samples)
    assert X.shape == (1, 14) and y.tolist() == [1] and ok.tolist() == [True, False]


@pytest.mark.parametrize("kind, r, expected", [
    ("NBR", (0.1, 0.1, 0.1, 0.3, 0.1, 0.3), 0.0),
    ("NBR", (0, 0, 0, 0.3, 0, 0.1), 0.5),
    ("NBR2", (0, 0, 0, 0, 0.2, 0.1), 1 / 3),
    ("BAI", (0, 0, 0.2, 0.16, 0, 0), 50.0),
    ("MIRBI", (0, 0, 0, 0, 0.2, 0.1), 2.804),
    ("NDVI", (0, 0, 0.25, 0.5, 0, 0), 1 / 3),
    ("SAVI", (0, 0, 0.1, 0.4, 0, 0), 0.45),
    ("NDMI", (0, 0, 0, 0.4, 0.2, 0), 1 / 3),
])
def test_worked_examples(kind, r, expected):
    assert spectral_index(kind, r) == pytest.approx(expected, abs=1e-9)


def test_feature_vector_prefix_and_singular_bai():
    r = (0.05, 0.07, 0.09, 0.12, 0.20, 0.22)
    assert feature_vector(r)[:6].tolist() == list(r)
    with pytest.raises(DegenerateDenominator):
        feature_vector((0.05, 0.07, 0.1, 0.06, 0.2, 0.2))


positive = st.floats(min_value=1e-3, max_value=1.6)


@settings(max_examples=200, deadline=None)
@given(st.tuples(positive, positive, positive, positive, positive, positive))
def test_antisymmetry_and_bai_sign(r):
    b, g, red, nir, s1, s2 = r
    try:
        nbr, ndvi, bai = (spectral_index(k, r) for k in ("NBR", "NDVI", "BAI"))
    except DegenerateDenominator:
        assume(False)
    assert spectral_index("NBR", (b, g, red, s2, s1, nir)) == -nbr
    assert spectral_index("NDVI", (b, g, nir, red, s1, s2)) == -ndvi
    assert bai > 0
