import json

import numpy as np
import pytest

from burnmap import synth
from burnmap.errors import ValidationError
from burnmap.raster_store import QaFlags, load_manifest, read_raster, read_samples
from burnmap.spectral import index_array


def small(events=(), **kw):
    base = dict(height=48, width=48, regions=synth.two_regions(48, 48), events=events, rng_seed=3)
    base.update(kw)
    return synth.SynthScenario(**base)


def box(r0, c0, h, w):
    return ((r0, c0), (r0, c0 + w), (r0 + h, c0 + w), (r0 + h, c0))


def test_no_events_gives_empty_truth(tmp_path):
    out = synth.synth_generate(small(), tmp_path)
    assert not read_raster(out.truth).data.any()


@pytest.mark.parametrize("regime_col", [5, 30])  # tree half, herbaceous half
def test_severity_sets_nbr_drop(regime_col):
    ev = synth.BurnEvent(box(10, regime_col, 8, 8), 450, 0.4)
    model = synth.SceneModel(small((ev,)))
    pre = model.render(ev.day, upto=0)
    post = model.render(ev.day)
    m = model.masks[0]
    drop = index_array("NBR", pre)[0] - index_array("NBR", post)[0]
    assert np.allclose(drop[m], 0.4, atol=1e-9)
    assert np.allclose(drop[~m], 0.0)
    assert (index_array("NDVI", post)[0][m] < index_array("NDVI", pre)[0][m]).all()


def test_recovery_is_linear_and_regime_dependent():
    sc = small()
    ev_tree = synth.BurnEvent(box(5, 5, 6, 6), 400, 0.4)
    ev_herb = synth.BurnEvent(box(5, 30, 6, 6), 400, 0.4)
    model = synth.SceneModel(small((ev_tree, ev_herb)))
    clean = model.clean(400 + sc.herb_recovery_days)
    later = model.render(400 + sc.herb_recovery_days)
    assert np.allclose(later[:, 5:11, 30:36], clean[:, 5:11, 30:36])  # herbaceous recovered
    assert not np.allclose(later[:, 5:11, 5:11], clean[:, 5:11, 5:11])  # tree still scarred
    c0 = model.char0[0][7, 7]
    assert c0 > 0
    half = model.render(400 + sc.tree_recovery_days // 2)
    # mixing fraction halves at half the horizon: check via the NIR band mix
    v = model.clean(400 + sc.tree_recovery_days // 2)[3, 7, 7]
    c = (v - half[3, 7, 7]) / (v - synth.CHAR[3])
    assert c == pytest.approx(c0 / 2, rel=1e-9)


def test_truth_marks_current_year_only(tmp_path):
    prev = synth.BurnEvent(box(5, 5, 6, 6), 200, 0.4)
    cur = synth.BurnEvent(box(20, 20, 6, 6), 500, 0.4)
    out = synth.synth_generate(small((prev, cur)), tmp_path)
    truth = read_raster(out.truth).data[0].astype(bool)
    assert not truth[5:11, 5:11].any()
    assert truth[21:25, 21:25].all()


def test_occluded_burn_is_clouded_after_fire(tmp_path):
    ev = synth.BurnEvent(box(10, 10, 6, 6), 500, 0.4, occluded=True)
    out = synth.synth_generate(small((ev,), cloud_fraction=0.0), tmp_path)
    manifest = load_manifest(out.manifest)
    m = synth.SceneModel(small((ev,))).masks[0]
    for entry in manifest.entries:
        qa = read_raster(entry.qa).data[0]
        if manifest.day(entry) >= 500:
            assert (qa[m] & QaFlags.CLOUD).all()
        else:
            assert not qa.any()


def test_cloud_fraction_and_seasonality(tmp_path):
    out = synth.synth_generate(small(cloud_fraction=0.2, noise_sigma=0.0), tmp_path)
    manifest = load_manifest(out.manifest)
    fractions = [np.mean(read_raster(e.qa).data[0] != 0) for e in manifest.entries]
    assert np.mean(fractions) == pytest.approx(0.2, abs=0.02)
    model = synth.SceneModel(small())
    ndvi = [index_array("NDVI", model.clean(d))[0][0, 0] for d in range(365, 730, 5)]
    peak_day = (365 + 5 * int(np.argmax(ndvi))) % 365.25
    assert abs(peak_day - synth.two_regions(48, 48)[0].peak_doy) <= 5


def test_generation_is_deterministic(tmp_path):
    sc = small((synth.BurnEvent(box(10, 10, 6, 6), 500, 0.4),))
    a = synth.synth_generate(sc, tmp_path / "a", n_samples=50)
    b = synth.synth_generate(sc, tmp_path / "b", n_samples=50)
    for pa, pb in zip(sorted((tmp_path / "a").rglob("*.*")), sorted((tmp_path / "b").rglob("*.*"))):
        assert pa.name == pb.name and pa.read_bytes() == pb.read_bytes()
    samples = read_samples(a.samples)
    assert len(samples) == 50 and {s.label for s in samples} == {0, 1}


def test_scenario_json_round_trip():
    sc, _ = synth.with_previous_year_burn(synth.default_scenario(4, 64))
    back = synth.SynthScenario.from_dict(json.loads(sc.to_json()))
    assert back == sc


@pytest.mark.parametrize("kw", [
    {"events": (synth.BurnEvent(box(0, 0, 4, 4), 800, 0.4),)},
    {"events": (synth.BurnEvent(box(0, 0, 4, 4), 400, 0.0),)},
    {"events": (synth.BurnEvent(((0, 0), (1, 1)), 400, 0.4),)},
    {"cloud_fraction": 1.0},
    {"noise_sigma": -0.1},
    {"regions": (synth.Region((0, 4), (0, 4), regime="desert"),)},
])
def test_invalid_scenarios(kw):
    with pytest.raises(ValidationError):
        small(**kw)


def test_default_scenario_mixes_regimes():
    sc = synth.default_scenario(0, 256)
    model = synth.SceneModel(sc)
    assert len(sc.events) == 5
    regimes = {bool(model.tree[m].mean() > 0.5) for m in model.masks}
    assert regimes == {True, False}
    assert all(ev.day >= sc.current_year_start for ev in sc.events)
