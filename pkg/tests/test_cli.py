import csv
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from burnmap import synth
from burnmap.cli import main
from burnmap.raster_store import Raster, default_geotransform, read_raster, write_raster, write_samples
from burnmap.sampling import great_circle_km, read_sites


def run(*args):
    return main([str(a) for a in args])


# -- train ---------------------------------------------------------------------

def test_train_full_size_table_under_a_minute(tmp_path):
    sc = synth.default_scenario(0, 64)
    sc = synth.SynthScenario.from_dict({**json.loads(sc.to_json()), "noise_sigma": 0.05})
    write_samples(synth.training_samples(sc, 12881, rng_seed=8), tmp_path / "s.csv")
    start = time.perf_counter()
    assert run("train", tmp_path / "s.csv", "-o", tmp_path / "m.json") == 0
    elapsed = time.perf_counter() - start
    assert elapsed < 60, f"training took {elapsed:.1f} s"
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["n_samples"] == 12881 and len(doc["trees"]) == 100


def test_train_same_seed_is_byte_identical(tmp_path):
    write_samples(synth.training_samples(synth.default_scenario(0, 64), 300, 1), tmp_path / "s.csv")
    for name in ("a", "b"):
        assert run("train", tmp_path / "s.csv", "-o", tmp_path / f"{name}.json", "--trees", 10, "--seed", 3) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_train_malformed_csv(tmp_path, capsys):
    p = tmp_path / "s.csv"
    p.write_text("label,blue,green,red,nir,swir1,swir2\n1,0.1,0.1,0.1,0.4,0.2,0.1\n0,0.1,x,0.1,0.4,0.2,0.1\n")
    assert run("train", p, "-o", tmp_path / "m.json") == 3
    assert "row 3" in capsys.readouterr().err


def test_train_single_class_is_computation_error(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("label,blue,green,red,nir,swir1,swir2\n1,0.1,0.1,0.1,0.4,0.2,0.1\n1,0.1,0.1,0.1,0.3,0.2,0.1\n")
    assert run("train", p, "-o", tmp_path / "m.json") == 4


def test_usage_errors():
    with pytest.raises(SystemExit) as info:
        run("nope")
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        run("train")
    assert info.value.code == 2


# -- map -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def single_burn(tmp_path_factory):
    """64x64 scene, no clouds, one 200-pixel tree burn, plus a trained model."""
    d = tmp_path_factory.mktemp("single")
    sc = synth.SynthScenario(height=64, width=64, regions=synth.two_regions(64, 64), cloud_fraction=0.0,
                             events=(synth.BurnEvent(((20, 6), (20, 25), (29, 25), (29, 6)), 365 + 180, 0.4),),
                             rng_seed=5)
    out = synth.synth_generate(sc, d / "scene", n_samples=1500)
    assert run("train", out.samples, "-o", d / "model.json", "--trees", 40, "--seed", 2) == 0
    return d, out


def test_map_recovers_single_burn(single_burn):
    d, out = single_burn
    assert run("map", "--manifest", out.manifest, "--vcf", out.vcf, "--model", d / "model.json",
               "--out-dir", d / "map") == 0
    for name in ("probability", "seeds", "diagnostics", "ba_mask"):
        assert (d / "map" / f"{name}.bgrd").exists()
    truth = read_raster(out.truth).data[0].astype(bool)
    ba = read_raster(d / "map" / "ba_mask.bgrd").data[0] == 1
    assert truth.sum() == 200
    assert np.mean(ba == truth) >= 0.95
    assert (ba & truth).sum() / truth.sum() >= 0.95
    summary = json.loads((d / "map" / "summary.json").read_text())
    assert summary["burned_pixels"] == int(ba.sum())


def test_map_threads_do_not_change_outputs(single_burn):
    d, out = single_burn
    for threads in (1, 3):
        assert run("map", "--manifest", out.manifest, "--vcf", out.vcf, "--model", d / "model.json",
                   "--out-dir", d / f"t{threads}", "--threads", threads, "--tile-rows", 9) == 0
    for name in ("probability", "seeds", "diagnostics", "ba_mask"):
        assert (d / "t1" / f"{name}.bgrd").read_bytes() == (d / "t3" / f"{name}.bgrd").read_bytes()


def test_map_composed_from_stages_matches_single_command(single_burn, tmp_path):
    d, out = single_burn
    cfg = {"manifest": str(out.manifest), "vcf": str(out.vcf), "out_dir": str(tmp_path / "one"),
           "samples": str(out.samples), "forest": {"n_trees": 15, "rng_seed": 9}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert run("map", "--config", tmp_path / "cfg.json") == 0
    assert run("train", out.samples, "-o", tmp_path / "m.json", "--trees", 15, "--seed", 9) == 0
    assert run("map", "--manifest", out.manifest, "--vcf", out.vcf, "--model", tmp_path / "m.json",
               "--out-dir", tmp_path / "two") == 0
    for name in ("probability", "seeds", "diagnostics", "ba_mask"):
        assert (tmp_path / "one" / f"{name}.bgrd").read_bytes() == (tmp_path / "two" / f"{name}.bgrd").read_bytes()


def test_map_flags_override_config(single_burn, tmp_path):
    d, out = single_burn
    cfg = {"manifest": str(out.manifest), "vcf": str(out.vcf), "out_dir": str(tmp_path / "cfg"),
           "model": str(d / "model.json"), "thresholds": {"t_dndvi": 2.0}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert run("map", "--config", tmp_path / "cfg.json") == 0
    strict = json.loads((tmp_path / "cfg" / "summary.json").read_text())
    assert strict["seeds"] == 0 and strict["diagnostics"]["pass"] == 0
    assert run("map", "--config", tmp_path / "cfg.json", "--t-dndvi", 0.2, "--out-dir", tmp_path / "flag") == 0
    assert json.loads((tmp_path / "flag" / "summary.json").read_text())["seeds"] > 0


def test_map_errors_report_stage(single_burn, tmp_path, capsys):
    d, out = single_burn
    (tmp_path / "empty.json").write_text("[]")
    code = run("map", "--manifest", tmp_path / "empty.json", "--vcf", out.vcf, "--model", d / "model.json",
               "--out-dir", tmp_path / "o")
    assert code == 3
    assert "load manifest" in capsys.readouterr().err
    bad_vcf = tmp_path / "vcf.bgrd"
    write_raster(Raster(np.zeros((4, 8, 8), dtype=np.uint8), 255), bad_vcf)
    code = run("map", "--manifest", out.manifest, "--vcf", bad_vcf, "--model", d / "model.json",
               "--out-dir", tmp_path / "o")
    assert code == 4
    assert "per-pixel processing" in capsys.readouterr().err
    (tmp_path / "cfg.json").write_text(json.dumps({"manifest": "m", "vcf": "v", "out_dir": "o", "model": "x",
                                                   "thresholds": {"t_ndvi": 0.2, "bogus": 1}}))
    assert run("map", "--config", tmp_path / "cfg.json") == 4
    assert "bogus" in capsys.readouterr().err
    assert run("map", "--manifest", out.manifest, "--vcf", out.vcf, "--out-dir", tmp_path / "o") == 4


# -- validate / grid / regress / sample ----------------------------------------

def mask_raster(path, data, pixel=0.025):
    write_raster(Raster(np.asarray(data, dtype=np.uint8), 255, default_geotransform(pixel, 10.0, 5.0)), path)


def test_validate_identical_masks(tmp_path):
    data = (np.random.default_rng(0).random((20, 20)) < 0.3).astype(np.uint8)
    mask_raster(tmp_path / "a.bgrd", data)
    assert run("validate", tmp_path / "a.bgrd", tmp_path / "a.bgrd", "-o", tmp_path / "s.json",
               "--csv", tmp_path / "s.csv") == 0
    doc = json.loads((tmp_path / "s.json").read_text())
    assert (doc["commission_error"], doc["omission_error"], doc["overall_accuracy"]) == (0, 0, 1)
    assert list(csv.reader(open(tmp_path / "s.csv")))[0][0] == "x11"


def test_validate_honours_valid_mask_and_nulls(tmp_path):
    mask_raster(tmp_path / "p.bgrd", np.zeros((4, 4)))
    mask_raster(tmp_path / "r.bgrd", np.zeros((4, 4)))
    assert run("validate", tmp_path / "p.bgrd", tmp_path / "r.bgrd", "-o", tmp_path / "s.json") == 0
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["commission_error"] is None and doc["omission_error"] is None


def test_validate_averages_site_tabs(tmp_path):
    (tmp_path / "t.csv").write_text("site,x11,x12,x21,x22\nA,10,2,4,84\nB,20,6,0,74\n")
    assert run("validate", "--tabs", tmp_path / "t.csv", "-o", tmp_path / "s.json") == 0
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["crosstab"] == {"x11": 15, "x12": 4, "x21": 2, "x22": 79} and doc["n_tabs"] == 2
    assert doc["commission_error"] == pytest.approx(4 / 19)
    (tmp_path / "bad.csv").write_text("x11,x12,x21,x22\n1,2,3,-4\n")
    assert run("validate", "--tabs", tmp_path / "bad.csv") == 3
    assert run("validate") == 4


def test_grid_all_burned_and_monthly(tmp_path):
    mask_raster(tmp_path / "m.bgrd", np.ones((20, 20)))
    assert run("grid", tmp_path / "m.bgrd", "-o", tmp_path / "g.bgrd") == 0
    g = read_raster(tmp_path / "g.bgrd")
    assert g.data[0].shape == (2, 2) and (g.data[0] == 1.0).all()
    months = []
    for k in range(12):
        jd = np.zeros((20, 20), dtype=np.uint16)
        if k == 4:
            jd[:10, :10] = 130
        p = tmp_path / f"jd{k}.bgrd"
        write_raster(Raster(jd, 65535, default_geotransform(0.025, 10.0, 5.0)), p)
        months.append(p)
    assert run("grid", "--monthly", *months, "-o", tmp_path / "g2.bgrd") == 0
    assert read_raster(tmp_path / "g2.bgrd").data[0].tolist() == [[1.0, 0.0], [0.0, 0.0]]
    assert run("grid", "--monthly", *months[:3], "-o", tmp_path / "g3.bgrd") == 4


def test_regress_csv_with_categories(tmp_path):
    rows = [(0, 0, "a"), (1, 1, "a"), (2, 2, "a"), (0, 1, "b"), (1, 3, "b"), (2, 5, "b"), ("", 9, "b")]
    for name, col in (("a.csv", 0), ("b.csv", 1)):
        with open(tmp_path / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["value", "category"])
            for r in rows:
                w.writerow([r[col], r[2]])
    assert run("regress", tmp_path / "a.csv", tmp_path / "b.csv", "-o", tmp_path / "r.json",
               "--scatter", tmp_path / "sc.csv") == 0
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["all"]["n"] == 6
    assert doc["by_category"]["a"]["slope"] == pytest.approx(1.0)
    assert doc["by_category"]["b"]["slope"] == pytest.approx(2.0)
    assert len(list(csv.reader(open(tmp_path / "sc.csv")))) == 7
    (tmp_path / "c.csv").write_text("value\n1\n1\n")
    assert run("regress", tmp_path / "c.csv", tmp_path / "c.csv") == 4


def test_sample_is_stable_and_separated(tmp_path):
    rng = np.random.default_rng(0)
    gt = default_geotransform(1.0, -150.0, 60.0)
    density = (rng.uniform(0, 1, (120, 300)) * (rng.random((120, 300)) < 0.6)).astype(np.float32)
    landcover = rng.choice([0, 1, 2, 4, 5, 6, 8, 10, 12], size=(120, 300)).astype(np.uint8)
    write_raster(Raster(density, -9999, gt), tmp_path / "d.bgrd")
    write_raster(Raster(landcover, 255, gt), tmp_path / "l.bgrd")
    cfg = {"density": str(tmp_path / "d.bgrd"), "landcover": str(tmp_path / "l.bgrd"), "seed": 4}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert run("sample", "--config", tmp_path / "cfg.json", "-o", tmp_path / "a.csv") == 0
    assert run("sample", "--config", tmp_path / "cfg.json", "-o", tmp_path / "b.csv") == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    sites = read_sites(tmp_path / "a.csv")
    train = [s for s in sites if s.role == "training"]
    val = [s for s in sites if s.role == "validation"]
    assert len(train) == 120 and len(val) == 80
    assert min(great_circle_km((v.lat, v.lon), (t.lat, t.lon)) for v in val for t in train) >= 200
    assert run("sample", "--config", tmp_path / "cfg.json", "-o", tmp_path / "c.csv", "--seed", 5) == 0
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "c.csv").read_bytes()


def test_synth_command_and_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "burnmap", "synth", str(tmp_path / "s"), "--size", "32",
                           "--samples", "0", "--preset", "all"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    scenario = json.loads((tmp_path / "s" / "scenario.json").read_text())
    assert len(scenario["events"]) == 7
    assert run("synth", tmp_path / "t", "--config", tmp_path / "s" / "scenario.json", "--samples", 0) == 0
    for p in sorted((tmp_path / "s").rglob("*.bgrd")):
        assert p.read_bytes() == (tmp_path / "t" / p.relative_to(tmp_path / "s")).read_bytes()
