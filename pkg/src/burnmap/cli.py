"""Command-line entry points.

Exit codes: 0 success, 2 usage, 3 input format, 4 computation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import assessment, sampling, synth
from .errors import BurnMapError, FormatError, ValidationError
from .forest import ForestParams, feature_importances, load_model, save_model, train_samples
from .pixel_pipeline import (
    SEED_PROBABILITY,
    FilterThresholds,
    Reason,
    regime_array,
    seed_and_probability_rasters,
)
from .raster_store import Raster, load_manifest, read_raster, read_samples, write_raster
from .shaping import GrowthParams, shape_burned_area
from .spectral import FEATURE_NAMES

log = logging.getLogger("burnmap")

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_COMPUTE = 0, 2, 3, 4


class StageError(Exception):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", EXIT_FORMAT if isinstance(cause, OSError) else EXIT_COMPUTE)


def _load_config(path) -> dict:
    if not path:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON config ({exc})") from exc
    if not isinstance(cfg, dict):
        raise FormatError(f"{path}: config must be a JSON object")
    return cfg


def _override(cfg: dict, **flags) -> dict:
    out = dict(cfg)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _build(cls, values: dict, where: str):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ValidationError(f"{where}: unknown key(s) {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def _write_json(doc, path):
    text = json.dumps(doc, indent=2)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


# -- synth ---------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.config:
        scenario = synth.SynthScenario.from_dict(_load_config(args.config))
    elif args.preset == "empty":
        scenario = synth.SynthScenario(height=args.size, width=args.size,
                                       regions=synth.two_regions(args.size, args.size), rng_seed=args.seed)
    else:
        scenario = synth.default_scenario(args.seed, args.size)
        if args.preset in ("previous-burn", "all"):
            scenario, _ = synth.with_previous_year_burn(scenario)
        if args.preset in ("occluded", "all"):
            scenario, _ = synth.with_occluded_burn(scenario)
    overrides = {k: v for k, v in (("cloud_fraction", args.cloud_fraction),
                                   ("noise_sigma", args.noise_sigma),
                                   ("rng_seed", args.seed if args.config and args.seed_given else None))
                 if v is not None}
    if overrides:
        scenario = synth.SynthScenario.from_dict({**asdict(scenario), **overrides})
    out = synth.synth_generate(scenario, args.out_dir, n_samples=args.samples)
    print(f"wrote {len(out.scene_paths)} scenes, manifest {out.manifest}, truth {out.truth}")
    return EXIT_OK


# -- train ---------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _load_config(args.config).get("forest", {}) if args.config else {}
    values = _override(cfg, n_trees=args.trees, features_per_split=args.features_per_split,
                       max_depth=args.max_depth, min_leaf=args.min_leaf, rng_seed=args.seed)
    params = _build(ForestParams, values, "forest params")
    samples = read_samples(args.samples)
    model = train_samples(samples, params)
    save_model(model, args.output)
    ranked = sorted(zip(FEATURE_NAMES, feature_importances(model)), key=lambda t: -t[1])
    print(f"trained {params.n_trees} trees on {model.n_samples} samples ({model.n_burned} burned)")
    for name, value in ranked:
        print(f"  {name:6s} {value:.4f}")
    return EXIT_OK


# -- map -----------------------------------------------------------------------

@dataclass
class PipelineConfig:
    manifest: str
    vcf: str
    out_dir: str
    model: str | None = None
    samples: str | None = None
    year: int | None = None
    threads: int = 1
    tile_rows: int = 64
    seed_threshold: float = SEED_PROBABILITY
    thresholds: FilterThresholds = field(default_factory=FilterThresholds)
    growth: GrowthParams = field(default_factory=GrowthParams)
    forest: ForestParams = field(default_factory=ForestParams)

    def __post_init__(self):
        if self.model is None and self.samples is None:
            raise ValidationError("map needs either a model or a samples table")
        if self.threads < 1 or self.tile_rows < 1:
            raise ValidationError("threads and tile_rows must be >= 1")
        if not 0 < self.seed_threshold <= 1:
            raise ValidationError("seed_threshold must be in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        d["thresholds"] = _build(FilterThresholds, d.get("thresholds", {}), "thresholds")
        d["growth"] = _build(GrowthParams, d.get("growth", {}), "growth")
        d["forest"] = _build(ForestParams, d.get("forest", {}), "forest")
        missing = [k for k in ("manifest", "vcf", "out_dir") if not d.get(k)]
        if missing:
            raise ValidationError(f"map config is missing {', '.join(missing)}")
        return _build(cls, d, "map config")


def _map_config(args) -> PipelineConfig:
    cfg = _load_config(args.config)
    cfg = _override(cfg, manifest=args.manifest, vcf=args.vcf, out_dir=args.out_dir, model=args.model,
                    samples=args.samples, year=args.year, threads=args.threads, tile_rows=args.tile_rows,
                    seed_threshold=args.seed_threshold)
    th = _override(cfg.get("thresholds", {}), t_ndvi=args.t_ndvi, t_dndvi=args.t_dndvi,
                   t_dnbr=args.t_dnbr, t_day=args.t_day)
    gr = _override(cfg.get("growth", {}), grow_threshold=args.grow_threshold,
                   min_component_pixels=args.min_component)
    cfg["thresholds"], cfg["growth"] = th, gr
    return PipelineConfig.from_dict(cfg)


def run_map(config: PipelineConfig) -> dict:
    """Per-pixel processing then shaping; writes the four output rasters."""
    def stage(name, fn):
        try:
            return fn()
        except (BurnMapError, OSError, ValueError) as exc:
            raise StageError(name, exc) from exc

    manifest = stage("load manifest", lambda: load_manifest(config.manifest, config.year))
    if config.model:
        model = stage("load model", lambda: load_model(config.model))
    else:
        model = stage("train", lambda: train_samples(read_samples(config.samples), config.forest))
    regimes = stage("vegetation regime", lambda: regime_array(read_raster(config.vcf)))
    px = stage("per-pixel processing", lambda: seed_and_probability_rasters(
        manifest, model, regimes, config.thresholds, config.seed_threshold,
        threads=config.threads, tile_rows=config.tile_rows))
    ba = stage("burned-area shaping", lambda: shape_burned_area(px.seeds, px.probability, config.growth))

    out = Path(config.out_dir)
    paths = {name: out / f"{name}.bgrd" for name in ("probability", "seeds", "diagnostics", "ba_mask")}

    def write_all():
        out.mkdir(parents=True, exist_ok=True)
        write_raster(px.probability, paths["probability"])
        write_raster(px.seeds, paths["seeds"])
        write_raster(px.diagnostics, paths["diagnostics"])
        write_raster(ba, paths["ba_mask"])

    stage("write outputs", write_all)
    counts = np.bincount(px.diagnostics.data[0].ravel(), minlength=len(Reason))
    summary = {
        "year": manifest.year,
        "scenes": {"previous": len(manifest.previous), "current": len(manifest.current)},
        "seeds": int(px.seeds.data[0].sum()),
        "burned_pixels": int((ba.data[0] == 1).sum()),
        "diagnostics": {r.name.lower(): int(counts[r]) for r in Reason},
        "outputs": {k: str(v) for k, v in paths.items()},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def cmd_map(args) -> int:
    config = _map_config(args)
    summary = run_map(config)
    print(f"{summary['seeds']} seeds, {summary['burned_pixels']} burned pixels -> {config.out_dir}")
    return EXIT_OK


# -- validate ------------------------------------------------------------------

def _read_tabs(path):
    tabs = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = ("x11", "x12", "x21", "x22")
        if not reader.fieldnames or any(c not in reader.fieldnames for c in cols):
            raise FormatError(f"{path}: cross-tab table needs columns {', '.join(cols)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                tabs.append(assessment.CrossTab(*(float(row[c]) for c in cols)))
            except (ValueError, ValidationError) as exc:
                raise FormatError(f"{path}: row {lineno}: {exc}") from exc
    if not tabs:
        raise FormatError(f"{path}: no cross tabulations")
    return tabs


def stats_document(tab, n_tabs=1) -> dict:
    stats = assessment.accuracy_stats(tab)
    return {
        "crosstab": tab.as_dict(),
        "n_tabs": n_tabs,
        "commission_error": stats.commission,
        "omission_error": stats.omission,
        "overall_accuracy": stats.overall,
        "percent": stats.percent(),
    }


def cmd_validate(args) -> int:
    if args.tabs:
        tabs = _read_tabs(args.tabs)
        tab = assessment.average_tabs(tabs)
        n = len(tabs)
    else:
        if not (args.pred and args.ref):
            raise ValidationError("validate needs PRED and REF masks, or --tabs")
        pred, ref = read_raster(args.pred), read_raster(args.ref)
        if args.valid:
            valid = read_raster(args.valid).data[0].astype(bool)
        else:
            valid = pred.valid_mask() & ref.valid_mask()
        tab = assessment.cross_tab(pred.data[0] == 1, ref.data[0] == 1, valid)
        n = 1
    doc = stats_document(tab, n)
    _write_json(doc, args.output)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x11", "x12", "x21", "x22", "commission_error", "omission_error", "overall_accuracy"])
            w.writerow([tab.x11, tab.x12, tab.x21, tab.x22,
                        doc["commission_error"], doc["omission_error"], doc["overall_accuracy"]])
    return EXIT_OK


# -- grid ----------------------------------------------------------------------

def cmd_grid(args) -> int:
    if args.monthly:
        if len(args.monthly) != 12:
            raise ValidationError(f"--monthly needs 12 rasters, got {len(args.monthly)}")
        layers = [read_raster(p) for p in args.monthly]
        mask = layers[0].like(assessment.annual_from_monthly(layers).astype(np.uint8), nodata=255)
    elif args.mask:
        mask = read_raster(args.mask)
    else:
        raise ValidationError("grid needs a mask or --monthly layers")
    grid = assessment.grid_composite(mask, args.cell)
    write_raster(grid, args.output)
    print(f"wrote {grid.height}x{grid.width} grid to {args.output}")
    return EXIT_OK


# -- regress -------------------------------------------------------------------

def _read_values(path):
    """1-D values plus validity from a BGRID grid or a CSV with a 'value' column."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if not reader.fieldnames or "value" not in reader.fieldnames:
                raise FormatError(f"{path}: needs a 'value' column")
            values, cats = [], []
            for lineno, row in enumerate(reader, start=2):
                try:
                    values.append(float(row["value"]) if row["value"].strip() else np.nan)
                except ValueError as exc:
                    raise FormatError(f"{path}: row {lineno}: {exc}") from exc
                cats.append(row.get("category"))
        values = np.asarray(values)
        return values, np.isfinite(values), cats if any(c is not None for c in cats) else None
    r = read_raster(path)
    return r.data[0].ravel().astype(np.float64), r.valid_mask().ravel(), None


def cmd_regress(args) -> int:
    x, vx, cat_x = _read_values(args.a)
    y, vy, cat_y = _read_values(args.b)
    if x.shape != y.shape:
        raise ValidationError(f"inputs differ in length ({x.size} vs {y.size})")
    keep = vx & vy
    categories = None
    if args.category:
        cat = read_raster(args.category)
        categories = cat.data[0].ravel()
    elif cat_x is not None or cat_y is not None:
        categories = np.asarray(cat_x if cat_x is not None else cat_y, dtype=object)
    x, y = x[keep], y[keep]
    doc = {"all": asdict(assessment.regress(x, y))}
    if categories is not None:
        per = assessment.regress_by_category(x, y, np.asarray(categories)[keep].astype(str))
        doc["by_category"] = {str(k): asdict(v) for k, v in per.items() if k != "all"}
    _write_json(doc, args.output)
    if args.scatter:
        with open(args.scatter, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y"] + (["category"] if categories is not None else []))
            cats = np.asarray(categories)[keep] if categories is not None else None
            for i in range(len(x)):
                w.writerow([repr(float(x[i])), repr(float(y[i]))] + ([cats[i]] if cats is not None else []))
    return EXIT_OK


# -- sample --------------------------------------------------------------------

def cmd_sample(args) -> int:
    cfg = _override(_load_config(args.config), density=args.density, landcover=args.landcover,
                    n_training=args.n_training, n_validation=args.n_validation, levels=args.levels,
                    min_km=args.min_km, seed=args.seed, output=args.output)
    for key in ("density", "landcover", "output"):
        if not cfg.get(key):
            raise ValidationError(f"sample needs '{key}'")
    k = int(cfg.get("levels", 5))
    strata = sampling.build_strata(read_raster(cfg["density"]), read_raster(cfg["landcover"]), k)
    seed = int(cfg.get("seed", 0))
    min_km = float(cfg.get("min_km", 200.0))
    training = sampling.draw_sites(strata, sampling.allocate(int(cfg.get("n_training", 120)), k),
                                   "training", (), min_km, seed)
    validation = sampling.draw_sites(strata, sampling.allocate(int(cfg.get("n_validation", 80)), k),
                                     "validation", training, min_km, seed + 1)
    sampling.write_sites(training + validation, cfg["output"])
    print(f"wrote {len(training)} training and {len(validation)} validation sites to {cfg['output']}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="burnmap", description="Annual burned-area mapping from multi-date reflectance rasters.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic scenario with ground truth")
    s.add_argument("out_dir")
    s.add_argument("--config", help="scenario JSON (as written to scenario.json)")
    s.add_argument("--preset", choices=("default", "previous-burn", "occluded", "all", "empty"), default="default")
    s.add_argument("--size", type=int, default=256)
    s.add_argument("--seed", type=int)
    s.add_argument("--samples", type=int, default=2000, help="training rows to write (0 for none)")
    s.add_argument("--cloud-fraction", type=float)
    s.add_argument("--noise-sigma", type=float)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train the burn-probability forest")
    t.add_argument("samples")
    t.add_argument("-o", "--output", required=True)
    t.add_argument("--config")
    t.add_argument("--trees", type=int)
    t.add_argument("--features-per-split", type=int)
    t.add_argument("--max-depth", type=int)
    t.add_argument("--min-leaf", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("map", help="run per-pixel processing and shaping")
    m.add_argument("--config")
    m.add_argument("--manifest")
    m.add_argument("--vcf", help="4-band vegetation cover raster")
    m.add_argument("--model")
    m.add_argument("--samples", help="train inline from this table when no model is given")
    m.add_argument("--out-dir")
    m.add_argument("--year", type=int)
    m.add_argument("--threads", type=int)
    m.add_argument("--tile-rows", type=int)
    m.add_argument("--t-ndvi", type=float)
    m.add_argument("--t-dndvi", type=float)
    m.add_argument("--t-dnbr", type=float)
    m.add_argument("--t-day", type=float)
    m.add_argument("--seed-threshold", type=float)
    m.add_argument("--grow-threshold", type=float)
    m.add_argument("--min-component", type=int)
    m.set_defaults(func=cmd_map)

    v = sub.add_parser("validate", help="cross tabulation and accuracy statistics")
    v.add_argument("pred", nargs="?")
    v.add_argument("ref", nargs="?")
    v.add_argument("--valid")
    v.add_argument("--tabs", help="CSV of per-site cross tabs (x11,x12,x21,x22) to average")
    v.add_argument("-o", "--output")
    v.add_argument("--csv")
    v.set_defaults(func=cmd_validate)

    g = sub.add_parser("grid", help="burned proportion per grid cell")
    g.add_argument("mask", nargs="?")
    g.add_argument("--monthly", nargs="+", help="12 monthly Julian-day rasters")
    g.add_argument("--cell", type=float, default=0.25)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_grid)

    r = sub.add_parser("regress", help="least-squares regression between two products")
    r.add_argument("a")
    r.add_argument("b")
    r.add_argument("--category", help="category raster for per-category fits")
    r.add_argument("--scatter", help="write the paired values as CSV")
    r.add_argument("-o", "--output")
    r.set_defaults(func=cmd_regress)

    sp = sub.add_parser("sample", help="stratified training/validation site design")
    sp.add_argument("--config")
    sp.add_argument("--density")
    sp.add_argument("--landcover", help="grid of UMD land-cover codes")
    sp.add_argument("--n-training", type=int)
    sp.add_argument("--n-validation", type=int)
    sp.add_argument("--levels", type=int)
    sp.add_argument("--min-km", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_sample)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "synth":
        args.seed_given = args.seed is not None
        if args.seed is None:
            args.seed = 0
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"burnmap {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FormatError as exc:
        print(f"burnmap {args.command}: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except BurnMapError as exc:
        print(f"burnmap {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"burnmap {args.command}: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
