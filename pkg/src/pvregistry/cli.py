"""Command-line entry point: enrich, registry, reconcile, synth, metrics."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import plotting
from .buildings import parse_buildings
from .config import PipelineConfig, load_config
from .errors import InvariantViolation, ParseError, PvRegistryError
from .raster import (best_threshold, iou, mape, mask_area_m2, parse_grid, precision_recall,
                     threshold, threshold_curve, vectorize)
from .reconcile import build_report, parse_official, render_summary, report_to_json
from .registry import (aggregate, assign, read_instances, read_registry, tilt_histogram,
                       write_histogram, write_instances, write_registry)
from .synth import PerturbSpec, SceneSpec, generate, write_scene

log = logging.getLogger("pvregistry")


class InputError(PvRegistryError):
    pass


def _require_path(path, what, kind="file"):
    if path is None:
        raise InputError(f"no {what} given (use --{what.replace('_', '-')} or the config file)")
    p = Path(path)
    ok = p.is_dir() if kind == "dir" else p.is_file()
    if not ok:
        raise InputError(f"{what} {kind} not found: {p}")
    return p


def _grid_files(directory: Path) -> list[Path]:
    return sorted(directory.glob("*.asc"))


def _read_grid(path: Path):
    try:
        return parse_grid(path.read_bytes())
    except PvRegistryError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def _paired_grids(pred_dir: Path, truth_dir: Path):
    pred = {p.name: p for p in _grid_files(pred_dir)}
    truth = {p.name: p for p in _grid_files(truth_dir)}
    if set(pred) != set(truth):
        unpaired = sorted(set(pred) ^ set(truth))
        raise InputError(f"unpaired grid files: {', '.join(unpaired)}")
    if not pred:
        raise InputError(f"no .asc grids in {pred_dir}")
    names = sorted(pred)
    maps = [_read_grid(pred[n]) for n in names]
    truths = [threshold(_read_grid(truth[n]), 0.5) for n in names]
    return names, maps, truths


def _search_curve(maps, truths):
    # MAPE is undefined for tiles without any true PV; search over positive tiles only
    pairs = [(m, t) for m, t in zip(maps, truths) if t.count]
    if not pairs:
        raise InputError("threshold search needs at least one grid pair with true PV pixels")
    return threshold_curve([m for m, _ in pairs], [t for _, t in pairs])


def _resolve_threshold(cfg: PipelineConfig) -> float:
    if cfg.threshold != "search":
        return float(cfg.threshold)
    vg = _require_path(cfg.validation_grids, "validation_grids", "dir")
    vt = _require_path(cfg.validation_truth, "validation_truth", "dir")
    _, maps, truths = _paired_grids(vg, vt)
    best = best_threshold(_search_curve(maps, truths))
    log.info("threshold search: t=%.2f (MAPE %.3f%%)", *best)
    return best[0]


def cmd_enrich(cfg: PipelineConfig) -> int:
    bpath = _require_path(cfg.buildings, "buildings")
    gdir = _require_path(cfg.grids, "grids", "dir")
    ds = parse_buildings(bpath.read_bytes(), flat_tilt=cfg.flat_tilt_deg)
    t = _resolve_threshold(cfg)
    files = _grid_files(gdir)

    def one_tile(path):
        return vectorize(threshold(_read_grid(path), t), path.stem)

    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        pvs = [pv for tile in pool.map(one_tile, files) for pv in tile]
    result = assign(pvs, ds, cfg.constants)
    pv_area = sum(pv.area_m2 for pv in pvs)
    assigned = sum(i.area_2d_m2 for i in result.instances)
    if abs(assigned + result.unassigned_area_m2 - pv_area) > 1e-6 * max(pv_area, 1.0):
        raise InvariantViolation("PV area not conserved during rooftop assignment")

    hist = tilt_histogram(result.instances, cfg.flat_tilt_deg)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "instances.csv").write_bytes(write_instances(result.instances))
    (out / "tilt_histogram.csv").write_bytes(write_histogram(hist))
    plotting.plot_tilt_histogram(hist, out / "tilt_histogram.png")
    summary = {
        "threshold": t,
        "tiles": len(files),
        "pv_polygons": len(pvs),
        "instances": len(result.instances),
        "pv_area_m2": round(pv_area, 6),
        "assigned_area_2d_m2": round(assigned, 6),
        "unassigned_area_m2": round(result.unassigned_area_m2, 6),
        "skipped_surfaces": list(ds.warnings),
    }
    (out / "enrich_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    log.info("enrich: %d tiles, %d PV polygons, %d instances", len(files), len(pvs), len(result.instances))
    return 0


def cmd_registry(cfg: PipelineConfig) -> int:
    ipath = _require_path(cfg.instances or cfg.out / "instances.csv", "instances")
    entries = aggregate(read_instances(ipath.read_bytes()), cfg.constants)
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "registry.csv").write_bytes(write_registry(entries))
    log.info("registry: %d entries", len(entries))
    return 0


def cmd_reconcile(cfg: PipelineConfig, echo: bool = True) -> int:
    rpath = _require_path(cfg.registry or cfg.out / "registry.csv", "registry")
    opath = _require_path(cfg.official, "official")
    auto = read_registry(rpath.read_bytes())
    official = parse_official(opath.read_bytes())
    report = build_report(auto, official, ratio_threshold=cfg.ratio_threshold,
                          threshold_kwp=cfg.constants.public_capacity_threshold_kwp,
                          relink_tolerance=cfg.relink_tolerance,
                          m2_per_kwp=cfg.constants.m2_per_kwp)
    t = report.totals
    if t.official_kwp_corrected > t.official_kwp_raw + 1e-9 * max(t.official_kwp_raw, 1.0):
        raise InvariantViolation("corrected official total exceeds raw total")
    summary = render_summary(report)
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "report.json").write_bytes(report_to_json(report))
    (cfg.out / "summary.txt").write_text(summary, encoding="utf-8")
    plotting.plot_registry_totals(report, cfg.out / "registry_comparison.png")
    if echo:
        sys.stdout.write(summary)
    return 0


def cmd_synth(spec_path, seed, out: Path) -> int:
    doc = {}
    if spec_path is not None:
        p = _require_path(spec_path, "spec")
        from .config import tomllib
        try:
            doc = tomllib.loads(p.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ParseError(f"{p}: {exc}") from None
    perturb = doc.pop("perturb", {})
    if seed is not None:
        doc["seed"] = seed
        perturb.setdefault("seed", seed)
    spec = SceneSpec.from_dict(doc)
    pspec = PerturbSpec.from_dict(perturb)
    scene = generate(spec)
    write_scene(scene, out, pspec)
    (out / "config.toml").write_text(
        'buildings = "buildings.json"\n'
        'grids = "grids"\n'
        'official = "official.csv"\n'
        'validation_grids = "grids"\n'
        'validation_truth = "truth_grids"\n'
        'out = "out"\n'
        "threshold = 0.5\n",
        encoding="utf-8",
    )
    log.info("synth: %d buildings, %d panels, %d tiles -> %s",
             spec.n_buildings, len(scene.truth.panels), len(scene.maps), out)
    return 0


def cmd_metrics(cfg: PipelineConfig, pred_dir, truth_dir) -> int:
    pdir = _require_path(pred_dir, "pred", "dir")
    tdir = _require_path(truth_dir, "truth", "dir")
    names, maps, truths = _paired_grids(pdir, tdir)
    curve = None
    if cfg.threshold == "search":
        curve = _search_curve(maps, truths)
        t, _ = best_threshold(curve)
    else:
        t = float(cfg.threshold)
    masks = [threshold(m, t) for m in maps]
    ious = [iou(a, b) for a, b in zip(masks, truths)]
    pred_area = [mask_area_m2(m) for m in masks]
    true_area = [mask_area_m2(m) for m in truths]
    positive = [a > 0 for a in true_area]
    precision, recall = precision_recall([a > 0 for a in pred_area], positive)
    area_mape = mape([p for p, ok in zip(pred_area, positive) if ok],
                     [a for a in true_area if a > 0]) if any(positive) else None
    doc = {
        "threshold": t,
        "threshold_searched": curve is not None,
        "n_pairs": len(names),
        "mape_pct": area_mape,
        "miou": sum(ious) / len(ious),
        "precision": precision,
        "recall": recall,
        "pred_area_m2": sum(pred_area),
        "truth_area_m2": sum(true_area),
    }
    if curve is not None:
        doc["curve"] = [[a, b] for a, b in curve]
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "metrics.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    if curve is not None:
        plotting.plot_threshold_curve(curve, (t, dict(curve)[t]), cfg.out / "threshold_curve.png")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML configuration file")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--threshold", help="probability threshold in [0,1] or 'search'")
    common.add_argument("--quiet", action="store_true", help="only report errors")

    p = argparse.ArgumentParser(prog="pvregistry", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("enrich", parents=[common], help="grids + buildings -> PV instances and tilt histogram")
    e.add_argument("--buildings", type=Path)
    e.add_argument("--grids", type=Path, help="directory of .asc probability grids")
    e.add_argument("--validation-grids", type=Path)
    e.add_argument("--validation-truth", type=Path)
    e.add_argument("--jobs", type=int, help="tiles processed in parallel")

    r = sub.add_parser("registry", parents=[common], help="PV instances -> address-level registry")
    r.add_argument("--instances", type=Path)

    c = sub.add_parser("reconcile", parents=[common], help="compare automated and official registries")
    c.add_argument("--registry", type=Path)
    c.add_argument("--official", type=Path)
    c.add_argument("--ratio-threshold", type=float)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic scene")
    s.add_argument("spec", nargs="?", type=Path, help="scene TOML (optional [perturb] table)")
    s.add_argument("--seed", type=int)

    m = sub.add_parser("metrics", parents=[common], help="segmentation metrics over paired grids")
    m.add_argument("--pred", type=Path, required=True)
    m.add_argument("--truth", type=Path, required=True)
    return p


def _config_from_args(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    over = {k: getattr(args, k, None) for k in (
        "out", "threshold", "buildings", "grids", "validation_grids", "validation_truth",
        "jobs", "instances", "registry", "official", "ratio_threshold")}
    return cfg.override(**over)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", force=True)
    try:
        if args.command == "synth":
            out = args.out
            if out is None:
                raise InputError("synth needs --out DIR")
            return cmd_synth(args.spec, args.seed, out)
        cfg = _config_from_args(args)
        if args.command == "enrich":
            return cmd_enrich(cfg)
        if args.command == "registry":
            return cmd_registry(cfg)
        if args.command == "reconcile":
            return cmd_reconcile(cfg, echo=not args.quiet)
        if args.command == "metrics":
            return cmd_metrics(cfg, args.pred, args.truth)
    except InvariantViolation as exc:
        log.error("internal invariant violated: %s", exc)
        return 2
    except (PvRegistryError, OSError) as exc:
        log.error("%s", exc)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
