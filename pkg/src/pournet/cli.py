"""Command-line entry point: ``pournet <command> [options]``.

Every command writes under ``<out>/<command>/`` (``--out`` defaults to
``$POURNET_OUT`` or ``./pournet-out``), records its resolved configuration
as ``config.ini`` there, and on failure leaves ``error.json`` and exits
non-zero.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as cfgmod
from . import io, svg, synthsim
from .augment import NoiseBank, parse_grid
from .config import Option, str_or_none
from .control import experiment_matrix, summarize, write_results_csv
from .evaluation import CRITERION_MM, snr_table, write_metrics_csv
from .model import checkpoint
from .model.network import select_rows
from .model.training import TrainConfig, train_arrays
from .pipeline import dataset_arrays, eval_sets, evaluate_models, label_all, simulate_suite
from .shape import evaluate_profile, run_shape, write_profile_csv

log = logging.getLogger("pournet")

COMMON = (
    Option("seed", int, 0, "random seed"),
    Option("threads", int, 1, "BLAS thread cap; 1 keeps runs bit-reproducible"),
)

OPTIONS = {
    "synth": COMMON + (
        Option("suite", str, "train", "scenario suite", ("train", "holdout", "eval", "shape")),
        Option("count", int, 0, "pours per container; 0 keeps the suite default"),
    ),
    "noise-bank": COMMON + (
        Option("seconds", float, 30.0, "length of each synthetic noise entry"),
        Option("source", str_or_none, None, "directory of WAV files to import instead"),
    ),
    "build-dataset": COMMON + (
        Option("suite", str, "train", "bundle suite under <out>/synth"),
        Option("bundles", str_or_none, None, "bundle directory (overrides --suite)"),
        Option("snr_grid", str, "clean,0:20:5", "e.g. clean,0:20:5 or full or -5,0,5"),
        Option("clips_per_second", float, 0.25, "random 4 s clips per second of pour"),
        Option("noise", str_or_none, None, "noise-bank directory; default is the seeded synthetic bank"),
        Option("name", str_or_none, None, "dataset name; default <suite>"),
        Option("export_wav", bool, False, "also write mixed clips as WAV + CSV label pairs"),
    ),
    "train": COMMON + (
        Option("dataset", str, "train", "dataset name under <out>/build-dataset or a .clips path"),
        Option("variant", str, "mp", "input wiring", ("mp", "ap", "ft")),
        Option("epochs", int, 15, ""),
        Option("batch_size", int, 32, ""),
        Option("learning_rate", float, 2e-3, ""),
        Option("alpha", float, 0.01, "weight of the monotone-decrease penalty"),
        Option("clip_norm", float, 5.0, ""),
        Option("validation_fraction", float, 0.1, ""),
        Option("name", str_or_none, None, "model name; default <variant>"),
    ),
    "eval": COMMON + (
        Option("models", str, "mp", "comma list of model names under <out>/train or checkpoint paths"),
        Option("variant", str_or_none, None, "expected variant of a single checkpoint"),
        Option("suite", str, "holdout", "bundle suite under <out>/synth"),
        Option("bundles", str_or_none, None, "bundle directory (overrides --suite)"),
        Option("snr_grid", str, "clean,full", "evaluation SNR levels"),
        Option("clips_per_second", float, 0.25, ""),
        Option("noise", str_or_none, None, "noise-bank directory"),
    ),
    "pour": COMMON + (
        Option("estimator", str, "model", "", ("model", "oracle")),
        Option("models", str, "mp", "comma list of model names or checkpoint paths"),
        Option("containers", str, "c1-glass,c2-ceramic,c3-steel", "container names"),
        Option("targets", str, "60", "comma list of target air columns (mm)"),
        Option("snr_grid", str, "clean", ""),
        Option("pour_heights", str, "310", "comma list (mm)"),
        Option("initial_fills", str, "0", "comma list (mm)"),
        Option("episodes", int, 5, "seeded episodes per cell"),
        Option("correction_mm", float, 0.0, "fixed extra stop margin"),
        Option("decision_rate", float, 12.0, "decisions per second"),
        Option("noise", str_or_none, None, "noise-bank directory"),
    ),
    "shape": COMMON + (
        Option("estimator", str, "model", "", ("model", "oracle")),
        Option("model", str, "mp", "model name or checkpoint path"),
        Option("geometry", str, "cylinder", "", ("cylinder", "frustum", "bulge")),
        Option("trials", int, 5, ""),
        Option("decision_rate", float, 12.0, ""),
    ),
}


class CommandError(RuntimeError):
    pass


def _floats(text: str) -> list:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _model_path(out: Path, name: str) -> Path:
    p = Path(name)
    if p.suffix == ".ckpt" or p.exists():
        return p
    return out / "train" / name / "model.ckpt"


def _load_model(out: Path, name: str, variant=None):
    path = _model_path(out, name)
    if not path.exists():
        raise CommandError(f"checkpoint not found: {path}")
    return checkpoint.load(path, variant)


def _bank(opts):
    if opts.get("noise"):
        return NoiseBank.from_dir(opts["noise"])
    return NoiseBank.synthetic(0)


def _bundle_dir(out: Path, opts) -> Path:
    d = Path(opts["bundles"]) if opts.get("bundles") else out / "synth" / opts["suite"]
    if not d.is_dir():
        raise CommandError(f"bundle directory not found: {d}")
    return d


def _load_bundles(d: Path):
    dirs = sorted(p for p in d.iterdir() if (p / "meta.txt").exists())
    if not dirs:
        raise CommandError(f"no recording bundles in {d}")
    recs = [io.read_bundle(p) for p in dirs]
    cal = {}
    for p, rec in zip(dirs, recs):
        if rec.container_id not in cal:
            try:
                cal[rec.container_id] = io.bundle_calibration(p, rec.container_id)
            except FileNotFoundError as exc:
                raise CommandError(str(exc)) from None
    return recs, cal


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def cmd_synth(opts, out: Path, root: Path) -> int:
    scenarios, recs, cal = simulate_suite(opts["suite"], opts["seed"], opts["count"] or None)
    for rec in recs:
        io.write_bundle(root / rec.recording_id, rec, cal[rec.container_id])
    _write_json(root / "suite.json", [sc.to_dict() for sc in scenarios])
    _write_json(root / "manifest.json", {
        "suite": opts["suite"], "seed": opts["seed"], "n_recordings": len(recs),
        "containers": sorted(cal), "recordings": [r.recording_id for r in recs],
    })
    print(f"wrote {len(recs)} recordings to {root}")
    return 0


def cmd_noise_bank(opts, out: Path, root: Path) -> int:
    bank = NoiseBank.from_dir(opts["source"]) if opts["source"] else \
        NoiseBank.synthetic(opts["seed"], opts["seconds"])
    for name in bank.names():
        io.write_wav(root / f"{name}.wav", bank[name])
    io.write_noise_manifest(root / "manifest.csv", bank)
    print(f"wrote {len(bank.names())} noise entries to {root}")
    return 0


def cmd_build_dataset(opts, out: Path, root: Path) -> int:
    recs, cal = _load_bundles(_bundle_dir(out, opts))
    recs = label_all(recs, cal)
    grid = parse_grid(opts["snr_grid"])
    if not grid:
        raise CommandError(f"empty SNR grid {opts['snr_grid']!r}")
    bank = _bank(opts) if any(g is not None for g in grid) else None
    _, _, _, clips = dataset_arrays(recs, bank, grid, opts["clips_per_second"], opts["seed"])
    manifest = {"seed": opts["seed"], "snr_grid": opts["snr_grid"], "n_recordings": len(recs),
                "clips_per_second": opts["clips_per_second"],
                "counts": _grid_counts(clips)}
    io.write_clips(root / "clips.bin", clips, manifest)
    if opts["export_wav"]:
        io.write_augmented_dir(root / "wav", recs, clips, bank, manifest)
    print(f"wrote {len(clips)} clips to {root / 'clips.bin'}")
    return 0


def _grid_counts(clips) -> dict:
    counts: dict = {}
    for c in clips:
        key = "clean" if c.meta["snr_db"] is None else f"{c.meta['snr_db']:g}"
        counts[key] = counts.get(key, 0) + 1
    return dict(sorted(counts.items()))


def cmd_train(opts, out: Path, root: Path) -> int:
    ds = Path(opts["dataset"])
    if ds.suffix not in (".bin", ".clips"):
        ds = out / "build-dataset" / opts["dataset"] / "clips.bin"
    if not ds.exists():
        raise CommandError(f"dataset not found: {ds}")
    X, y, manifest = io.read_clip_arrays(ds)
    groups = [m.get("recording_id", i) for i, m in enumerate(manifest["clips"])]
    tc = TrainConfig(learning_rate=opts["learning_rate"], batch_size=opts["batch_size"],
                     epochs=opts["epochs"], alpha=opts["alpha"], clip_norm=opts["clip_norm"],
                     rng_seed=opts["seed"], validation_fraction=opts["validation_fraction"],
                     variant=opts["variant"])
    params, history = train_arrays(select_rows(X, opts["variant"]), y, tc, groups)
    checkpoint.save(root / "model.ckpt", params, {"seed": opts["seed"], "dataset": ds.name,
                                                  "train_config": tc.to_dict()})
    checkpoint.write_log(root / "train_log.csv", history)
    print(f"best validation loss {params.meta['best_val_loss']:.4f}; checkpoint {root / 'model.ckpt'}")
    return 0


def cmd_eval(opts, out: Path, root: Path) -> int:
    names = [m.strip() for m in opts["models"].split(",") if m.strip()]
    models = {Path(n).stem if Path(n).suffix else n:
              _load_model(out, n, opts["variant"] if len(names) == 1 else None) for n in names}
    recs, cal = _load_bundles(_bundle_dir(out, opts))
    recs = label_all(recs, cal)
    sets = eval_sets(recs, _bank(opts), opts["snr_grid"], opts["clips_per_second"], opts["seed"])
    rows = evaluate_models(models, sets)
    write_metrics_csv(root / "metrics.csv", rows)
    curves = {}
    for r in rows:
        curves.setdefault(f"{r['variant']} @ {r['snr_db']}", ([], []))
        curves[f"{r['variant']} @ {r['snr_db']}"][0].append(r["threshold_mm"])
        curves[f"{r['variant']} @ {r['snr_db']}"][1].append(r["fraction"])
    svg.write(root / "threshold_curve.svg",
              svg.line_chart(curves, "Share of slices under an error threshold", "threshold (mm)",
                             "fraction", (0, 1)))
    table = snr_table(rows, CRITERION_MM)
    noisy = {name: ([float(k) for k in t if k != "clean"], [t[k] for k in t if k != "clean"])
             for name, t in table.items()}
    svg.write(root / "snr_curve.svg",
              svg.line_chart(noisy, "Share under 5 mm versus SNR", "SNR (dB)", "fraction", (0, 1),
                             markers=True))
    for name, t in table.items():
        print(name, " ".join(f"{k}:{v:.3f}" for k, v in t.items()))
    return 0


def cmd_pour(opts, out: Path, root: Path) -> int:
    geoms = {g.name: g for g in synthsim.TRAIN_GEOMETRIES + synthsim.EVAL_GEOMETRIES
             + synthsim.SHAPE_GEOMETRIES}
    names = [c.strip() for c in opts["containers"].split(",") if c.strip()]
    missing = [n for n in names if n not in geoms]
    if missing:
        raise CommandError(f"unknown containers {missing}; choose from {sorted(geoms)}")
    if opts["estimator"] == "oracle":
        models = {"oracle": "oracle"}
    else:
        models = {n.strip(): _load_model(out, n.strip())
                  for n in opts["models"].split(",") if n.strip()}
    grid = [None if s is None else s.snr_db for s in parse_grid(opts["snr_grid"])]
    bank = _bank(opts) if any(s is not None for s in grid) else None
    rows = experiment_matrix(models, [geoms[n] for n in names], grid, _floats(opts["targets"]),
                             _floats(opts["pour_heights"]), _floats(opts["initial_fills"]),
                             opts["episodes"], opts["seed"], bank, opts["correction_mm"],
                             opts["decision_rate"])
    write_results_csv(root / "results.csv", rows)
    summary = summarize(rows)
    with open(root / "summary.csv", "w") as fh:
        cols = ("cell_id", "n", "n_failed", "mean_abs_error_mm", "std_abs_error_mm",
                "mean_error_ml", "std_error_ml")
        fh.write(",".join(cols) + "\n")
        for s in summary:
            fh.write(",".join(str(s[c]) for c in cols) + "\n")
    svg.write(root / "pour.svg", svg.bar_chart(
        [s["cell_id"].split("|", 1)[1] for s in summary],
        {"|error| (mm)": ([s["mean_abs_error_mm"] for s in summary],
                          [s["std_abs_error_mm"] for s in summary])},
        "Stopping error per cell", "mm"))
    for s in summary:
        print(f"{s['cell_id']}: {s['mean_abs_error_mm']:.2f} +/- {s['std_abs_error_mm']:.2f} mm")
    failed = [r for r in rows if not np.isfinite(r["error_mm"]) or r.get("flags")]
    if failed:
        _write_json(root / "error.json", {"command": "pour", "partial_failures": [
            {"cell_id": r["cell_id"], "seed": r["seed"], "flags": r.get("flags", "")} for r in failed]})
        return 2
    return 0


def cmd_shape(opts, out: Path, root: Path) -> int:
    geom = {g.name: g for g in synthsim.SHAPE_GEOMETRIES}[opts["geometry"]]
    params = "oracle" if opts["estimator"] == "oracle" else _load_model(out, opts["model"])
    err_rows, points, curves = [], {}, {}
    failures = []
    for k in range(opts["trials"]):
        seed = int(np.random.SeedSequence([opts["seed"], k]).generate_state(1)[0])
        sc = synthsim.make_scenario(geom, seed, f"shape-{geom.name}-{k:02d}", fill_to=0.9,
                                    initial_fill=0.0)
        run = run_shape(sc, params, opts["decision_rate"])
        if run.profile is None:
            failures.append({"trial": k, "flags": run.flags})
            continue
        write_profile_csv(root / f"trial_{k:02d}_profile.csv", run.profile)
        for b, row in enumerate(evaluate_profile(run.profile, geom)):
            err_rows.append((k, b, row["h_lo"], row["h_hi"], row["mean_abs_error_mm"]))
        if k == 0:
            points["samples"] = ([s.h for s in run.samples], [s.r for s in run.samples])
            hh = np.linspace(*run.profile.h_range, 100)
            curves["quadratic fit"] = (hh, run.profile.radius(hh))
            curves["truth"] = (hh, geom.radius(hh))
    with open(root / "errors.csv", "w") as fh:
        fh.write("trial,band,h_lo_mm,h_hi_mm,mean_abs_error_mm\n")
        for r in err_rows:
            fh.write(",".join([str(r[0]), str(r[1])] + [repr(float(v)) for v in r[2:]]) + "\n")
    if points:
        svg.write(root / "shape.svg", svg.scatter_fit_chart(
            points, curves, f"Edge profile of {geom.name}", "height (mm)", "radius (mm)"))
    if err_rows:
        print(f"{geom.name}: mean radius error {np.mean([r[4] for r in err_rows]):.3f} mm")
    if failures:
        _write_json(root / "error.json", {"command": "shape", "partial_failures": failures})
        return 2
    return 0


def run_dir(command: str, opts: dict, out: Path) -> Path:
    """Directory that receives a run's outputs and its resolved ``config.ini``."""
    sub = {
        "synth": lambda: opts["suite"],
        "build-dataset": lambda: opts["name"] or opts["suite"],
        "train": lambda: opts["name"] or opts["variant"],
        "shape": lambda: opts["geometry"],
    }.get(command)
    return out / command / sub() if sub else out / command


COMMANDS = {
    "synth": cmd_synth, "noise-bank": cmd_noise_bank, "build-dataset": cmd_build_dataset,
    "train": cmd_train, "eval": cmd_eval, "pour": cmd_pour, "shape": cmd_shape,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pournet", description="Audio/haptic pouring estimator toolkit")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, options in OPTIONS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI file with [common] and per-command sections")
        p.add_argument("--out", help=f"output root (default ${cfgmod.ENV_OUT} or ./{cfgmod.DEFAULT_OUT})")
        p.add_argument("-v", "--verbose", action="store_true")
        for o in options:
            kw = {"default": None, "help": f"{o.help} (default: {o.default})".strip()}
            if o.choices:
                kw["choices"] = o.choices
            p.add_argument(o.flag, **kw)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out or cfgmod.default_out_root())
    cmd_dir = out / args.command
    try:
        opts = cfgmod.resolve(args.command, OPTIONS[args.command], vars(args), args.config)
        cmd_dir = run_dir(args.command, opts, out)
        cmd_dir.mkdir(parents=True, exist_ok=True)
        cfgmod.write_resolved(cmd_dir / "config.ini", args.command, opts)
        (cmd_dir / "error.json").unlink(missing_ok=True)
        with threadpool_limits(limits=max(1, opts["threads"])):
            return COMMANDS[args.command](opts, out, cmd_dir)
    except (CommandError, ValueError, OSError, KeyError) as exc:
        cmd_dir.mkdir(parents=True, exist_ok=True)
        _write_json(cmd_dir / "error.json", {"command": args.command, "error": str(exc),
                                             "type": type(exc).__name__})
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
