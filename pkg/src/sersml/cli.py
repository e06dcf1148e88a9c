"""Command-line entry point: ``sersml <subcommand> ...``.

Every run writes into ``<output-dir>/<command>-<hash>`` where the hash covers
the input file contents and every flag except ``--threads`` and
``--output-dir``, so repeated runs land in the same place and produce the same
bytes. Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric or model
error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from sersml.augment import AugmentationConfig, augment_dataset, diagnose
from sersml.dataset import (LabeledDataset, ScalerParams, SourceMethod, SyntheticSpec, export_spectra,
                            generate_synthetic_dataset, load_dataset, load_manifest, read_dataset,
                            save_dataset, sidecar_path)
from sersml.errors import ConfigError, SersError
from sersml.evaluation import (ModelSpec, config_to_dict, cross_validate_dataset, fit_model, make_config,
                               search_hyperparameters, write_report)
from sersml.models import ForestModel, get_preset, load_model, model_to_dict
from sersml.report import (ImportanceProfile, data_peak_positions, match_peaks, read_reference_table,
                           write_plot_csv)
from sersml.transform import TransformKind, featurize, save_features, transform_dataset

OUTPUT_ENV = "SERSML_OUTPUT_DIR"
DEFAULT_OUTPUT = "runs"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------- helpers

def _file_digest(path) -> str:
    h = hashlib.sha256()
    p = Path(path)
    for f in (p, sidecar_path(p)):
        if f.exists():
            h.update(f.read_bytes())
    return h.hexdigest()


def _run_dir(args, command: str, config: dict) -> Path:
    digest = hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:12]
    d = Path(args.output_dir) / f"{command}-{digest}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True, default=str) + "\n",
                                   encoding="utf-8")
    return d


def _load_input(path, threads: int = 1) -> LabeledDataset:
    """A saved dataset (CSV with sidecar) or a manifest JSON."""
    p = Path(path)
    if sidecar_path(p).exists():
        return read_dataset(p)
    if p.suffix.lower() == ".json":
        return load_dataset(load_manifest(p), threads=threads)
    raise ConfigError(f"{path} is neither a manifest nor a saved dataset")


def _parse_params(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def _model_config(args):
    params = {}
    if getattr(args, "preset", None):
        if args.model == "cnn":
            raise ConfigError("presets cover rfc, knn and svc only")
        preset = get_preset(args.preset)
        params = config_to_dict({"rfc": preset.forest, "knn": preset.knn, "svc": preset.svc}[args.model])
    params.update(_parse_params(getattr(args, "param", None)))
    if args.model in ("rfc", "cnn"):
        params.setdefault("seed", args.seed)
    return make_config(args.model, params)


def _augmentation(args) -> AugmentationConfig | None:
    mult = args.augment
    if mult is None:
        mult = 10 if args.model == "cnn" else 1
    if mult <= 1:
        return None
    try:
        return AugmentationConfig(multiplier=mult, seed=args.seed, flip_gate=args.flip_gate)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _dump(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _class_table(ds: LabeledDataset) -> str:
    methods = sorted({m.get("source_method", SourceMethod.SYNTHETIC.value) for m in ds.meta}, key=str)
    methods = [getattr(m, "value", m) for m in methods]
    head = ["class", *methods, "total"]
    lines = [head]
    for c, cls in enumerate(ds.classes):
        rows = [i for i in range(ds.n_samples) if ds.labels[i] == c]
        per = [sum(1 for i in rows if getattr(ds.meta[i].get("source_method"), "value",
                                              ds.meta[i].get("source_method")) == m) for m in methods]
        lines.append([cls.label, *map(str, per), str(len(rows))])
    lines.append(["total", *("" for _ in methods), str(ds.n_samples)])
    widths = [max(len(r[j]) for r in lines) for j in range(len(head))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in lines)


# --------------------------------------------------------------------------- commands

def cmd_ingest(args) -> int:
    manifest = load_manifest(args.manifest)
    ds = load_dataset(manifest, threads=args.threads)
    out = _run_dir(args, "ingest", {"command": "ingest", "manifest": manifest.to_dict(),
                                    "inputs": [_file_digest(Path(manifest.root) / e.path)
                                               for e in manifest.entries]})
    save_dataset(ds, out / "dataset.csv")
    table = _class_table(ds)
    (out / "summary.txt").write_text(f"{ds.chemical}: {ds.n_classes} classes, {ds.n_samples} spectra\n"
                                     + table + "\n", encoding="utf-8")
    print(f"{ds.chemical}: {ds.n_classes} classes, {ds.n_samples} spectra")
    print(table)
    print(f"wrote {out / 'dataset.csv'}")
    return 0


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        concentrations=tuple(args.concentrations), n_per_class=args.n_per_class,
        grid_min=args.grid_min, grid_max=args.grid_max, spacing=args.spacing, noise=args.noise,
        baseline=args.baseline, tilt_std=args.tilt, amplitude_jitter=args.jitter,
        spurious_rate=args.spurious_rate, chemical=args.chemical,
    )
    ds = generate_synthetic_dataset(spec, seed=args.seed)
    cfg = {"command": "synth", "seed": args.seed, "spec": dataclasses.asdict(spec)}
    out = _run_dir(args, "synth", cfg)
    save_dataset(ds, out / "dataset.csv")
    if args.export_spectra:
        export_spectra(ds, out / "spectra", spacing=args.spacing)
    print(f"{ds.n_classes} classes, {ds.n_samples} spectra -> {out / 'dataset.csv'}")
    return 0


def cmd_transform(args) -> int:
    ds = _load_input(args.dataset, args.threads)
    cfg = {"command": "transform", "input": _file_digest(args.dataset), "transform": args.transform,
           "normalize": not args.no_normalize, "normalization": args.normalization,
           "fourier_half": args.fourier_half}
    out = _run_dir(args, "transform", cfg)
    fm = transform_dataset(ds, args.transform, normalize=not args.no_normalize,
                           normalization=args.normalization, fourier_half=args.fourier_half)
    save_features(fm, out / "features.csv")
    print(f"{fm.kind.value} features {fm.shape} -> {out / 'features.csv'}")
    return 0


def cmd_augment(args) -> int:
    ds = _load_input(args.dataset, args.threads)
    try:
        aug = AugmentationConfig(multiplier=args.multiplier, seed=args.seed, flip_gate=args.flip_gate)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg = {"command": "augment", "input": _file_digest(args.dataset), "augmentation": aug.to_dict()}
    out = _run_dir(args, "augment", cfg)
    diag = diagnose(ds, aug)
    result = augment_dataset(ds, aug, diag, threads=args.threads)
    save_dataset(result, out / "augmented.csv")
    _dump(out / "diagnostics.json", dataclasses.asdict(diag))
    print(f"{ds.n_samples} -> {result.n_samples} spectra (single-occurrence fraction "
          f"{diag.single_fraction:.3f}, flip {'on' if diag.flip_enabled else 'off'})")
    return 0


def _train_config(args, ds_digest) -> dict:
    return {"input": ds_digest, "model": args.model, "config": config_to_dict(_model_config(args)),
            "transform": args.transform, "normalize": not args.no_normalize,
            "normalization": args.normalization, "seed": args.seed,
            "augmentation": (a.to_dict() if (a := _augmentation(args)) else None)}


def cmd_train(args) -> int:
    ds = _load_input(args.dataset, args.threads)
    cfg = {"command": "train", **_train_config(args, _file_digest(args.dataset))}
    out = _run_dir(args, "train", cfg)
    spec = ModelSpec(args.model, _model_config(args), _augmentation(args))
    kind = TransformKind(args.transform)

    def feats(X):
        return featurize(X, kind, normalize=not args.no_normalize, normalization=args.normalization)

    train = ds
    X_val = y_val = None
    if spec.kind == "cnn":
        from sersml.evaluation import _carve_validation
        from sersml._parallel import child_rng

        tr, va = _carve_validation(ds.n_samples, spec.val_fraction, child_rng(args.seed, "cnn-val"))
        train = ds.subset(tr)
        X_val, y_val = feats(ds.intensities[va]), ds.labels[va]
    if spec.augmentation is not None:
        train = augment_dataset(train, spec.augmentation, threads=args.threads)
    Xtr = feats(train.intensities)
    scaler = ScalerParams.fit(Xtr)
    Xtr = scaler.transform(Xtr)
    if X_val is not None:
        X_val = scaler.transform(X_val)
    model, hist = fit_model(spec, Xtr, train.labels, ds.n_classes, args.seed, X_val, y_val)
    doc = model_to_dict(model)
    doc["preprocessing"] = {"transform": kind.value, "normalize": not args.no_normalize,
                            "normalization": args.normalization, "scaler_mean": scaler.mean.tolist(),
                            "scaler_scale": scaler.scale.tolist(), "grid": ds.grid.tolist(),
                            "class_labels": [c.label for c in ds.classes]}
    (out / "model.json").write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
    if hist is not None:
        hist.to_csv(out / "history.csv")
    acc = float(np.mean(model.predict(Xtr) == train.labels))
    print(f"{args.model} trained on {Xtr.shape[0]} rows (training accuracy {acc:.3f}) -> {out / 'model.json'}")
    return 0


def cmd_cv(args) -> int:
    ds = _load_input(args.dataset, args.threads)
    cfg = {"command": "cv", "k": args.k, **_train_config(args, _file_digest(args.dataset))}
    out = _run_dir(args, "cv", cfg)
    spec = ModelSpec(args.model, _model_config(args), _augmentation(args))
    report = cross_validate_dataset(spec, ds, args.transform, args.k, args.seed,
                                    normalize=not args.no_normalize, normalization=args.normalization,
                                    threads=args.threads, name=args.name or ds.chemical)
    write_report(report, out)
    print(f"{report.dataset} {report.transform} {report.model}: "
          f"{report.mean:.3f} +/- {report.std:.3f} (E_reg {report.e_reg:.4f}) -> {out}")
    return 0


def cmd_search(args) -> int:
    ds = _load_input(args.dataset, args.threads)
    grid_text = Path(args.grid).read_text(encoding="utf-8") if Path(args.grid).is_file() else args.grid
    try:
        grid = json.loads(grid_text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--grid is not valid JSON: {exc}") from exc
    base = config_to_dict(_model_config(args))
    cfg = {"command": "search", "grid": grid, "budget": args.budget, **_train_config(args, _file_digest(args.dataset)),
           "k": args.k}
    out = _run_dir(args, "search", cfg)
    result = search_hyperparameters(args.model, grid, ds, k=args.k, seed=args.seed, budget=args.budget,
                                    base=base, augmentation=_augmentation(args), transform=args.transform,
                                    normalize=not args.no_normalize, normalization=args.normalization,
                                    threads=1)
    _dump(out / "search.json", result.to_dict())
    print(f"best {args.model} {result.best_params}: {result.leaderboard[0].mean:.3f} "
          f"+/- {result.leaderboard[0].std:.3f} -> {out / 'search.json'}")
    return 0


def cmd_report(args) -> int:
    doc = json.loads(Path(args.model_file).read_text(encoding="utf-8"))
    model = load_model(args.model_file)
    if not isinstance(model, ForestModel):
        raise ConfigError(f"a {doc.get('kind')} model has no feature importances; train an rfc model")
    pre = doc.get("preprocessing", {})
    ds = _load_input(args.dataset, args.threads)
    if pre.get("transform", "scaled") != "scaled" or model.n_features != ds.grid.size:
        raise ConfigError("importances map to wavenumbers only for a forest trained on scaled spectra "
                          "of the same grid")
    refs = read_reference_table(args.reference) if args.reference else []
    cfg = {"command": "report", "model": _file_digest(args.model_file), "input": _file_digest(args.dataset),
           "reference": _file_digest(args.reference) if args.reference else None,
           "tolerance": args.tolerance, "threshold": args.threshold}
    out = _run_dir(args, "report", cfg)
    profile = ImportanceProfile.from_importances(ds.grid, model.importances)
    match = match_peaks(profile, data_peak_positions(ds), refs, args.tolerance, args.threshold)
    profile.to_csv(out / "importance_profile.csv")
    match.to_json(out / "peak_match.json")
    match.to_table_csv(out / "peak_table.csv")
    write_plot_csv(ds, profile, out / "plot.csv")
    counts = {s.value: len(match.by_status(s)) for s in type(match.rows[0].status)} if match.rows else {}
    print(f"peak statuses {counts} -> {out}")
    return 0


# --------------------------------------------------------------------------- parser

def _add_model_args(p, default_model="rfc"):
    p.add_argument("dataset", help="saved dataset CSV (with sidecar) or manifest JSON")
    p.add_argument("--model", choices=("rfc", "knn", "svc", "cnn"), default=default_model)
    p.add_argument("--preset", help="tuned hyperparameters: r6g, r6g-ouzo, r6g-agnano, triclosan, chlorpyrifos")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="override one hyperparameter")
    p.add_argument("--transform", choices=[k.value for k in TransformKind], default="hadamard")
    p.add_argument("--no-normalize", action="store_true", help="skip per-spectrum min-max normalization")
    p.add_argument("--normalization", choices=("minmax", "unit"), default="minmax")
    p.add_argument("--augment", type=int, default=None,
                   help="augmentation multiplier for training folds (default 10 for cnn, off otherwise)")
    p.add_argument("--flip-gate", choices=("above", "at_most"), default="above")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sersml", description="SERS concentration classification pipeline")
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--output-dir", default=os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT),
                        help=f"root for run directories (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="load a manifest onto its grid")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--concentrations", type=float, nargs="+", default=[1e-5, 1e-6, 1e-7, 1e-8, 1e-9])
    p.add_argument("--n-per-class", type=int, default=10)
    p.add_argument("--grid-min", type=float, default=400.0)
    p.add_argument("--grid-max", type=float, default=1800.0)
    p.add_argument("--spacing", type=float, default=2.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--baseline", action="store_true", help="add offsets and mark spectra uncorrected")
    p.add_argument("--tilt", type=float, default=0.0)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--spurious-rate", type=float, default=0.0)
    p.add_argument("--chemical", default="synthetic")
    p.add_argument("--export-spectra", action="store_true", help="also write per-spectrum CSVs and a manifest")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("transform", parents=[common], help="write a feature matrix")
    p.add_argument("dataset")
    p.add_argument("--transform", choices=[k.value for k in TransformKind], default="hadamard")
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--normalization", choices=("minmax", "unit"), default="minmax")
    p.add_argument("--fourier-half", action="store_true")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("augment", parents=[common], help="augment a (training) dataset")
    p.add_argument("dataset")
    p.add_argument("--multiplier", type=int, default=10)
    p.add_argument("--flip-gate", choices=("above", "at_most"), default="above")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", parents=[common], help="fit one model on a whole dataset")
    _add_model_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", parents=[common], help="stratified k-fold cross-validation")
    _add_model_args(p)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--name", help="dataset name in the report (default: chemical)")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("search", parents=[common], help="grid or random hyperparameter search")
    _add_model_args(p)
    p.add_argument("--grid", required=True, help="JSON object of value lists (inline or file)")
    p.add_argument("--budget", type=int, help="evaluate this many random grid points")
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("report", parents=[common], help="importance profile and peak matching")
    p.add_argument("model_file")
    p.add_argument("dataset")
    p.add_argument("--reference", help="CSV of wavenumber_cm-1,assignment")
    p.add_argument("--tolerance", type=float, default=20.0)
    p.add_argument("--threshold", type=float, default=0.13)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        return args.func(args)
    except SersError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
