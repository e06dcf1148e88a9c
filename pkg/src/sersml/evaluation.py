"""Stratified cross-validation, error metrics and hyperparameter search.

Everything fitted inside a fold (column scaler, augmentation statistics,
model) sees the training rows of that fold only. Per-fold seeds are derived
from the master seed by counter, so results do not depend on how folds are
scheduled across threads.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from sersml._parallel import child_rng, derive_seed, thread_map
from sersml.augment import AugmentationConfig, augment_dataset
from sersml.dataset import LabeledDataset, ScalerParams
from sersml.errors import ConfigError, DomainError, FoldError, LengthMismatch, SersError
from sersml.models import (ForestConfig, KnnConfig, SvcConfig, forest_fit, knn_fit, svc_fit)
from sersml.nn import CnnConfig, Network, cnn_train
from sersml.transform import FeatureMatrix, TransformKind, featurize

MODEL_KINDS = ("knn", "rfc", "svc", "cnn")
_CONFIG_TYPES = {"knn": KnnConfig, "rfc": ForestConfig, "svc": SvcConfig, "cnn": CnnConfig}


def make_config(kind: str, params: dict | None = None):
    """Build the config dataclass for ``kind`` from keyword parameters."""
    if kind not in _CONFIG_TYPES:
        raise ConfigError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    cls = _CONFIG_TYPES[kind]
    params = dict(params or {})
    unknown = set(params) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {kind} parameters: {sorted(unknown)}")
    try:
        return cls(**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(config) -> dict:
    out = {}
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        out[f.name] = v.value if hasattr(v, "value") else v
    return out


@dataclass(frozen=True)
class ModelSpec:
    """A model kind, its hyperparameters, and optional training-fold augmentation."""

    kind: str
    config: Any = None
    augmentation: AugmentationConfig | None = None
    val_fraction: float = 0.1  # CNN only: share of the training fold held for monitoring

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; choose from {MODEL_KINDS}")
        if self.config is None:
            object.__setattr__(self, "config", _CONFIG_TYPES[self.kind]())
        elif not isinstance(self.config, _CONFIG_TYPES[self.kind]):
            raise ConfigError(f"{self.kind} needs a {_CONFIG_TYPES[self.kind].__name__}")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "config": config_to_dict(self.config)}
        if self.augmentation is not None:
            d["augmentation"] = self.augmentation.to_dict()
        if self.kind == "cnn":
            d["val_fraction"] = self.val_fraction
        return d


# --------------------------------------------------------------------------- folds

def stratified_kfold(labels, k: int, seed: int = 0) -> np.ndarray:
    """Fold index for every sample.

    Classes are visited in order of first appearance; each is shuffled and
    dealt round-robin, continuing from where the previous class stopped so
    fold sizes stay balanced overall.
    """
    y = np.asarray(labels)
    if k < 2:
        raise ConfigError("k must be at least 2")
    _, first, inverse, counts = np.unique(y, return_index=True, return_inverse=True, return_counts=True)
    small = [(y[first[c]].item(), int(counts[c])) for c in range(counts.size) if counts[c] < k]
    if small:
        smallest = min(n for _, n in small)
        raise FoldError(
            f"k={k} folds need at least {k} samples per class but class(es) "
            f"{[c for c, _ in small]} have as few as {smallest}; use k <= {int(counts.min())}"
        )
    rng = child_rng(seed, "folds")
    folds = np.empty(y.size, dtype=np.int64)
    offset = 0
    for c in np.argsort(first, kind="stable"):
        idx = np.flatnonzero(inverse == c)
        shuffled = rng.permutation(idx)
        folds[shuffled] = (offset + np.arange(idx.size)) % k
        offset = (offset + idx.size) % k
    return folds


# --------------------------------------------------------------------------- metrics

def accuracy(pred, true) -> float:
    pred, true = np.asarray(pred), np.asarray(true)
    if pred.shape != true.shape:
        raise LengthMismatch("prediction and truth lengths differ")
    return float(np.mean(pred == true)) if true.size else 0.0


def _check_indices(pred, true, n_classes):
    p = np.asarray(pred, dtype=np.int64)
    t = np.asarray(true, dtype=np.int64)
    if p.shape != t.shape:
        raise LengthMismatch(f"{p.size} predictions for {t.size} true labels")
    for a in (p, t):
        if a.size and (a.min() < 0 or a.max() >= n_classes):
            raise DomainError(f"class index outside [0, {n_classes})")
    return p, t


def regression_error(pred, true, n_classes: int) -> float:
    """``sum((pred - true)**2) / n_classes**2`` over all predictions."""
    p, t = _check_indices(pred, true, n_classes)
    return float(np.sum((p - t) ** 2)) / n_classes ** 2


def regression_error_mean(pred, true, n_classes: int) -> float:
    """Per-prediction mean of the squared categorical distance, over ``n_classes**2``."""
    p, t = _check_indices(pred, true, n_classes)
    return regression_error(p, t, n_classes) / p.size if p.size else 0.0


def confusion_matrix(pred, true, n_classes: int) -> np.ndarray:
    p, t = _check_indices(pred, true, n_classes)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


# --------------------------------------------------------------------------- reports

@dataclass(eq=False)
class CvReport:
    model: str
    transform: str
    dataset: str
    k: int
    seed: int
    n_classes: int
    class_labels: list[str]
    fold_accuracies: list[float]
    mean: float
    std: float
    confusion: np.ndarray
    e_reg: float
    e_reg_mean: float
    e_reg_folds: list[float]
    folds: np.ndarray
    labels: np.ndarray
    predictions: np.ndarray
    spec: dict
    fit_times: list[float] = field(default_factory=list)
    histories: list = field(default_factory=list)
    models: list = field(default_factory=list)

    def to_dict(self) -> dict:
        """Everything except wall times, so equal runs serialize identically."""
        return {
            "format": "sersml-cv-report",
            "version": 1,
            "dataset": self.dataset,
            "transform": self.transform,
            "model": self.model,
            "spec": self.spec,
            "k": self.k,
            "seed": self.seed,
            "n_classes": self.n_classes,
            "class_labels": list(self.class_labels),
            "fold_accuracies": list(self.fold_accuracies),
            "mean": self.mean,
            "std": self.std,
            "e_reg": self.e_reg,
            "e_reg_mean": self.e_reg_mean,
            "e_reg_folds": list(self.e_reg_folds),
            "confusion": self.confusion.tolist(),
            "folds": self.folds.tolist(),
            "labels": self.labels.tolist(),
            "predictions": self.predictions.tolist(),
        }


def _build_report(results, y, folds, k, seed, n_classes, class_labels, model, transform, dataset, spec):
    preds = np.empty_like(y)
    for r in results:
        preds[r["val_idx"]] = r["pred"]
    accs = [r["accuracy"] for r in results]
    return CvReport(
        model=model, transform=transform, dataset=dataset, k=k, seed=seed, n_classes=n_classes,
        class_labels=list(class_labels), fold_accuracies=accs,
        mean=float(sum(accs) / len(accs)),
        std=float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0,
        confusion=confusion_matrix(preds, y, n_classes),
        e_reg=regression_error(preds, y, n_classes),
        e_reg_mean=regression_error_mean(preds, y, n_classes),
        e_reg_folds=[regression_error(r["pred"], y[r["val_idx"]], n_classes) for r in results],
        folds=folds, labels=np.asarray(y), predictions=preds, spec=spec,
        fit_times=[r["fit_time"] for r in results],
        histories=[r["history"] for r in results if r["history"] is not None],
        models=[r["model"] for r in results if r["model"] is not None],
    )


def write_report(report: CvReport, directory) -> dict[str, Path]:
    """Write JSON, a one-row summary table, the confusion matrix and timings."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"json": d / "cv_report.json", "table": d / "cv_table.csv",
             "confusion": d / "confusion.csv", "timings": d / "timings.csv"}
    paths["json"].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with paths["table"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "transform", "model", "mean", "std"])
        w.writerow([report.dataset, report.transform, report.model,
                    f"{report.mean:.6f}", f"{report.std:.6f}"])
    with paths["confusion"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\predicted", *report.class_labels])
        for lab, row in zip(report.class_labels, report.confusion):
            w.writerow([lab, *(int(v) for v in row)])
    with paths["timings"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "fit_seconds"])
        for f, t in enumerate(report.fit_times):
            w.writerow([f + 1, f"{t:.6f}"])
    for f, hist in enumerate(report.histories):
        paths[f"history_{f + 1}"] = hist.to_csv(d / f"history_fold{f + 1}.csv")
    return paths


# --------------------------------------------------------------------------- fitting

def _carve_validation(n: int, fraction: float, rng: np.random.Generator):
    if n < 2:
        raise ConfigError("need at least two training rows to hold out a validation split")
    n_val = min(n - 1, max(1, int(round(fraction * n))))
    perm = rng.permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def fit_model(spec: ModelSpec, X, y, n_classes: int, seed: int = 0, X_val=None, y_val=None):
    """Fit one model; returns ``(model, history)`` where history is CNN-only."""
    cfg = spec.config
    if spec.kind == "knn":
        return knn_fit(X, y, cfg, n_classes), None
    if spec.kind == "rfc":
        return forest_fit(X, y, dataclasses.replace(cfg, seed=seed), n_classes), None
    if spec.kind == "svc":
        return svc_fit(X, y, cfg, n_classes), None
    cfg = dataclasses.replace(cfg, seed=seed)
    if X_val is None:
        tr, va = _carve_validation(len(y), spec.val_fraction, child_rng(seed, "cnn-val"))
        X, y, X_val, y_val = X[tr], y[tr], X[va], y[va]
    net = Network(X.shape[1], n_classes, cfg)
    return net, cnn_train(net, X, y, X_val, y_val, cfg)


def _run_fold(f, k, fn):
    try:
        return fn()
    except SersError as exc:
        exc.fold = f
        exc.args = (f"fold {f + 1}/{k}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise


def cross_validate(spec: ModelSpec, features, labels=None, k: int = 5, seed: int = 0, *,
                   n_classes: int | None = None, scale: bool = True, threads: int = 1,
                   keep_models: bool = False, dataset: str = "", transform: str | None = None,
                   class_labels=None) -> CvReport:
    """Cross-validate on a ready feature matrix.

    Columns are z-scored with statistics of each training fold. Augmentation
    needs raw spectra, so use :func:`cross_validate_dataset` for that.
    """
    if spec.augmentation is not None:
        raise ConfigError("augmentation needs raw spectra; use cross_validate_dataset")
    if isinstance(features, FeatureMatrix):
        transform = transform or features.kind.value
        labels = features.labels if labels is None else labels
        X = features.values
    else:
        X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.shape[0] != y.size:
        raise LengthMismatch("one label per feature row required")
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    folds = stratified_kfold(y, k, seed)

    def _fold(f):
        def body():
            tr, va = np.flatnonzero(folds != f), np.flatnonzero(folds == f)
            Xtr, Xva = X[tr], X[va]
            if scale:
                sc = ScalerParams.fit(Xtr)
                Xtr, Xva = sc.transform(Xtr), sc.transform(Xva)
            t0 = time.perf_counter()
            model, hist = fit_model(spec, Xtr, y[tr], n_classes, derive_seed(seed, "fold", f))
            fit_time = time.perf_counter() - t0
            pred = model.predict(Xva)
            return {"val_idx": va, "pred": pred, "accuracy": accuracy(pred, y[va]),
                    "fit_time": fit_time, "history": hist, "model": model if keep_models else None}
        return _run_fold(f, k, body)

    results = thread_map(_fold, range(k), threads)
    return _build_report(results, y, folds, k, seed, n_classes,
                         class_labels or [str(c) for c in range(n_classes)],
                         spec.kind, transform or "", dataset, spec.to_dict())


def _tag_train(ds: LabeledDataset) -> LabeledDataset:
    meta = [dict(m, partition="train") for m in ds.meta]
    return ds.with_rows(ds.intensities, ds.labels, meta)


def cross_validate_dataset(spec: ModelSpec, dataset: LabeledDataset, transform: TransformKind | str,
                           k: int = 5, seed: int = 0, *, normalize: bool = True,
                           normalization: str = "minmax", fourier_half: bool = False,
                           scale: bool = True, threads: int = 1, keep_models: bool = False,
                           name: str | None = None) -> CvReport:
    """Full raw-spectrum pipeline per fold.

    Training rows of a fold are (for the CNN) split into fit and monitoring
    parts, the fit part is augmented, every part is normalized and
    transformed row by row, and the column scaler is fitted on the fit part.
    """
    kind = TransformKind(transform)
    y = dataset.labels
    folds = stratified_kfold(y, k, seed)

    def feats(X):
        return featurize(X, kind, normalize=normalize, normalization=normalization,
                         fourier_half=fourier_half)

    def _fold(f):
        def body():
            fold_seed = derive_seed(seed, "fold", f)
            tr, va = np.flatnonzero(folds != f), np.flatnonzero(folds == f)
            mon = None
            if spec.kind == "cnn":
                fit_rows, mon_rows = _carve_validation(tr.size, spec.val_fraction,
                                                       child_rng(fold_seed, "cnn-val"))
                tr, mon = tr[fit_rows], tr[mon_rows]
            train = _tag_train(dataset.subset(tr))
            if spec.augmentation is not None:
                aug = dataclasses.replace(spec.augmentation, seed=derive_seed(fold_seed, "augment"))
                train = augment_dataset(train, aug)
            Xtr = feats(train.intensities)
            Xva = feats(dataset.intensities[va])
            Xmon = feats(dataset.intensities[mon]) if mon is not None else None
            if scale:
                sc = ScalerParams.fit(Xtr)
                Xtr, Xva = sc.transform(Xtr), sc.transform(Xva)
                Xmon = sc.transform(Xmon) if Xmon is not None else None
            t0 = time.perf_counter()
            model, hist = fit_model(spec, Xtr, train.labels, dataset.n_classes, fold_seed,
                                    Xmon, y[mon] if mon is not None else None)
            fit_time = time.perf_counter() - t0
            pred = model.predict(Xva)
            return {"val_idx": va, "pred": pred, "accuracy": accuracy(pred, y[va]),
                    "fit_time": fit_time, "history": hist, "model": model if keep_models else None}
        return _run_fold(f, k, body)

    results = thread_map(_fold, range(k), threads)
    return _build_report(results, y, folds, k, seed, dataset.n_classes,
                         [c.label for c in dataset.classes], spec.kind, kind.value,
                         name if name is not None else dataset.chemical, spec.to_dict())


# --------------------------------------------------------------------------- search

@dataclass(frozen=True)
class SearchEntry:
    params: dict
    mean: float
    std: float
    fit_time: float
    index: int


@dataclass(frozen=True)
class SearchResult:
    best_params: dict
    best_config: Any
    leaderboard: tuple[SearchEntry, ...]

    def to_dict(self) -> dict:
        return {"best_params": self.best_params,
                "leaderboard": [{"rank": r + 1, "params": e.params, "mean": e.mean, "std": e.std}
                                for r, e in enumerate(self.leaderboard)]}


def expand_grid(grid) -> list[dict]:
    """A dict of value lists becomes its Cartesian product; a list of dicts is kept."""
    if isinstance(grid, dict):
        keys = sorted(grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(list(grid[k]) for k in keys))]
    return [dict(p) for p in grid]


def rank_entries(entries) -> list[SearchEntry]:
    """Higher mean first, then lower std, then shorter fit time."""
    return sorted(entries, key=lambda e: (-e.mean, e.std, e.fit_time, e.index))


def search_hyperparameters(kind: str, grid, features, labels=None, k: int = 5, seed: int = 0, *,
                           budget: int | None = None, base: dict | None = None,
                           augmentation: AugmentationConfig | None = None,
                           transform: TransformKind | str | None = None, threads: int = 1,
                           **cv_kwargs) -> SearchResult:
    """Grid search, or seeded random search over the grid when ``budget`` is smaller.

    ``features`` may be a feature matrix or, together with ``transform``, a
    raw :class:`LabeledDataset`.
    """
    points = expand_grid(grid)
    if not points:
        raise ConfigError("empty parameter grid")
    order = list(range(len(points)))
    if budget is not None:
        if budget < 1:
            raise ConfigError("search budget must be positive")
        if budget < len(points):
            order = sorted(child_rng(seed, "search").choice(len(points), budget, replace=False).tolist())
    base = dict(base or {})

    def _evaluate(i):
        cfg = make_config(kind, {**base, **points[i]})
        spec = ModelSpec(kind, cfg, augmentation)
        if isinstance(features, LabeledDataset):
            if transform is None:
                raise ConfigError("searching on raw spectra needs a transform")
            rep = cross_validate_dataset(spec, features, transform, k, seed, **cv_kwargs)
        else:
            rep = cross_validate(spec, features, labels, k, seed, **cv_kwargs)
        return SearchEntry(points[i], rep.mean, rep.std, float(sum(rep.fit_times)), i)

    board = rank_entries(thread_map(_evaluate, order, threads))
    best = board[0]
    return SearchResult(best.params, make_config(kind, {**base, **best.params}), tuple(board))
