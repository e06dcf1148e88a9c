"""Spectrum ingestion, grid alignment, normalization and labelling.

A manifest lists raw two-column spectrum files together with their
concentration and provenance. :func:`load_dataset` resamples every file onto
one shared wavenumber grid, drops under-populated concentrations and returns a
:class:`LabeledDataset` whose classes are ordered by descending concentration.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from sersml._parallel import thread_map
from sersml.errors import DegenerateSpectrum, EmptyDataset, FileError, GridError

__all__ = [
    "SourceMethod",
    "Spectrum",
    "ConcentrationClass",
    "LabeledDataset",
    "ManifestEntry",
    "DatasetManifest",
    "ScalerParams",
    "PeakShape",
    "SyntheticSpec",
    "make_grid",
    "read_spectrum_csv",
    "write_spectrum_csv",
    "load_manifest",
    "load_dataset",
    "resample",
    "minmax_normalize",
    "unit_normalize",
    "normalize_rows",
    "zscore_scale",
    "assign_class_labels",
    "generate_synthetic_dataset",
    "save_dataset",
    "read_dataset",
    "export_spectra",
]

# Grid nodes may overshoot a spectrum's range by rounding noise only.
_GRID_SLACK = 1e-9


class SourceMethod(str, enum.Enum):
    EVAPORATING_OUZO = "evaporating_ouzo"
    SILVER_NANOPARTICLES = "silver_nanoparticles"
    SYNTHETIC = "synthetic"


def _frozen_array(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Spectrum:
    """One recorded Raman trace."""

    wavenumbers: np.ndarray
    intensities: np.ndarray
    chemical: str = "unknown"
    concentration: float = 1.0
    source_method: SourceMethod = SourceMethod.SYNTHETIC
    baseline_corrected: bool = True

    def __post_init__(self):
        wn = _frozen_array(self.wavenumbers, "wavenumbers")
        iy = _frozen_array(self.intensities, "intensities")
        if wn.shape != iy.shape:
            raise ValueError("wavenumbers and intensities differ in length")
        if wn.size == 0:
            raise ValueError("empty spectrum")
        if not (np.all(np.isfinite(wn)) and np.all(np.isfinite(iy))):
            raise ValueError("spectrum contains non-finite values")
        if np.any(np.diff(wn) <= 0):
            raise ValueError("wavenumbers must be strictly increasing")
        if not self.concentration > 0:
            raise ValueError("concentration must be positive")
        object.__setattr__(self, "wavenumbers", wn)
        object.__setattr__(self, "intensities", iy)
        object.__setattr__(self, "source_method", SourceMethod(self.source_method))

    def __len__(self) -> int:
        return self.wavenumbers.size

    def with_intensities(self, intensities) -> "Spectrum":
        return dataclasses.replace(self, intensities=intensities)


@dataclass(frozen=True)
class ConcentrationClass:
    concentration: float
    label: str


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Spectra on a shared grid with concentration-class labels.

    ``intensities`` is ``(n_samples, n_grid)``; ``labels`` index into
    ``classes``, which are sorted by descending concentration. ``meta`` holds
    one dict per sample (source method, baseline flag, file path, ...).
    """

    grid: np.ndarray
    intensities: np.ndarray
    labels: np.ndarray
    classes: tuple[ConcentrationClass, ...]
    meta: tuple[dict, ...] = ()
    chemical: str = "unknown"

    _require_every_class = True

    def __post_init__(self):
        grid = _frozen_array(self.grid, "grid")
        X = np.array(self.intensities, dtype=np.float64)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, grid.size)
        y = np.array(self.labels, dtype=np.int64)
        if X.ndim != 2 or X.shape[1] != grid.size:
            raise ValueError("every intensity vector must match the grid length")
        if y.shape != (X.shape[0],):
            raise ValueError("one label per sample required")
        classes = tuple(self.classes)
        if y.size and (y.min() < 0 or y.max() >= len(classes)):
            raise ValueError("class index out of range")
        if self._require_every_class and y.size and np.any(np.bincount(y, minlength=len(classes)) == 0):
            raise ValueError("every class needs at least one sample")
        concs = [c.concentration for c in classes]
        if any(a <= b for a, b in zip(concs, concs[1:])):
            raise ValueError("classes must be sorted by descending concentration")
        meta = tuple(dict(m) for m in self.meta) if self.meta else tuple({} for _ in range(y.size))
        if len(meta) != y.size:
            raise ValueError("one metadata record per sample required")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "intensities", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "meta", meta)

    @property
    def n_samples(self) -> int:
        return int(self.labels.size)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def __len__(self) -> int:
        return self.n_samples

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def spectrum(self, i: int) -> Spectrum:
        m = self.meta[i]
        return Spectrum(
            self.grid,
            self.intensities[i],
            chemical=m.get("chemical", self.chemical),
            concentration=self.classes[self.labels[i]].concentration,
            source_method=m.get("source_method", SourceMethod.SYNTHETIC),
            baseline_corrected=bool(m.get("baseline_corrected", True)),
        )

    def subset(self, indices) -> "LabeledDataset":
        """Rows ``indices`` with the full class list kept (labels unchanged)."""
        idx = np.asarray(indices, dtype=np.int64)
        return _LooseDataset(
            grid=self.grid,
            intensities=self.intensities[idx],
            labels=self.labels[idx],
            classes=self.classes,
            meta=tuple(self.meta[i] for i in idx),
            chemical=self.chemical,
        )

    def with_rows(self, intensities, labels, meta) -> "LabeledDataset":
        return _LooseDataset(self.grid, intensities, labels, self.classes, tuple(meta), self.chemical)

    def baseline_uncorrected_mask(self) -> np.ndarray:
        return np.array([not m.get("baseline_corrected", True) for m in self.meta], dtype=bool)


class _LooseDataset(LabeledDataset):
    """A row subset (e.g. one CV fold); some classes may have no rows."""

    _require_every_class = False


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    chemical: str
    concentration: float
    source_method: SourceMethod = SourceMethod.SYNTHETIC
    baseline_corrected: bool = True

    def __post_init__(self):
        if not self.path:
            raise ValueError("manifest entry path is empty")
        if not self.concentration > 0:
            raise ValueError(f"{self.path}: concentration must be positive")
        object.__setattr__(self, "source_method", SourceMethod(self.source_method))


@dataclass(frozen=True)
class DatasetManifest:
    """Which files make up a dataset and how they are put on one grid.

    Relative entry paths are resolved against ``root``.
    """

    entries: tuple[ManifestEntry, ...]
    spacing: float
    window: tuple[float, float]
    min_per_class: int = 4
    chemical: str = "unknown"
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")
        lo, hi = self.window
        if not lo < hi:
            raise ValueError("truncation window needs min_wn < max_wn")
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "window", (float(lo), float(hi)))
        object.__setattr__(self, "root", Path(self.root))

    @property
    def grid(self) -> np.ndarray:
        return make_grid(self.window[0], self.window[1], self.spacing)

    def to_dict(self) -> dict:
        return {
            "chemical": self.chemical,
            "spacing": self.spacing,
            "window": list(self.window),
            "min_per_class": self.min_per_class,
            "files": [
                {
                    "path": e.path,
                    "chemical": e.chemical,
                    "concentration": e.concentration,
                    "source_method": e.source_method.value,
                    "baseline_corrected": e.baseline_corrected,
                }
                for e in self.entries
            ],
        }


def make_grid(min_wn: float, max_wn: float, spacing: float) -> np.ndarray:
    """Nodes ``min_wn + k * spacing`` that do not pass ``max_wn``."""
    n = int(math.floor((max_wn - min_wn) / spacing + 1e-9)) + 1
    return min_wn + spacing * np.arange(n, dtype=np.float64)


def _parse_float(text: str) -> float | None:
    try:
        return float(text)
    except ValueError:
        return None


def read_spectrum_csv(path, *, chemical="unknown", concentration=1.0,
                      source_method=SourceMethod.SYNTHETIC, baseline_corrected=True) -> Spectrum:
    """Read a ``wavenumber,intensity`` CSV file.

    A first row that does not parse as numbers is treated as a header.
    Files written with descending wavenumbers (common for instrument exports)
    are reversed.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise FileError(f"cannot read spectrum file {path}: {exc}") from exc
    if rows and any(_parse_float(c) is None for c in rows[0][:2]):
        rows = rows[1:]
    if not rows:
        raise FileError(f"{path}: no data rows")
    try:
        data = np.array([[float(r[0]), float(r[1])] for r in rows], dtype=np.float64)
    except (ValueError, IndexError) as exc:
        raise FileError(f"{path}: expected two numeric columns ({exc})") from exc
    wn, iy = data[:, 0], data[:, 1]
    if wn.size > 1 and np.all(np.diff(wn) < 0):
        wn, iy = wn[::-1], iy[::-1]
    try:
        return Spectrum(wn, iy, chemical=chemical, concentration=concentration,
                        source_method=source_method, baseline_corrected=baseline_corrected)
    except ValueError as exc:
        raise FileError(f"{path}: {exc}") from exc


def write_spectrum_csv(spectrum: Spectrum, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wavenumber", "intensity"])
        for x, v in zip(spectrum.wavenumbers, spectrum.intensities):
            w.writerow([format(x, ".17g"), format(v, ".17g")])


def load_manifest(path) -> DatasetManifest:
    """Parse a manifest JSON document.

    Schema::

        {"chemical": "r6g", "spacing": 2.12, "window": [600, 1700],
         "min_per_class": 4,
         "files": [{"path": "a.csv", "concentration": 1e-5,
                    "source_method": "evaporating_ouzo",
                    "baseline_corrected": false, "chemical": "r6g"}, ...]}
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FileError(f"cannot read manifest {path}: {exc}") from exc
    return manifest_from_dict(doc, root=path.parent)


def manifest_from_dict(doc: Mapping[str, Any], root=".") -> DatasetManifest:
    chemical = doc.get("chemical", "unknown")
    try:
        entries = tuple(
            ManifestEntry(
                path=f["path"],
                chemical=f.get("chemical", chemical),
                concentration=float(f["concentration"]),
                source_method=f.get("source_method", SourceMethod.SYNTHETIC.value),
                baseline_corrected=bool(f.get("baseline_corrected", True)),
            )
            for f in doc.get("files", [])
        )
        return DatasetManifest(
            entries=entries,
            spacing=float(doc["spacing"]),
            window=tuple(doc["window"]),
            min_per_class=int(doc.get("min_per_class", 4)),
            chemical=chemical,
            root=Path(root),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FileError(f"invalid manifest: {exc}") from exc


def resample(s: Spectrum, grid) -> Spectrum:
    """Linearly interpolate ``s`` onto ``grid``; never extrapolates."""
    grid = np.asarray(grid, dtype=np.float64)
    lo, hi = s.wavenumbers[0], s.wavenumbers[-1]
    if grid.size == 0:
        raise GridError("empty target grid")
    if grid[0] < lo - _GRID_SLACK or grid[-1] > hi + _GRID_SLACK:
        raise GridError(
            f"grid [{grid[0]:g}, {grid[-1]:g}] exceeds spectrum range [{lo:g}, {hi:g}]"
        )
    values = np.interp(np.clip(grid, lo, hi), s.wavenumbers, s.intensities)
    return Spectrum(grid, values, chemical=s.chemical, concentration=s.concentration,
                    source_method=s.source_method, baseline_corrected=s.baseline_corrected)


def minmax_normalize(s: Spectrum) -> Spectrum:
    return s.with_intensities(normalize_rows(s.intensities[None, :], "minmax")[0])


def unit_normalize(s: Spectrum) -> Spectrum:
    return s.with_intensities(normalize_rows(s.intensities[None, :], "unit")[0])


def normalize_rows(X, method: str = "minmax") -> np.ndarray:
    """Per-sample normalization of a ``(n, L)`` matrix.

    ``minmax`` maps each row onto [0, 1]; ``unit`` divides each row by its
    Euclidean norm. Constant rows raise :class:`DegenerateSpectrum`.
    """
    X = np.asarray(X, dtype=np.float64)
    if method == "minmax":
        lo = X.min(axis=1, keepdims=True)
        span = X.max(axis=1, keepdims=True) - lo
        if np.any(span <= 0):
            raise DegenerateSpectrum(f"constant spectrum in rows {np.flatnonzero(span[:, 0] <= 0).tolist()}")
        return (X - lo) / span
    if method == "unit":
        lo = X.min(axis=1)
        if np.any(X.max(axis=1) - lo <= 0):
            raise DegenerateSpectrum("constant spectrum")
        return X / np.linalg.norm(X, axis=1, keepdims=True)
    raise ValueError(f"unknown normalization {method!r}")


@dataclass(frozen=True, eq=False)
class ScalerParams:
    """Column means and sample standard deviations (``ddof=1``) of a training matrix."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "ScalerParams":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 2:
            raise ValueError("scaling needs a 2-D matrix with at least two samples")
        return cls(X.mean(axis=0), X.std(axis=0, ddof=1))

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        centered = X - self.mean
        # zero-variance columns map to all zeros
        safe = np.where(self.scale > 0, self.scale, 1.0)
        return np.where(self.scale > 0, centered / safe, 0.0)


def zscore_scale(features):
    """Standardize columns to zero mean and unit sample std.

    Accepts a plain matrix or a :class:`~sersml.transform.FeatureMatrix` and
    returns ``(scaled, params)`` of the same kind; ``params.transform`` applies
    the training statistics to held-out rows.
    """
    values = getattr(features, "values", features)
    params = ScalerParams.fit(values)
    scaled = params.transform(values)
    if hasattr(features, "values"):
        return dataclasses.replace(features, values=scaled), params
    return scaled, params


def _class_key(c: float) -> float:
    # merge float spellings of the same value (1e-5 vs 1.0000000000000001e-05)
    return float(f"{c:.12e}")


def format_concentration(c: float) -> str:
    mant, exp = f"{c:.1e}".split("e")
    return f"{mant}e{int(exp)}"


def assign_class_labels(concentrations: Iterable[float]) -> dict[float, int]:
    """Map each distinct concentration to a class index, highest first."""
    keys = sorted({_class_key(c) for c in concentrations}, reverse=True)
    if any(k <= 0 for k in keys):
        raise ValueError("concentrations must be positive")
    return {k: i for i, k in enumerate(keys)}


def _classes_for(class_map: Mapping[float, int]) -> tuple[ConcentrationClass, ...]:
    return tuple(ConcentrationClass(c, format_concentration(c))
                 for c, _ in sorted(class_map.items(), key=lambda kv: kv[1]))


def dataset_from_spectra(spectra: Sequence[Spectrum], grid=None, meta=None,
                         chemical=None) -> LabeledDataset:
    """Stack spectra that already share a grid into a dataset."""
    if not spectra:
        raise EmptyDataset("no spectra")
    grid = spectra[0].wavenumbers if grid is None else np.asarray(grid, dtype=np.float64)
    class_map = assign_class_labels(s.concentration for s in spectra)
    X = np.vstack([s.intensities for s in spectra])
    y = np.array([class_map[_class_key(s.concentration)] for s in spectra])
    meta = meta or [{} for _ in spectra]
    full_meta = []
    for s, m in zip(spectra, meta):
        rec = {
            "chemical": s.chemical,
            "source_method": s.source_method.value,
            "baseline_corrected": s.baseline_corrected,
        }
        rec.update(m)
        full_meta.append(rec)
    return LabeledDataset(grid, X, y, _classes_for(class_map), tuple(full_meta),
                          chemical=chemical or spectra[0].chemical)


def load_dataset(manifest: DatasetManifest, threads: int = 1) -> LabeledDataset:
    """Read, resample and label every spectrum listed in ``manifest``."""
    if not manifest.entries:
        raise EmptyDataset("manifest lists no files")
    grid = manifest.grid

    def _load(entry: ManifestEntry) -> Spectrum:
        raw = read_spectrum_csv(
            manifest.root / entry.path,
            chemical=entry.chemical,
            concentration=entry.concentration,
            source_method=entry.source_method,
            baseline_corrected=entry.baseline_corrected,
        )
        try:
            return resample(raw, grid)
        except GridError as exc:
            raise GridError(f"{entry.path}: {exc}") from exc

    spectra = thread_map(_load, manifest.entries, threads)
    counts: dict[float, int] = {}
    for s in spectra:
        counts[_class_key(s.concentration)] = counts.get(_class_key(s.concentration), 0) + 1
    keep = [i for i, s in enumerate(spectra) if counts[_class_key(s.concentration)] >= manifest.min_per_class]
    if not keep:
        raise EmptyDataset(
            f"no concentration has at least {manifest.min_per_class} spectra"
        )
    meta = [{"path": manifest.entries[i].path} for i in keep]
    return dataset_from_spectra([spectra[i] for i in keep], grid, meta, chemical=manifest.chemical)


# --- persistence ---------------------------------------------------------

def _jsonable(value):
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    return value


def save_dataset(dataset: LabeledDataset, path, extra: Mapping[str, Any] | None = None) -> Path:
    """Write ``<path>`` (CSV, one column per spectrum) and ``<path>.json``.

    Numbers are written with 17 significant digits so that
    :func:`read_dataset` reproduces the arrays bit for bit.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [f"s{i:05d}" for i in range(dataset.n_samples)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wavenumber", *names])
        X = dataset.intensities
        for j, x in enumerate(dataset.grid):
            w.writerow([format(x, ".17g"), *(format(v, ".17g") for v in X[:, j])])
    sidecar = {
        "format": "sersml-dataset",
        "version": 1,
        "chemical": dataset.chemical,
        "classes": [{"concentration": c.concentration, "label": c.label} for c in dataset.classes],
        "samples": [
            {"column": n, "label": int(lab), "meta": {k: _jsonable(v) for k, v in m.items()}}
            for n, lab, m in zip(names, dataset.labels, dataset.meta)
        ],
    }
    if extra:
        sidecar.update({k: _jsonable(v) for k, v in extra.items()})
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_dataset(path) -> LabeledDataset:
    path = Path(path)
    try:
        side = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise FileError(f"cannot read dataset {path}: {exc}") from exc
    if side.get("format") != "sersml-dataset":
        raise FileError(f"{path}: not a dataset export")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64).reshape(-1, len(rows[0]))
    except ValueError as exc:
        raise FileError(f"{path}: {exc}") from exc
    classes = tuple(ConcentrationClass(float(c["concentration"]), c["label"]) for c in side["classes"])
    samples = side["samples"]
    return LabeledDataset(
        grid=data[:, 0],
        intensities=data[:, 1:].T,
        labels=[s["label"] for s in samples],
        classes=classes,
        meta=tuple(s["meta"] for s in samples),
        chemical=side.get("chemical", "unknown"),
    )


def export_spectra(dataset: LabeledDataset, directory, spacing: float | None = None) -> Path:
    """Write each spectrum as its own CSV plus a manifest that reloads them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i in range(dataset.n_samples):
        s = dataset.spectrum(i)
        name = f"spectrum_{i:05d}.csv"
        write_spectrum_csv(s, directory / name)
        files.append({
            "path": name,
            "chemical": s.chemical,
            "concentration": s.concentration,
            "source_method": s.source_method.value,
            "baseline_corrected": s.baseline_corrected,
        })
    grid = dataset.grid
    doc = {
        "chemical": dataset.chemical,
        "spacing": float(spacing if spacing is not None else (grid[1] - grid[0] if grid.size > 1 else 1.0)),
        "window": [float(grid[0]), float(grid[-1])],
        "min_per_class": 1,
        "files": files,
    }
    out = directory / "manifest.json"
    out.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return out


# --- synthetic data ------------------------------------------------------

@dataclass(frozen=True)
class PeakShape:
    """A Lorentzian band; apex height is multiplied by ``10**response`` per decade."""

    position: float
    width: float
    height: float = 1.0
    response: float = 1.0


R6G_LIKE_PEAKS = (
    PeakShape(614.0, 12.0, 0.45, 0.08),
    PeakShape(776.0, 14.0, 0.55, 0.12),
    PeakShape(1088.0, 10.0, 0.15, 0.05),
    PeakShape(1183.0, 12.0, 0.40, 0.10),
    PeakShape(1310.0, 14.0, 0.60, 0.15),
    PeakShape(1363.0, 14.0, 0.70, 0.22),
    PeakShape(1509.0, 14.0, 0.65, 0.20),
    PeakShape(1597.0, 12.0, 0.35, 0.07),
    PeakShape(1650.0, 14.0, 1.00, 0.25),
)


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a seeded synthetic dataset.

    ``noise`` is the standard deviation of additive Gaussian noise;
    ``baseline`` adds a random offset (mean ``offset_mean``, std
    ``offset_std``) and linear tilt and marks spectra baseline-uncorrected;
    ``spurious_rate`` is the probability that a spectrum carries one extra
    one-off significant peak.
    """

    peaks: tuple[PeakShape, ...] = R6G_LIKE_PEAKS
    concentrations: tuple[float, ...] = (1e-5, 1e-6, 1e-7, 1e-8, 1e-9)
    n_per_class: int | tuple[int, ...] = 10
    grid_min: float = 400.0
    grid_max: float = 1800.0
    spacing: float = 2.0
    noise: float = 0.0
    background: float = 1.0
    baseline: bool = False
    offset_mean: float = 10.0
    offset_std: float = 2.0
    tilt_std: float = 0.0
    amplitude_jitter: float = 0.0
    spurious_rate: float = 0.0
    spurious_width: float = 6.0
    chemical: str = "synthetic"
    source_method: SourceMethod = SourceMethod.SYNTHETIC


def _lorentzian(x: np.ndarray, center: float, fwhm: float) -> np.ndarray:
    return 1.0 / (1.0 + ((x - center) / (0.5 * fwhm)) ** 2)


def generate_synthetic_dataset(spec: SyntheticSpec, seed: int = 0) -> LabeledDataset:
    """Deterministic synthetic spectra with concentration-dependent peaks.

    Peak apex heights are ``height * 10**(response * log10(c / c_min))`` so
    every peak grows strictly with concentration when ``response > 0``, and
    peaks with different responses change their height ratio by a fixed
    factor per decade.
    The metadata of each sample records the injected offset and any spurious
    peak position.
    """
    rng = np.random.default_rng(int(seed) & (2**64 - 1))
    grid = make_grid(spec.grid_min, spec.grid_max, spec.spacing)
    concs = sorted(spec.concentrations, reverse=True)
    counts = spec.n_per_class
    if isinstance(counts, int):
        counts = (counts,) * len(concs)
    if len(counts) != len(concs):
        raise ValueError("n_per_class must align with concentrations")
    for p in spec.peaks:
        if not spec.grid_min <= p.position <= spec.grid_max:
            raise ValueError(f"peak at {p.position} lies outside the grid")
    c_min = min(concs)
    shapes = np.array([_lorentzian(grid, p.position, p.width) for p in spec.peaks])
    span = grid[-1] - grid[0]
    rows, labels, meta = [], [], []
    for label, (c, n) in enumerate(zip(concs, counts)):
        decades = math.log10(c / c_min)
        amps = np.array([p.height * 10.0 ** (p.response * decades) for p in spec.peaks])
        for _ in range(n):
            jitter = 1.0 + spec.amplitude_jitter * rng.standard_normal(len(amps)) if spec.amplitude_jitter else 1.0
            signal = spec.background + (amps * jitter) @ shapes
            rec: dict[str, Any] = {"concentration": c}
            if spec.baseline:
                offset = spec.offset_mean + spec.offset_std * rng.standard_normal()
                tilt = abs(spec.tilt_std * rng.standard_normal())
                signal = signal + offset + tilt * (grid - grid[0]) / span
                rec["offset"] = float(offset)
            if spec.spurious_rate and rng.random() < spec.spurious_rate:
                margin = 3 * spec.spurious_width
                pos = rng.uniform(grid[0] + margin, grid[-1] - margin)
                tallest = float((amps * jitter).max())
                signal = signal + tallest * rng.uniform(0.95, 1.05) * _lorentzian(grid, pos, spec.spurious_width)
                rec["spurious_peak"] = float(pos)
            if spec.noise:
                signal = signal + spec.noise * rng.standard_normal(grid.size)
            rows.append(signal)
            labels.append(label)
            rec.update({
                "chemical": spec.chemical,
                "source_method": SourceMethod(spec.source_method).value,
                "baseline_corrected": not spec.baseline,
            })
            meta.append(rec)
    classes = tuple(ConcentrationClass(c, format_concentration(c)) for c in concs)
    return LabeledDataset(grid, np.array(rows), labels, classes, tuple(meta), chemical=spec.chemical)


def concat_datasets(*datasets: LabeledDataset) -> LabeledDataset:
    """Merge datasets on the same grid, re-deriving the class list."""
    grid = datasets[0].grid
    for d in datasets[1:]:
        if d.grid.shape != grid.shape or not np.array_equal(d.grid, grid):
            raise GridError("datasets live on different grids")
    concs = [d.classes[lab].concentration for d in datasets for lab in d.labels]
    class_map = assign_class_labels(concs)
    X = np.vstack([d.intensities for d in datasets])
    y = [class_map[_class_key(c)] for c in concs]
    meta = tuple(m for d in datasets for m in d.meta)
    return LabeledDataset(grid, X, y, _classes_for(class_map), meta, chemical=datasets[0].chemical)
