"""Importance profiles and matching of important wavenumbers to reference peaks."""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sersml.dataset import LabeledDataset
from sersml.errors import DomainError, FileError
from sersml.peaks import local_maxima, smooth3

IMPORTANCE_CEILING = 1.0 - 1e-12
DEFAULT_TOLERANCE = 20.0
DEFAULT_THRESHOLD = 0.13
DEFAULT_HALF_WINDOW = 2


def modified_importance(importance):
    """``|1 / ln I|`` with ``0 -> 0`` and ``I`` capped just below 1.

    Returns a float for scalar input and an array otherwise.
    """
    I = np.asarray(importance, dtype=np.float64)
    if np.any(~np.isfinite(I)) or np.any(I < 0) or np.any(I > 1):
        raise DomainError("importance values must lie in [0, 1]")
    out = np.zeros_like(I)
    pos = I > 0
    out[pos] = np.abs(1.0 / np.log(np.minimum(I[pos], IMPORTANCE_CEILING)))
    return float(out) if out.ndim == 0 else out


def rolling_average(values, half_window: int = DEFAULT_HALF_WINDOW) -> np.ndarray:
    """Mean over indices within ``half_window``, with the window cut at the ends."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("rolling_average needs a non-empty 1-D sequence")
    if half_window < 0:
        raise ValueError("half_window must be non-negative")
    n = v.size
    total = np.zeros(n)
    count = np.zeros(n)
    for s in range(-half_window, half_window + 1):
        lo, hi = max(0, -s), min(n, n - s)
        if lo >= hi:
            continue
        total[lo:hi] += v[lo + s:hi + s]
        count[lo:hi] += 1
    return total / count


@dataclass(frozen=True, eq=False)
class ImportanceProfile:
    grid: np.ndarray
    raw: np.ndarray
    modified: np.ndarray
    smoothed: np.ndarray
    half_window: int = DEFAULT_HALF_WINDOW

    @classmethod
    def from_importances(cls, grid, importances, half_window: int = DEFAULT_HALF_WINDOW) -> "ImportanceProfile":
        grid = np.asarray(grid, dtype=np.float64)
        raw = np.asarray(importances, dtype=np.float64)
        if raw.shape != grid.shape:
            raise ValueError(f"{raw.size} importances for a grid of {grid.size} points")
        if abs(raw.sum() - 1.0) > 1e-9:
            raise DomainError(f"importances sum to {raw.sum():.12g}, expected 1")
        mod = modified_importance(raw)
        return cls(grid, raw, mod, rolling_average(mod, half_window), half_window)

    def at(self, wavenumber: float) -> int:
        """Index of the grid point nearest ``wavenumber``."""
        return int(np.argmin(np.abs(self.grid - wavenumber)))

    def important_peaks(self, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
        """Wavenumbers of local maxima of the smoothed score at or above ``threshold``."""
        idx = local_maxima(self.smoothed)
        return self.grid[idx[self.smoothed[idx] >= threshold]]

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["wavenumber", "raw_importance", "modified_importance", "smoothed_modified_importance"])
            for row in zip(self.grid, self.raw, self.modified, self.smoothed):
                w.writerow([format(v, ".17g") for v in row])
        return path


# --------------------------------------------------------------------------- references

@dataclass(frozen=True)
class ReferencePeak:
    wavenumber: float
    assignment: str = ""


def read_reference_table(path) -> list[ReferencePeak]:
    """CSV of ``wavenumber_cm-1,assignment``; a header row is optional."""
    try:
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise FileError(f"cannot read reference table {path}: {exc}") from exc
    out = []
    for i, r in enumerate(rows):
        try:
            wn = float(r[0])
        except ValueError:
            if i == 0:
                continue
            raise FileError(f"{path}: row {i + 1} has no wavenumber") from None
        out.append(ReferencePeak(wn, r[1].strip() if len(r) > 1 else ""))
    return out


def write_reference_table(peaks, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wavenumber_cm-1", "assignment"])
        for p in peaks:
            w.writerow([format(p.wavenumber, "g"), p.assignment])
    return path


def data_peak_positions(dataset: LabeledDataset, min_fraction: float = 0.05) -> np.ndarray:
    """Peak wavenumbers of the per-class mean spectra.

    A local maximum of the 3-point-smoothed class mean counts when its height
    above the spectrum minimum reaches ``min_fraction`` of the tallest one.
    Positions from different classes closer than two grid steps are merged.
    """
    found = []
    for c in range(dataset.n_classes):
        rows = dataset.intensities[dataset.labels == c]
        if rows.shape[0] == 0:
            continue
        s = smooth3(rows.mean(axis=0))
        idx = local_maxima(s)
        if idx.size == 0:
            continue
        h = s[idx] - s.min()
        found.extend(dataset.grid[idx[h >= min_fraction * h.max()]])
    if not found:
        return np.empty(0)
    found = np.sort(np.asarray(found))
    step = np.median(np.diff(dataset.grid)) if dataset.grid.size > 1 else 0.0
    keep = [found[0]]
    for w in found[1:]:
        if w - keep[-1] > 2 * step:
            keep.append(w)
    return np.asarray(keep)


# --------------------------------------------------------------------------- matching

class PeakStatus(str, enum.Enum):
    MATCHED_IMPORTANT = "MatchedImportant"
    PRESENT_IGNORED = "PresentIgnored"
    ABSENT_IN_DATA = "AbsentInData"
    MODEL_ONLY_UNIDENTIFIED = "ModelOnlyUnidentified"


@dataclass(frozen=True)
class PeakMatchRow:
    status: PeakStatus
    model_wavenumber: float | None
    reference_wavenumber: float | None
    shift: float | None  # reference minus model
    assignment: str = ""
    raw_importance: float | None = None
    smoothed_importance: float | None = None

    def label(self) -> str:
        """Wavenumber cell such as ``1641/1650(9)``."""
        def g(x):
            return format(x, "g")
        if self.model_wavenumber is not None and self.reference_wavenumber is not None:
            return f"{g(self.model_wavenumber)}/{g(self.reference_wavenumber)}({g(abs(self.shift))})"
        return g(self.model_wavenumber if self.model_wavenumber is not None else self.reference_wavenumber)

    def to_dict(self) -> dict:
        return {"status": self.status.value, "model_wavenumber": self.model_wavenumber,
                "reference_wavenumber": self.reference_wavenumber, "shift": self.shift,
                "assignment": self.assignment, "raw_importance": self.raw_importance,
                "smoothed_importance": self.smoothed_importance}


@dataclass(frozen=True)
class PeakMatchReport:
    rows: tuple[PeakMatchRow, ...]
    tolerance: float
    threshold: float
    model_peaks: dict  # important model wavenumber -> status

    def by_status(self, status: PeakStatus) -> list[PeakMatchRow]:
        return [r for r in self.rows if r.status is PeakStatus(status)]

    def to_dict(self) -> dict:
        return {"format": "sersml-peak-match", "version": 1, "tolerance": self.tolerance,
                "threshold": self.threshold, "rows": [r.to_dict() for r in self.rows],
                "model_peaks": [{"wavenumber": w, "status": s.value} for w, s in sorted(self.model_peaks.items())]}

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def to_table_csv(self, path) -> Path:
        """Rows grouped by status with the importance columns left blank when unused."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["status", "wavenumber", "assignment", "raw_importance", "smoothed_importance"])
            for status in PeakStatus:
                for r in self.by_status(status):
                    shown = status in (PeakStatus.MATCHED_IMPORTANT, PeakStatus.MODEL_ONLY_UNIDENTIFIED)
                    w.writerow([status.value, r.label(), r.assignment or "-",
                                f"{r.raw_importance:.3f}" if shown else "-",
                                f"{r.smoothed_importance:.3f}" if shown else "-"])
        return path


def match_peaks(profile: ImportanceProfile, data_peaks, reference, tolerance: float = DEFAULT_TOLERANCE,
                threshold: float = DEFAULT_THRESHOLD) -> PeakMatchReport:
    """Assign one status to every reference peak and every important model peak.

    Important model peaks are local maxima of the smoothed modified
    importance at or above ``threshold`` that lie within ``tolerance`` of a
    data peak. A reference peak is matched to the nearest important model
    peak within tolerance, provided some data peak is also within tolerance;
    with a data peak but no important model peak it is ignored by the model;
    with no data peak it is absent. Important model peaks near a matched
    reference but not chosen for it share that reference's status; the rest
    are unidentified.
    """
    data = np.sort(np.asarray(data_peaks, dtype=np.float64))
    candidates = profile.important_peaks(threshold)
    if data.size:
        near = np.array([np.min(np.abs(data - m)) <= tolerance for m in candidates], dtype=bool)
        model = candidates[near] if candidates.size else candidates
    else:
        model = candidates[:0]
    status_of = {}
    rows = []
    matched_refs = []
    for ref in sorted(reference, key=lambda r: -r.wavenumber):
        d_near = data[np.abs(data - ref.wavenumber) <= tolerance] if data.size else data
        m_near = model[np.abs(model - ref.wavenumber) <= tolerance] if model.size else model
        if d_near.size == 0:
            rows.append(PeakMatchRow(PeakStatus.ABSENT_IN_DATA, None, ref.wavenumber, None, ref.assignment))
            continue
        if m_near.size == 0:
            d = float(d_near[np.argmin(np.abs(d_near - ref.wavenumber))])
            i = profile.at(d)
            rows.append(PeakMatchRow(PeakStatus.PRESENT_IGNORED, d, ref.wavenumber, ref.wavenumber - d,
                                     ref.assignment, float(profile.raw[i]), float(profile.smoothed[i])))
            continue
        m = float(m_near[np.argmin(np.abs(m_near - ref.wavenumber))])
        i = profile.at(m)
        rows.append(PeakMatchRow(PeakStatus.MATCHED_IMPORTANT, m, ref.wavenumber, ref.wavenumber - m,
                                 ref.assignment, float(profile.raw[i]), float(profile.smoothed[i])))
        status_of[m] = PeakStatus.MATCHED_IMPORTANT
        matched_refs.append(ref.wavenumber)
    matched_refs = np.asarray(matched_refs)
    for m in model:
        m = float(m)
        if m in status_of:
            continue
        if matched_refs.size and np.min(np.abs(matched_refs - m)) <= tolerance:
            status_of[m] = PeakStatus.MATCHED_IMPORTANT
            continue
        status_of[m] = PeakStatus.MODEL_ONLY_UNIDENTIFIED
        i = profile.at(m)
        rows.append(PeakMatchRow(PeakStatus.MODEL_ONLY_UNIDENTIFIED, m, None, None, "",
                                 float(profile.raw[i]), float(profile.smoothed[i])))
    return PeakMatchReport(tuple(rows), tolerance, threshold, status_of)


def write_plot_csv(dataset: LabeledDataset, profile: ImportanceProfile, path) -> Path:
    """Wavenumber, mean spectrum of each class and the smoothed score, one row per grid point."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    means = []
    labels = []
    for c, cls in enumerate(dataset.classes):
        rows = dataset.intensities[dataset.labels == c]
        if rows.shape[0]:
            means.append(rows.mean(axis=0))
            labels.append(f"mean_{cls.label}")
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wavenumber", *labels, "smoothed_modified_importance"])
        for j, wn in enumerate(dataset.grid):
            w.writerow([format(wn, ".17g"), *(format(m[j], ".17g") for m in means),
                        format(profile.smoothed[j], ".17g")])
    return path
