"""Peak detection, single-occurrence statistics and rank correlations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from sersml.dataset import LabeledDataset, Spectrum

__all__ = [
    "PeakSet",
    "SingleOccurrence",
    "PeakHistogram",
    "CorrelationMatrix",
    "smooth3",
    "local_maxima",
    "detect_peaks",
    "single_occurrence_fraction",
    "peak_distribution",
    "total_variation",
    "spearman_matrix",
]

SIGNIFICANCE_FRACTION = 0.8
FLIP_FRACTION = 0.2
MATCH_WINDOW = 5.0
BIN_WIDTH = 5.0


@dataclass(frozen=True, eq=False)
class PeakSet:
    """Peaks of one spectrum.

    ``heights`` are intensities above the spectrum minimum; significance and
    flip eligibility are both judged on heights relative to the tallest peak,
    which keeps them unchanged under ``a * x + b`` rescaling with ``a > 0``.
    """

    indices: np.ndarray
    wavenumbers: np.ndarray
    intensities: np.ndarray
    heights: np.ndarray
    significant: np.ndarray
    flip_eligible: np.ndarray
    significance_fraction: float = SIGNIFICANCE_FRACTION
    flip_fraction: float = FLIP_FRACTION

    def __len__(self) -> int:
        return self.indices.size

    @property
    def significant_wavenumbers(self) -> np.ndarray:
        return self.wavenumbers[self.significant]


def smooth3(x) -> np.ndarray:
    """Three-point moving average; the window is truncated at both ends."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        return x.copy()
    total = x.copy()
    total[1:] += x[:-1]
    total[:-1] += x[1:]
    counts = np.full(x.size, 3.0)
    counts[0] = counts[-1] = 2.0
    return total / counts


def local_maxima(x) -> np.ndarray:
    """Indices strictly above both neighbours; a plateau reports its leftmost point."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 3:
        return np.empty(0, dtype=np.int64)
    starts = np.concatenate(([0], np.flatnonzero(np.diff(x) != 0) + 1))
    vals = x[starts]
    if vals.size < 3:
        return np.empty(0, dtype=np.int64)
    mid = np.arange(1, vals.size - 1)
    mask = (vals[mid] > vals[mid - 1]) & (vals[mid] > vals[mid + 1])
    return starts[mid[mask]].astype(np.int64)


def local_minima(x) -> np.ndarray:
    return local_maxima(-np.asarray(x, dtype=np.float64))


def detect_peaks(s: Spectrum, significance: float = SIGNIFICANCE_FRACTION,
                 flip_fraction: float = FLIP_FRACTION) -> PeakSet:
    """Find local maxima of the smoothed trace and flag the significant ones.

    Smoothing only steers detection; reported intensities are the originals.
    """
    if len(s) < 3:
        raise ValueError("peak detection needs at least three points")
    y = s.intensities
    idx = local_maxima(smooth3(y))
    heights = y[idx] - y.min()
    top = heights.max() if idx.size else 0.0
    return PeakSet(
        indices=idx,
        wavenumbers=s.wavenumbers[idx],
        intensities=y[idx],
        heights=heights,
        significant=heights >= significance * top,
        flip_eligible=heights <= flip_fraction * top,
        significance_fraction=significance,
        flip_fraction=flip_fraction,
    )


def dataset_peaks(dataset: LabeledDataset, significance: float = SIGNIFICANCE_FRACTION) -> list[PeakSet]:
    return [detect_peaks(dataset.spectrum(i), significance) for i in range(dataset.n_samples)]


@dataclass(frozen=True)
class SingleOccurrence:
    """Share of significant peaks that no sibling spectrum repeats.

    ``overall`` pools counts across classes; ``per_class`` maps class index to
    its own fraction. Classes with a single spectrum are listed in
    ``excluded`` and contribute nothing.
    """

    overall: float
    per_class: dict[int, float]
    excluded: tuple[int, ...]
    n_significant: int
    n_single: int

    @property
    def class_mean(self) -> float:
        return float(np.mean(list(self.per_class.values()))) if self.per_class else 0.0


def single_occurrence_fraction(dataset: LabeledDataset, window: float = MATCH_WINDOW,
                               significance: float = SIGNIFICANCE_FRACTION,
                               peaks: list[PeakSet] | None = None) -> SingleOccurrence:
    peaks = peaks if peaks is not None else dataset_peaks(dataset, significance)
    per_class: dict[int, float] = {}
    excluded = []
    total_sig = total_single = 0
    for c in range(dataset.n_classes):
        members = np.flatnonzero(dataset.labels == c)
        if members.size < 2:
            if members.size == 1:
                excluded.append(c)
            continue
        sig = [peaks[i].significant_wavenumbers for i in members]
        n_sig = n_single = 0
        for a, own in enumerate(sig):
            others = [w for b, w in enumerate(sig) if b != a]
            pool = np.concatenate(others) if others else np.empty(0)
            for wn in own:
                n_sig += 1
                if pool.size == 0 or np.min(np.abs(pool - wn)) > window:
                    n_single += 1
        per_class[c] = n_single / n_sig if n_sig else 0.0
        total_sig += n_sig
        total_single += n_single
    overall = total_single / total_sig if total_sig else 0.0
    return SingleOccurrence(overall, per_class, tuple(excluded), total_sig, total_single)


@dataclass(frozen=True, eq=False)
class PeakHistogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def normalized(self) -> np.ndarray:
        """Counts scaled so the fullest bin is 1."""
        top = self.counts.max()
        return self.counts / top if top > 0 else self.counts.astype(np.float64)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


def peak_distribution(dataset: LabeledDataset, bin_width: float = BIN_WIDTH,
                      peaks: list[PeakSet] | None = None) -> PeakHistogram:
    """Histogram of all detected peak positions across the dataset."""
    if not bin_width > 0:
        raise ValueError("bin width must be positive")
    peaks = peaks if peaks is not None else dataset_peaks(dataset)
    lo, hi = dataset.grid[0], dataset.grid[-1]
    n_bins = int(np.floor((hi - lo) / bin_width)) + 1
    edges = lo + bin_width * np.arange(n_bins + 1)
    positions = np.concatenate([p.wavenumbers for p in peaks]) if peaks else np.empty(0)
    counts, _ = np.histogram(positions, bins=edges)
    return PeakHistogram(edges, counts)


def total_variation(a: PeakHistogram, b: PeakHistogram) -> float:
    """Total-variation distance between the two histograms as distributions."""
    if a.edges.shape != b.edges.shape or not np.allclose(a.edges, b.edges):
        raise ValueError("histograms use different bins")
    pa = a.counts / max(a.counts.sum(), 1)
    pb = b.counts / max(b.counts.sum(), 1)
    return 0.5 * float(np.abs(pa - pb).sum())


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    matrix: np.ndarray
    grid: np.ndarray

    @property
    def average(self) -> float:
        """Mean of the strict upper triangle."""
        iu = np.triu_indices(self.matrix.shape[0], k=1)
        return float(self.matrix[iu].mean()) if iu[0].size else 1.0


def spearman_matrix(dataset: LabeledDataset | np.ndarray, grid=None) -> CorrelationMatrix:
    """Spearman coefficients between every pair of wavenumbers.

    Each column (one wavenumber across spectra) is ranked with midranks for
    ties, then Pearson correlation is taken between rank columns. A column
    that is constant across spectra correlates 0 with everything but itself.
    """
    if isinstance(dataset, LabeledDataset):
        X, grid = dataset.intensities, dataset.grid
    else:
        X = np.asarray(dataset, dtype=np.float64)
        grid = np.arange(X.shape[1], dtype=np.float64) if grid is None else np.asarray(grid)
    if X.shape[0] < 3:
        raise ValueError("Spearman matrix needs at least three spectra")
    R = rankdata(X, method="average", axis=0)
    R = R - R.mean(axis=0)
    norms = np.sqrt((R * R).sum(axis=0))
    live = norms > 0
    Z = np.zeros_like(R)
    Z[:, live] = R[:, live] / norms[live]
    C = Z.T @ Z
    np.clip(C, -1.0, 1.0, out=C)
    np.fill_diagonal(C, 1.0)
    C = 0.5 * (C + C.T)
    return CorrelationMatrix(C, np.asarray(grid, dtype=np.float64))
