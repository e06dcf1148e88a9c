"""Spectral augmentation by offset shift, peak stretch and peak flip.

Augmented copies are derived from training spectra only. Each step is gated
by a statistic of the training set:

* offset: only for baseline-uncorrected spectra, magnitude uniform in
  ``[0, offset_fraction * O]`` where ``O`` is the std of per-spectrum minima;
* stretch: factor ``1 + dS`` with ``dS`` uniform in
  ``[-stretch_fraction * S, stretch_fraction * S]``, ``S`` being the std of
  ``(max - min) / min`` over spectra;
* flip: when single-occurrence peaks are common, a few small peaks are
  enlarged by ``LogNormal(0, 2) + 1`` to mimic noise-born significant peaks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from sersml._parallel import child_rng, thread_map
from sersml.dataset import LabeledDataset, Spectrum
from sersml.errors import InvalidPartition
from sersml.peaks import detect_peaks, local_minima, single_occurrence_fraction, smooth3

__all__ = [
    "AugmentationConfig",
    "DatasetDiagnostics",
    "estimate_offset_std",
    "estimate_stretch_std",
    "diagnose",
    "augment_spectrum",
    "augment_dataset",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AugmentationConfig:
    offset_fraction: float = 0.1
    stretch_fraction: float = 0.1
    flip_count_range: tuple[int, int] = (0, 5)
    lognormal_mean: float = 0.0
    lognormal_sigma: float = 2.0
    multiplier: int = 10
    seed: int = 0
    # "above": flip when the single-occurrence fraction exceeds the threshold;
    # "at_most": flip when it does not.
    flip_gate: str = "above"
    flip_gate_threshold: float = 0.5
    significance: float = 0.8
    flip_fraction: float = 0.2
    max_stretch: float = 0.9
    enable_offset: bool = True
    enable_stretch: bool = True
    enable_flip: bool = True

    def __post_init__(self):
        for name in ("offset_fraction", "stretch_fraction"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        lo, hi = self.flip_count_range
        if not 0 <= lo <= hi <= 5:
            raise ValueError("flip count range must sit inside [0, 5]")
        if self.multiplier < 1:
            raise ValueError("multiplier must be at least 1")
        if self.flip_gate not in ("above", "at_most"):
            raise ValueError("flip_gate must be 'above' or 'at_most'")
        if not 0 < self.max_stretch < 1:
            raise ValueError("max_stretch must lie in (0, 1)")
        object.__setattr__(self, "flip_count_range", (int(lo), int(hi)))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class DatasetDiagnostics:
    """Training-set statistics that drive augmentation.

    ``offset_std`` is None when every spectrum is baseline-corrected;
    ``stretch_std`` is None when fewer than two spectra have a positive minimum.
    """

    offset_std: float | None
    stretch_std: float | None
    single_fraction: float
    flip_enabled: bool


def estimate_offset_std(dataset: LabeledDataset) -> float | None:
    """Population std of per-spectrum minima, or None without uncorrected spectra."""
    if dataset.n_samples == 0 or not dataset.baseline_uncorrected_mask().any():
        return None
    return float(np.std(dataset.intensities.min(axis=1)))


def estimate_stretch_std(dataset: LabeledDataset) -> float | None:
    X = dataset.intensities
    lo = X.min(axis=1)
    ok = lo > 0
    if ok.sum() < 2:
        return None
    ratio = (X.max(axis=1)[ok] - lo[ok]) / lo[ok]
    return float(np.std(ratio))


def diagnose(dataset: LabeledDataset, config: AugmentationConfig = AugmentationConfig()) -> DatasetDiagnostics:
    frac = single_occurrence_fraction(dataset, significance=config.significance).overall
    if config.flip_gate == "above":
        flip = frac > config.flip_gate_threshold
    else:
        flip = frac <= config.flip_gate_threshold
    return DatasetDiagnostics(
        offset_std=estimate_offset_std(dataset),
        stretch_std=estimate_stretch_std(dataset),
        single_fraction=frac,
        flip_enabled=bool(flip),
    )


def _stretch_bound(config: AugmentationConfig, stretch_std: float) -> float:
    bound = config.stretch_fraction * stretch_std
    if bound >= config.max_stretch:
        log.warning("stretch bound %.3g clamped to %.3g", bound, config.max_stretch)
        bound = config.max_stretch
    return bound


def _flip_peak(y: np.ndarray, minima: np.ndarray, i: int, factor: float) -> None:
    """Scale the peak at ``i`` above the chord joining its bounding minima."""
    k = np.searchsorted(minima, i)
    left = int(minima[k - 1]) if k > 0 else 0
    right = int(minima[k]) if k < minima.size else y.size - 1
    seg = slice(left, right + 1)
    if right > left:
        t = (np.arange(left, right + 1) - left) / (right - left)
        base = y[left] + t * (y[right] - y[left])
    else:
        base = np.array([y[left]])
    y[seg] += (factor - 1.0) * np.maximum(y[seg] - base, 0.0)


def augment_spectrum(zeta: Spectrum, diagnostics: DatasetDiagnostics, config: AugmentationConfig,
                     rng: np.random.Generator, partition: str = "train") -> Spectrum:
    """One augmented copy of ``zeta``; the class label is untouched."""
    if partition != "train":
        raise InvalidPartition(f"augmentation source drawn from {partition!r} rows")
    y = np.array(zeta.intensities, dtype=np.float64)

    if config.enable_offset and diagnostics.offset_std is not None and not zeta.baseline_corrected:
        magnitude = rng.uniform(0.0, config.offset_fraction * diagnostics.offset_std)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        y += sign * magnitude

    if config.enable_stretch and diagnostics.stretch_std is not None:
        bound = _stretch_bound(config, diagnostics.stretch_std)
        y *= 1.0 + rng.uniform(-bound, bound)

    if config.enable_flip and diagnostics.flip_enabled:
        lo, hi = config.flip_count_range
        k = int(rng.integers(lo, hi + 1))
        if k:
            peaks = detect_peaks(zeta.with_intensities(y), config.significance, config.flip_fraction)
            eligible = peaks.indices[peaks.flip_eligible & ~peaks.significant]
            chosen = rng.choice(eligible, size=min(k, eligible.size), replace=False) if eligible.size else []
            if len(chosen):
                minima = local_minima(smooth3(y))
                factors = rng.lognormal(config.lognormal_mean, config.lognormal_sigma, size=len(chosen)) + 1.0
                for i, x in zip(sorted(int(c) for c in chosen), factors):
                    _flip_peak(y, minima, i, float(x))

    return zeta.with_intensities(y)


def augment_dataset(train: LabeledDataset, config: AugmentationConfig = AugmentationConfig(),
                    diagnostics: DatasetDiagnostics | None = None, threads: int = 1) -> LabeledDataset:
    """Originals followed by ``multiplier - 1`` augmented copies of each row.

    Copy ``c`` of row ``i`` draws from its own RNG stream keyed by
    ``(seed, c, i)``, so the output does not depend on ``threads``.
    """
    bad = [i for i, m in enumerate(train.meta) if m.get("partition", "train") != "train"]
    if bad:
        raise InvalidPartition(f"rows {bad[:5]} are not training rows")
    if train.n_samples == 0:
        raise ValueError("training partition is empty")
    if config.multiplier == 1:
        return train
    diagnostics = diagnostics or diagnose(train, config)

    jobs = [(c, i) for c in range(1, config.multiplier) for i in range(train.n_samples)]

    def _one(job):
        c, i = job
        rng = child_rng(config.seed, "augment", c, i)
        return augment_spectrum(train.spectrum(i), diagnostics, config, rng).intensities

    rows = thread_map(_one, jobs, threads)
    X = np.vstack([train.intensities, *rows]) if rows else train.intensities
    labels = np.concatenate([train.labels, train.labels[[i for _, i in jobs]]])
    meta = list(train.meta)
    for c, i in jobs:
        rec = dict(train.meta[i])
        rec.update({"augmented": True, "source_row": i, "copy": c})
        meta.append(rec)
    return train.with_rows(X, labels, meta)
