"""Frequency-domain feature construction.

Spectra are turned into "pseudotime" series by a Walsh-Hadamard transform in
natural (Sylvester) order or by a discrete Fourier transform whose real and
imaginary parts are laid side by side. Everything is computed in float64.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sersml.dataset import LabeledDataset, normalize_rows, zscore_scale
from sersml.errors import FileError, OrderTooLarge

__all__ = [
    "TransformKind",
    "FeatureMatrix",
    "HadamardOrder",
    "hadamard_matrix",
    "fwht",
    "fourier_features",
    "featurize",
    "transform_dataset",
    "save_features",
    "read_features",
]

MAX_MATRIX_ORDER = 12


class TransformKind(str, enum.Enum):
    SCALED = "scaled"
    HADAMARD = "hadamard"
    FOURIER = "fourier"


@dataclass(frozen=True)
class HadamardOrder:
    """Exponent ``m`` of a ``2**m x 2**m`` Hadamard matrix."""

    m: int

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("Hadamard order must be non-negative")

    @property
    def size(self) -> int:
        return 1 << self.m

    @classmethod
    def for_length(cls, n: int) -> "HadamardOrder":
        """Smallest order whose matrix is at least ``n`` wide."""
        if n < 1:
            raise ValueError("signal length must be positive")
        return cls((n - 1).bit_length())


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Samples x features matrix tagged with how it was produced.

    ``feature_axis`` holds wavenumbers for the scaled kind and pseudotime
    indices for the transformed kinds. ``source_length`` is the grid length the
    rows came from; ``normalized`` records the per-sample pre-normalization.
    """

    values: np.ndarray
    kind: TransformKind
    feature_axis: np.ndarray
    labels: np.ndarray
    source_length: int
    normalized: bool = True
    fourier_half: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("feature values must be a 2-D matrix")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature matrix contains non-finite entries")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (values.shape[0],):
            raise ValueError("one label per row required")
        kind = TransformKind(self.kind)
        n_feat = values.shape[1]
        if kind is TransformKind.HADAMARD:
            if n_feat & (n_feat - 1) or n_feat < self.source_length:
                raise ValueError("Hadamard features must be a power of two >= source length")
        elif kind is TransformKind.FOURIER and not self.fourier_half:
            if n_feat != 2 * self.source_length:
                raise ValueError("Fourier features must be twice the source length")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "feature_axis", np.asarray(self.feature_axis, dtype=np.float64))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def padded_length(self) -> int:
        return self.values.shape[1] if self.kind is TransformKind.HADAMARD else self.source_length


def hadamard_matrix(order: HadamardOrder | int) -> np.ndarray:
    """Sylvester Hadamard matrix ``H_{2^m}`` built by repeated Kronecker products.

    Meant for diagnostics and as an oracle; the cap keeps memory bounded.
    """
    m = order.m if isinstance(order, HadamardOrder) else int(order)
    if m > MAX_MATRIX_ORDER:
        raise OrderTooLarge(f"order {m} exceeds cap {MAX_MATRIX_ORDER}")
    if m < 0:
        raise ValueError("Hadamard order must be non-negative")
    h2 = np.array([[1.0, 1.0], [1.0, -1.0]])
    H = np.ones((1, 1))
    for _ in range(m):
        H = np.kron(h2, H)
    return H


def fwht(signal) -> np.ndarray:
    """Fast Walsh-Hadamard transform in natural order.

    Works on the last axis, so a ``(n_samples, L)`` matrix is transformed row
    by row. The input is zero-padded to the next power of two and the result
    equals ``hadamard_matrix(m) @ padded``; no normalization is applied.
    """
    x = np.asarray(signal, dtype=np.float64)
    n = x.shape[-1]
    if n == 0:
        raise ValueError("cannot transform an empty signal")
    size = HadamardOrder.for_length(n).size
    lead = x.shape[:-1]
    out = np.zeros(lead + (size,))
    out[..., :n] = x
    h = 1
    while h < size:
        v = out.reshape(lead + (size // (2 * h), 2, h))
        a = v[..., 0, :]
        b = v[..., 1, :]
        out = np.stack((a + b, a - b), axis=-2).reshape(lead + (size,))
        h *= 2
    return out


def fourier_features(signal, half: bool = False) -> np.ndarray:
    """``[Re(DFT) | Im(DFT)]`` along the last axis.

    By default both blocks have the full length ``N``. ``half=True`` keeps
    only the ``N // 2 + 1`` non-redundant coefficients of each block.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ValueError("cannot transform an empty signal")
    spec = np.fft.rfft(x, axis=-1) if half else np.fft.fft(x, axis=-1)
    return np.concatenate([spec.real, spec.imag], axis=-1)


def featurize(X, kind: TransformKind | str, *, normalize: bool = True,
              normalization: str = "minmax", fourier_half: bool = False) -> np.ndarray:
    """Row-wise feature map shared by dataset transforms and CV pipelines.

    Only per-row operations happen here, so applying it to a fold cannot leak
    information between rows. Column scaling is left to the caller.
    """
    kind = TransformKind(kind)
    X = np.asarray(X, dtype=np.float64)
    if normalize:
        X = normalize_rows(X, normalization)
    if kind is TransformKind.HADAMARD:
        return fwht(X)
    if kind is TransformKind.FOURIER:
        return fourier_features(X, half=fourier_half)
    return X.copy()


def _feature_axis(dataset: LabeledDataset, kind: TransformKind, n_features: int) -> np.ndarray:
    if kind is TransformKind.SCALED:
        return dataset.grid.copy()
    return np.arange(n_features, dtype=np.float64)


def transform_dataset(dataset: LabeledDataset, kind: TransformKind | str, *, normalize: bool = True,
                      normalization: str = "minmax", fourier_half: bool = False) -> FeatureMatrix:
    """Build one of the three treatments for a whole dataset.

    ``scaled`` z-scores the (optionally normalized) intensities column by
    column; ``hadamard`` and ``fourier`` transform each row. The scaled kind
    uses statistics of the full dataset, so cross-validation refits the scaler
    on each training fold.
    """
    if dataset.n_samples == 0:
        raise ValueError("dataset is empty")
    kind = TransformKind(kind)
    values = featurize(dataset.intensities, kind, normalize=normalize,
                       normalization=normalization, fourier_half=fourier_half)
    if kind is TransformKind.SCALED and dataset.n_samples >= 2:
        values, _ = zscore_scale(values)
    elif kind is TransformKind.SCALED:
        values = np.zeros_like(values)
    return FeatureMatrix(
        values=values,
        kind=kind,
        feature_axis=_feature_axis(dataset, kind, values.shape[1]),
        labels=dataset.labels,
        source_length=dataset.grid.size,
        normalized=normalize,
        fourier_half=fourier_half,
    )


def save_features(fm: FeatureMatrix, path) -> Path:
    """CSV (label, then one column per feature) plus a JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", *(format(a, ".17g") for a in fm.feature_axis)])
        for lab, row in zip(fm.labels, fm.values):
            w.writerow([int(lab), *(format(v, ".17g") for v in row)])
    side = {
        "format": "sersml-features",
        "version": 1,
        "kind": fm.kind.value,
        "source_length": fm.source_length,
        "padded_length": fm.padded_length,
        "normalized": fm.normalized,
        "fourier_half": fm.fourier_half,
        "shape": list(fm.shape),
    }
    path.with_name(path.name + ".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n",
                                                  encoding="utf-8")
    return path


def read_features(path) -> FeatureMatrix:
    path = Path(path)
    try:
        side = json.loads(path.with_name(path.name + ".json").read_text(encoding="utf-8"))
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise FileError(f"cannot read feature matrix {path}: {exc}") from exc
    axis = np.array([float(v) for v in rows[0][1:]])
    body = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, axis.size + 1)
    return FeatureMatrix(
        values=body[:, 1:],
        kind=side["kind"],
        feature_axis=axis,
        labels=body[:, 0].astype(np.int64),
        source_length=side["source_length"],
        normalized=side["normalized"],
        fourier_half=side.get("fourier_half", False),
    )
