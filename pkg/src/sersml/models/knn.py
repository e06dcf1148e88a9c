"""k-nearest-neighbour classification by exhaustive search."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from sersml.errors import ConfigError, DimensionMismatch


class Metric(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    MANHATTAN = "manhattan"
    MINKOWSKI = "minkowski"


class Weights(str, enum.Enum):
    UNIFORM = "uniform"
    DISTANCE = "distance"


@dataclass(frozen=True)
class KnnConfig:
    n_neighbors: int = 5
    metric: Metric = Metric.EUCLIDEAN
    weights: Weights = Weights.UNIFORM
    p: float = 3.0  # Minkowski exponent, ignored by the other metrics

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric(self.metric))
        object.__setattr__(self, "weights", Weights(self.weights))
        if self.n_neighbors < 1:
            raise ConfigError("n_neighbors must be at least 1")
        if self.metric is Metric.MINKOWSKI and self.p < 1:
            raise ConfigError("Minkowski exponent must be >= 1")


def pairwise_distances(A: np.ndarray, B: np.ndarray, metric: Metric, p: float = 3.0,
                       chunk: int = 64) -> np.ndarray:
    """Distances between every row of ``A`` and every row of ``B``."""
    out = np.empty((A.shape[0], B.shape[0]))
    for start in range(0, A.shape[0], chunk):
        diff = np.abs(A[start:start + chunk, None, :] - B[None, :, :])
        if metric is Metric.EUCLIDEAN:
            out[start:start + chunk] = np.sqrt((diff * diff).sum(axis=-1))
        elif metric is Metric.MANHATTAN:
            out[start:start + chunk] = diff.sum(axis=-1)
        else:
            out[start:start + chunk] = (diff ** p).sum(axis=-1) ** (1.0 / p)
    return out


@dataclass(frozen=True, eq=False)
class KnnModel:
    X: np.ndarray
    y: np.ndarray
    n_classes: int
    config: KnnConfig

    kind = "knn"

    def predict(self, Q) -> np.ndarray:
        return knn_predict(self, Q)

    def to_dict(self) -> dict:
        return {
            "config": {"n_neighbors": self.config.n_neighbors, "metric": self.config.metric.value,
                       "weights": self.config.weights.value, "p": self.config.p},
            "n_classes": self.n_classes,
            "X": self.X.tolist(),
            "y": self.y.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KnnModel":
        return cls(np.array(d["X"], dtype=np.float64), np.array(d["y"], dtype=np.int64),
                   int(d["n_classes"]), KnnConfig(**d["config"]))


def knn_fit(X, y, config: KnnConfig = KnnConfig(), n_classes: int | None = None) -> KnnModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise DimensionMismatch("X must be (n, d) with one label per row")
    if config.n_neighbors > X.shape[0]:
        raise ConfigError(
            f"n_neighbors={config.n_neighbors} exceeds the {X.shape[0]} training samples"
        )
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    return KnnModel(X.copy(), y.copy(), n_classes, config)


def knn_predict(model: KnnModel, Q) -> np.ndarray:
    """Vote among the ``k`` nearest training rows.

    Equal distances are ordered by label so the result does not depend on
    training-row order. With distance weights a query that coincides with a
    training row takes the label of the coinciding rows. Vote ties go to the
    lowest class index.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if Q.shape[1] != model.X.shape[1]:
        raise DimensionMismatch(f"query has {Q.shape[1]} features, model expects {model.X.shape[1]}")
    cfg = model.config
    D = pairwise_distances(Q, model.X, cfg.metric, cfg.p)
    k = cfg.n_neighbors
    preds = np.empty(Q.shape[0], dtype=np.int64)
    for q in range(Q.shape[0]):
        order = np.lexsort((model.y, D[q]))[:k]
        d, lab = D[q, order], model.y[order]
        votes = np.zeros(model.n_classes)
        if cfg.weights is Weights.DISTANCE:
            exact = d == 0
            if exact.any():
                np.add.at(votes, lab[exact], 1.0)
            else:
                np.add.at(votes, lab, 1.0 / d)
        else:
            np.add.at(votes, lab, 1.0)
        preds[q] = int(np.argmax(votes))
    return preds
