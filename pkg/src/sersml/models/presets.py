"""Tuned hyperparameters per dataset for the classical models."""

from __future__ import annotations

from dataclasses import dataclass

from sersml.errors import ConfigError
from sersml.models.forest import ForestConfig
from sersml.models.knn import KnnConfig
from sersml.models.svc import SvcConfig


@dataclass(frozen=True)
class Preset:
    name: str
    forest: ForestConfig
    knn: KnnConfig
    svc: SvcConfig


PRESETS: dict[str, Preset] = {
    p.name: p
    for p in (
        Preset("r6g",
               ForestConfig(n_estimators=139, max_features=43, criterion="entropy"),
               KnnConfig(n_neighbors=2, metric="euclidean", weights="distance"),
               SvcConfig(C=100.0, degree=6, kernel="linear")),
        Preset("r6g-ouzo",
               ForestConfig(n_estimators=53, max_features=12, criterion="gini"),
               KnnConfig(n_neighbors=3, metric="manhattan", weights="uniform"),
               SvcConfig(C=100.0, degree=6, kernel="linear")),
        Preset("r6g-agnano",
               ForestConfig(n_estimators=166, max_features=24, criterion="entropy"),
               KnnConfig(n_neighbors=4, metric="manhattan", weights="distance"),
               SvcConfig(C=35.748, degree=2, kernel="rbf")),
        Preset("triclosan",
               ForestConfig(n_estimators=63, max_features=10, criterion="entropy"),
               KnnConfig(n_neighbors=2, metric="minkowski", weights="uniform", p=3.0),
               SvcConfig(C=100.0, degree=2, kernel="rbf")),
        Preset("chlorpyrifos",
               ForestConfig(n_estimators=200, max_features=148, criterion="entropy"),
               KnnConfig(n_neighbors=2, metric="manhattan", weights="distance"),
               SvcConfig(C=100.0, degree=6, kernel="linear")),
    )
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
