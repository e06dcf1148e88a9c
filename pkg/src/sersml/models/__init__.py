"""Classical classifiers: k-nearest neighbours, random forest, SVC."""

from __future__ import annotations

import json
from pathlib import Path

from sersml.errors import ConfigError, FileError
from sersml.models.forest import ForestConfig, ForestModel, forest_fit, forest_importances, forest_predict
from sersml.models.knn import KnnConfig, KnnModel, Metric, Weights, knn_fit, knn_predict
from sersml.models.presets import PRESETS, Preset, get_preset
from sersml.models.svc import SvcConfig, SvcModel, svc_fit, svc_predict

MODEL_FORMAT_VERSION = 1

_KINDS = {"knn": KnnModel, "rfc": ForestModel, "svc": SvcModel}

__all__ = [
    "ForestConfig", "ForestModel", "forest_fit", "forest_importances", "forest_predict",
    "KnnConfig", "KnnModel", "Metric", "Weights", "knn_fit", "knn_predict",
    "SvcConfig", "SvcModel", "svc_fit", "svc_predict",
    "PRESETS", "Preset", "get_preset",
    "model_to_dict", "model_from_dict", "save_model", "load_model",
]


def model_to_dict(model) -> dict:
    return {"format": "sersml-model", "version": MODEL_FORMAT_VERSION, "kind": model.kind,
            "model": model.to_dict()}


def model_from_dict(d: dict):
    if d.get("format") not in ("sersml-model", "sersml-cnn"):
        raise FileError("not a model file")
    if d.get("version") != MODEL_FORMAT_VERSION:
        raise FileError(f"unsupported model version {d.get('version')}")
    if d["kind"] == "cnn":
        from sersml.nn import Network

        return Network.from_dict(d["model"])
    try:
        return _KINDS[d["kind"]].from_dict(d["model"])
    except KeyError:
        raise ConfigError(f"unknown model kind {d['kind']!r}") from None


def save_model(model, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model), sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_model(path):
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FileError(f"cannot read model {path}: {exc}") from exc
    return model_from_dict(d)
