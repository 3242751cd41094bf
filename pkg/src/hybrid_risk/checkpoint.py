"""Single-file JSON checkpoints.

Layout::

    {
      "format": "hybrid-risk-checkpoint",
      "version": 1,
      "model_config": {...ModelConfig fields...},
      "feature_names": ["f0", ...],
      "standardization": {"mean": [...], "std": [...]} | null,
      "params": {"<name>": {"shape": [..], "data": [..row-major floats..]}, ...}
    }

Floats are written with Python's shortest round-trip repr, so loading a
saved file reproduces every parameter bit for bit, and saving the same
model twice yields identical bytes.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .data import Standardization
from .exceptions import DataFormatError
from .model import Model, ModelConfig, check_params, param_shapes

FORMAT = "hybrid-risk-checkpoint"
VERSION = 1


def checkpoint_dict(model: Model) -> dict:
    order = param_shapes(model.config)
    return {
        "format": FORMAT,
        "version": VERSION,
        "model_config": model.config.to_dict(),
        "feature_names": list(model.feature_names),
        "standardization": (model.standardization.to_dict()
                            if model.standardization is not None else None),
        "params": {
            name: {"shape": list(model.params[name].shape),
                   "data": [float(v) for v in model.params[name].data.reshape(-1)]}
            for name in order
        },
    }


def save_checkpoint(model: Model, path) -> None:
    text = json.dumps(checkpoint_dict(model), indent=1, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def model_from_dict(doc: dict) -> Model:
    if doc.get("format") != FORMAT:
        raise DataFormatError(f"not a {FORMAT} document")
    if doc.get("version") != VERSION:
        raise DataFormatError(f"unsupported checkpoint version {doc.get('version')}")
    config = ModelConfig.from_dict(doc["model_config"])
    params = {}
    for name, entry in doc["params"].items():
        data = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        params[name] = Tensor(data, requires_grad=True)
    check_params(params, config)
    stats = doc.get("standardization")
    return Model(config, params,
                 Standardization.from_dict(stats) if stats is not None else None,
                 tuple(doc.get("feature_names") or ()))


def load_checkpoint(path) -> Model:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
