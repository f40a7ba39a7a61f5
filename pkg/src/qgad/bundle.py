"""Model bundles: one JSON document holding everything detection needs.

Arrays are stored as ``{"dtype": "<f8", "shape": [...], "data": base64}``
of their little-endian bytes, so weights round-trip bit for bit on any
platform. Keys are sorted, so equal contents give equal bytes.
"""

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analyzer import RuleSet
from .config import PreprocessConfig
from .errors import BundleError, ConfigError, ConfigMismatchError, StructureError
from .gru import GATE_PARAMS, GruCell, GruClassifier
from .quantizer import QuantizationGrid
from .signal_io import _atomic_write

FORMAT = "qgad-bundle"
VERSION = 1

# config keys that change what the model sees or predicts
QUANT_KEYS = (
    "look_back",
    "look_ahead",
    "in_grid",
    "out_grid",
    "in_algorithm",
    "out_algorithm",
    "target_channel",
)


def encode_array(arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {
        "dtype": "<f8",
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def decode_array(d):
    try:
        if d["dtype"] != "<f8":
            raise BundleError(f"unsupported dtype {d['dtype']!r}")
        shape = tuple(int(s) for s in d["shape"])
        raw = base64.b64decode(d["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"malformed array record: {exc}") from exc
    if len(raw) != 8 * int(np.prod(shape, dtype=np.int64)):
        raise BundleError(f"array payload does not match shape {shape}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


@dataclass
class Bundle:
    model: GruClassifier
    in_grids: list
    out_grid: QuantizationGrid
    config: PreprocessConfig
    rules: RuleSet = None
    meta: dict = None

    def check_config(self, cfg):
        """Refuse a config whose quantization differs from the bundle's."""
        diffs = [
            f"{k}: bundle={getattr(self.config, k)!r} requested={getattr(cfg, k)!r}"
            for k in QUANT_KEYS
            if getattr(self.config, k) != getattr(cfg, k)
        ]
        if diffs:
            raise ConfigMismatchError("config does not match bundle: " + "; ".join(diffs))

    def check_dataset(self, dataset):
        if dataset.in_grid != self.config.in_grid:
            raise ConfigMismatchError(
                f"data quantized with in_grid={dataset.in_grid}, bundle expects "
                f"{self.config.in_grid}"
            )
        self.check_config(dataset.config)


def bundle_to_dict(model, in_grids, out_grid, config, rules=None, meta=None):
    if isinstance(in_grids, QuantizationGrid):
        in_grids = [in_grids] * model.n_channels
    layers = []
    for cell in model.layers:
        layers.append(
            {
                "input_size": cell.input_size,
                "hidden_size": cell.hidden_size,
                "params": {k: encode_array(cell.params[k]) for k in GATE_PARAMS},
            }
        )
    return {
        "format": FORMAT,
        "version": VERSION,
        "preprocess": config.to_dict(),
        "grids": {"in": [g.to_dict() for g in in_grids], "out": out_grid.to_dict()},
        "model": {
            "in_grid": model.in_grid,
            "out_grid": model.out_grid,
            "cells": model.cells,
            "layers": layers,
            "dense": {"W": encode_array(model.dense_W), "b": encode_array(model.dense_b)},
        },
        "rules": None if rules is None else rules.to_dict(),
        "meta": meta or {},
    }


def dumps(model, in_grids, out_grid, config, rules=None, meta=None):
    d = bundle_to_dict(model, in_grids, out_grid, config, rules, meta)
    return json.dumps(d, sort_keys=True, indent=1) + "\n"


def save(path, model, in_grids, out_grid, config, rules=None, meta=None):
    _atomic_write(path, dumps(model, in_grids, out_grid, config, rules, meta))
    return Path(path)


def loads(text):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BundleError(f"bundle is truncated or not JSON: {exc}") from exc
    if not isinstance(d, dict) or d.get("format") != FORMAT:
        raise BundleError("not a qgad model bundle")
    if d.get("version") != VERSION:
        raise BundleError(f"unsupported bundle version {d.get('version')!r} (expected {VERSION})")
    try:
        config = PreprocessConfig.from_dict(d["preprocess"])
        in_grids = [QuantizationGrid.from_dict(g) for g in d["grids"]["in"]]
        out_grid = QuantizationGrid.from_dict(d["grids"]["out"])
        m = d["model"]
        layers = [
            GruCell(
                int(lay["input_size"]),
                int(lay["hidden_size"]),
                {k: decode_array(lay["params"][k]) for k in GATE_PARAMS},
            )
            for lay in m["layers"]
        ]
        model = GruClassifier(
            layers, decode_array(m["dense"]["W"]), decode_array(m["dense"]["b"]), m["in_grid"]
        )
        rules = RuleSet.from_dict(d["rules"]) if d.get("rules") else None
    except BundleError:
        raise
    except (KeyError, TypeError, ValueError, ConfigError, StructureError) as exc:
        raise BundleError(f"bundle content is malformed: {exc!r}") from exc
    if model.out_grid != config.out_grid or out_grid.m != config.out_grid:
        raise BundleError("bundle out_grid is inconsistent")
    if any(g.m != config.in_grid for g in in_grids) or len(in_grids) != model.n_channels:
        raise BundleError("bundle input grids are inconsistent")
    return Bundle(model, in_grids, out_grid, config, rules, d.get("meta") or {})


def load(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise BundleError(f"cannot read bundle {path}: {exc}") from exc
    return loads(text)
