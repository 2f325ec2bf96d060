"""JSON checkpoints for :class:`~kmr.tensor.Model`.

Arrays are written as nested lists of floats; Python's float repr round-trips
float64 exactly, so a save/load cycle is bit-preserving.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .tensor import DenseLayer, Model

FORMAT_VERSION = 1


def _pair(pair, names):
    if pair is None:
        return None
    return {"rank": int(pair[0].shape[1] if names[0] == "U" else pair[0].shape[0]),
            names[0]: pair[0].tolist(), names[1]: pair[1].tolist()}


def model_to_dict(model: Model) -> dict:
    layers = []
    for layer in model.layers:
        share = None
        if layer.share is not None:
            centers, codes = layer.share
            share = {"centers": centers.tolist(), "codes": codes.tolist()}
        layers.append(
            {
                "in": layer.in_dim,
                "out": layer.out_dim,
                "activation": layer.activation.value,
                "weights": layer.weights.tolist(),
                "bias": layer.bias.tolist(),
                "mask": layer.mask.astype(int).tolist(),
                "quant_bits": layer.quant_bits,
                "lowrank": _pair(layer.lowrank, ("U", "V")),
                "adapter": _pair(layer.adapter, ("A", "B")),
                "share": share,
                "frozen": layer.frozen,
            }
        )
    return {
        "format_version": FORMAT_VERSION,
        "input_dim": model.input_dim,
        "output_dim": model.output_dim,
        "layers": layers,
    }


def _matrix(rows, n_rows: int, n_cols: int) -> np.ndarray:
    return np.array(rows, dtype=np.float64).reshape(n_rows, n_cols)


def model_from_dict(d: dict) -> Model:
    if d.get("format_version") != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {d.get('format_version')!r}")
    layers = []
    for ld in d["layers"]:
        out, inp = ld["out"], ld["in"]
        lowrank = adapter = share = None
        if ld.get("lowrank"):
            r = ld["lowrank"]["rank"]
            lowrank = (_matrix(ld["lowrank"]["U"], out, r), _matrix(ld["lowrank"]["V"], r, inp))
        if ld.get("adapter"):
            r = ld["adapter"]["rank"]
            adapter = (_matrix(ld["adapter"]["A"], r, inp), _matrix(ld["adapter"]["B"], out, r))
        if ld.get("share"):
            share = (
                np.array(ld["share"]["centers"], dtype=np.float64),
                np.array(ld["share"]["codes"], dtype=np.int64).reshape(out, inp),
            )
        layers.append(
            DenseLayer(
                weights=_matrix(ld["weights"], out, inp),
                bias=np.array(ld["bias"], dtype=np.float64),
                mask=_matrix(ld["mask"], out, inp),
                activation=ld["activation"],
                quant_bits=ld.get("quant_bits"),
                lowrank=lowrank,
                adapter=adapter,
                share=share,
                frozen=bool(ld.get("frozen", False)),
            )
        )
    return Model(layers, d["input_dim"], d["output_dim"])


def save_model(model: Model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> Model:
    return model_from_dict(json.loads(Path(path).read_text()))
