"""JSON checkpoint format for :class:`SenModel`.

Layout::

    {"meta": {"n", "m", "window", "hidden", "conv_kernels", "norm_center", "norm_scale"},
     "weights": {name: {"shape": [...], "data": [flat row-major floats]}}}

Floats are written with ``repr`` precision, so a save/load round trip is exact.
"""

from __future__ import annotations

import json
import os

import numpy as np

from colontrack.errors import CheckpointError, StorageError
from colontrack.sen.model import PARAM_NAMES, SenMeta, SenModel

META_FIELDS = ("n", "m", "window", "hidden", "conv_kernels", "norm_center", "norm_scale")


def model_to_dict(model):
    meta = model.meta
    return {
        "meta": {
            "n": meta.n,
            "m": meta.m,
            "window": meta.window,
            "hidden": meta.hidden,
            "conv_kernels": meta.conv_kernels,
            "norm_center": list(meta.norm_center),
            "norm_scale": meta.norm_scale,
        },
        "weights": {
            name: {
                "shape": list(model.params[name].shape),
                "data": [float(v) for v in np.asarray(model.params[name], dtype=float).ravel()],
            }
            for name in PARAM_NAMES
        },
    }


def dumps(model):
    # key order is fixed (no sort) so a truncated file can be diagnosed field by field
    return json.dumps(model_to_dict(model)) + "\n"


def _field_order():
    """(dotted field name, JSON key) in the order :func:`dumps` writes them."""
    out = [("meta", "meta")] + [(f"meta.{k}", k) for k in META_FIELDS] + [("weights", "weights")]
    for name in PARAM_NAMES:
        out += [
            (f"weights.{name}", name),
            (f"weights.{name}.shape", "shape"),
            (f"weights.{name}.data", "data"),
        ]
    return out


def _diagnose_truncation(text):
    """Name the first field a cut-off checkpoint is missing."""
    pos = 0
    last = None
    for dotted, key in _field_order():
        found = text.find(f'"{key}":', pos)
        if found < 0:
            if last is None:
                return dotted
            return f"{dotted} (file ends inside {last})"
        pos = found + len(key) + 3
        last = dotted
    return f"{last} (value incomplete)"


def model_from_dict(data):
    if not isinstance(data, dict):
        raise CheckpointError("checkpoint root must be an object")
    if "meta" not in data:
        raise CheckpointError("checkpoint missing field 'meta'")
    if "weights" not in data:
        raise CheckpointError("checkpoint missing field 'weights'")
    raw_meta = data["meta"]
    for key in META_FIELDS:
        if key not in raw_meta:
            raise CheckpointError(f"checkpoint missing field 'meta.{key}'")
    try:
        meta = SenMeta(
            n=int(raw_meta["n"]),
            m=int(raw_meta["m"]),
            window=int(raw_meta["window"]),
            hidden=int(raw_meta["hidden"]),
            conv_kernels=int(raw_meta["conv_kernels"]),
            norm_center=tuple(float(v) for v in raw_meta["norm_center"]),
            norm_scale=float(raw_meta["norm_scale"]),
        )
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid checkpoint meta: {exc}") from exc
    if len(meta.norm_center) != 3:
        raise CheckpointError("checkpoint field 'meta.norm_center' must have 3 entries")
    expected = meta.param_shapes()
    params = {}
    for name in PARAM_NAMES:
        entry = data["weights"].get(name)
        if entry is None:
            raise CheckpointError(f"checkpoint missing field 'weights.{name}'")
        for part in ("shape", "data"):
            if part not in entry:
                raise CheckpointError(f"checkpoint missing field 'weights.{name}.{part}'")
        shape = tuple(int(v) for v in entry["shape"])
        if shape != expected[name]:
            raise CheckpointError(
                f"weights.{name} has shape {shape}, meta implies {expected[name]}"
            )
        flat = np.asarray(entry["data"], dtype=float)
        if flat.size != int(np.prod(shape)):
            raise CheckpointError(
                f"weights.{name} has {flat.size} values, shape {shape} needs {int(np.prod(shape))}"
            )
        if not np.all(np.isfinite(flat)):
            raise CheckpointError(f"weights.{name} contains non-finite values")
        params[name] = flat.reshape(shape)
    return SenModel(meta, params)


def loads(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(
            f"checkpoint is truncated or malformed; missing field '{_diagnose_truncation(text)}'"
        ) from exc
    return model_from_dict(data)


def save(model, path):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(dumps(model))
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint {os.fspath(path)}: {exc.strerror}") from exc


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint {os.fspath(path)}: {exc.strerror}") from exc
    return loads(text)
