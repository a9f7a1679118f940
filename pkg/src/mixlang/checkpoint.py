"""JSON checkpoint helpers shared by the DST and NLU models.

Values are emitted through Python float repr, so load(save(m)) restores
every parameter bit-exactly.
"""
from __future__ import annotations

import json

import numpy as np

__all__ = ["params_payload", "restore_params", "write_checkpoint", "read_checkpoint"]


def params_payload(params: dict) -> dict:
    return {
        name: {"shape": list(p.data.shape), "values": p.data.ravel().tolist()}
        for name, p in params.items()
    }


def restore_params(payload: dict, params: dict) -> None:
    """Fill existing parameter tensors in place, checking names and shapes."""
    missing = set(params) - set(payload)
    extra = set(payload) - set(params)
    if missing or extra:
        raise ValueError(f"checkpoint parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, p in params.items():
        blob = payload[name]
        shape = tuple(blob["shape"])
        if shape != p.data.shape:
            raise ValueError(f"checkpoint {name}: shape {shape} != expected {p.data.shape}")
        p.data = np.array(blob["values"], dtype=np.float64).reshape(shape)


def write_checkpoint(obj: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def read_checkpoint(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
