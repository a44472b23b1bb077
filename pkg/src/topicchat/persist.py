"""Helpers for the JSON + base64 blob container used by topic model,
checkpoint, and bundle files. Round trips are bit-exact."""

import base64
import json

import numpy as np


def array_to_blob(arr):
    arr = np.ascontiguousarray(arr)
    return {
        "shape": list(arr.shape),
        "dtype": str(arr.dtype),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def array_from_blob(blob):
    raw = base64.b64decode(blob["data"])
    arr = np.frombuffer(raw, dtype=np.dtype(blob["dtype"]))
    return arr.reshape(blob["shape"]).copy()


def dump_json_file(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)


def load_json_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: corrupt or truncated file: {exc}") from exc
