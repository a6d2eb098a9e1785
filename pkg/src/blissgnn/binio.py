"""Checkpoint container: one JSON header line followed by raw little-endian float64 arrays."""

import json

import numpy as np

MAGIC = "blissgnn-arrays/1"


def write_arrays(path, header: dict, arrays: dict):
    header = dict(header)
    header["format"] = MAGIC
    header["arrays"] = [{"name": name, "shape": list(np.shape(a))} for name, a in arrays.items()]
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_arrays(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("format") != MAGIC:
            raise ValueError(f"{path} is not a {MAGIC} file")
        arrays = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8", count=count)
            arrays[spec["name"]] = data.astype(np.float64).reshape(shape)
        if fh.read(1):
            raise ValueError(f"{path} has trailing bytes")
    return header, arrays
