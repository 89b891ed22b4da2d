"""Checkpoint files: a plain-text manifest followed by raw tensor bytes.

Layout (all header lines ASCII, sorted for byte-identical reruns):

    docmt-checkpoint 1
    config <key> = <value>
    frozen <name>
    tensor <name> <dim,dim,...> <byte offset> <value count>
    data <total bytes>
    <little-endian IEEE-754 float64 values, row-major>
"""

from __future__ import annotations

import numpy as np

from .autodiff import ParamSet, Tensor
from .exceptions import DataError

FORMAT_LINE = "docmt-checkpoint 1"


def save_checkpoint(path, params: ParamSet, config: dict):
    names = params.names()
    header = [FORMAT_LINE]
    for key in sorted(config):
        header.append(f"config {key} = {config[key]}")
    for name in sorted(params.frozen):
        header.append(f"frozen {name}")
    offset = 0
    blobs = []
    for name in names:
        data = np.ascontiguousarray(params[name].data, dtype="<f8")
        dims = ",".join(str(d) for d in data.shape) or "scalar"
        header.append(f"tensor {name} {dims} {offset} {data.size}")
        blobs.append(data.tobytes())
        offset += data.size * 8
    header.append(f"data {offset}")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Read a checkpoint, returning (ParamSet, config dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        head_end = raw.index(b"\ndata ")
    except ValueError:
        raise DataError(f"{path}: missing data section") from None
    newline = raw.index(b"\n", head_end + 1)
    header = raw[:newline].decode("ascii").split("\n")
    blob = raw[newline + 1 :]
    if not header or header[0] != FORMAT_LINE:
        raise DataError(f"{path}: not a recognized checkpoint (bad format line)")
    config = {}
    frozen = []
    tensors = []
    total = None
    for line in header[1:]:
        if line.startswith("config "):
            body = line[len("config "):]
            if " = " not in body:
                raise DataError(f"{path}: malformed config line '{line}'")
            key, value = body.split(" = ", 1)
            config[key] = value
        elif line.startswith("frozen "):
            frozen.append(line[len("frozen "):])
        elif line.startswith("tensor "):
            parts = line.split(" ")
            if len(parts) != 5:
                raise DataError(f"{path}: malformed tensor line '{line}'")
            _, name, dims, offset, count = parts
            shape = () if dims == "scalar" else tuple(int(d) for d in dims.split(","))
            tensors.append((name, shape, int(offset), int(count)))
        elif line.startswith("data "):
            total = int(line[len("data "):])
        else:
            raise DataError(f"{path}: unrecognized header line '{line}'")
    if total is None or len(blob) != total:
        raise DataError(f"{path}: data section size mismatch")
    ps = ParamSet()
    for name, shape, offset, count in tensors:
        expect = 1
        for d in shape:
            expect *= d
        if expect != count:
            raise DataError(f"{path}: tensor '{name}' count disagrees with shape")
        values = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        ps.add(name, Tensor(values.reshape(shape).copy()))
    ps.frozen = set(frozen)
    return ps, config
