"""Versioned single-file checkpoint container.

Layout::

    b"HIRESNN\\0"          8-byte magic
    uint32  version        little endian
    uint64  header length  little endian
    header                 UTF-8 JSON, sorted keys, no whitespace
    payload                float64 little-endian parameter data

The header lists the layer specs, execution settings, metadata and, for each
parameter, its shape and byte offset into the payload. Nothing time- or
host-dependent is written, so equal models give byte-identical files.
"""
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError, DependencyError
from .model import LayerSpec, ModelGraph

MAGIC = b"HIRESNN\0"
VERSION = 1


def to_bytes(graph, metadata=None):
    entries = []
    chunks = []
    offset = 0
    for key in sorted(graph.params):
        arr = np.asarray(graph.params[key], dtype="<f8")
        entries.append({"name": key, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "layers": [s.to_dict() for s in graph.layers],
        "input_shape": list(graph.input_shape),
        "mode": graph.mode,
        "T": graph.T,
        "gamma": graph.gamma,
        "detach_reset": graph.detach_reset,
        "params": entries,
        "metadata": metadata or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<IQ", VERSION, len(blob)) + blob + b"".join(chunks)


def from_bytes(raw):
    if raw[:8] != MAGIC:
        raise DataFormatError("not a checkpoint file (bad magic)", offset=0)
    if len(raw) < 20:
        raise DataFormatError("truncated checkpoint header", offset=len(raw))
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}", offset=8)
    try:
        header = json.loads(raw[20:20 + hlen])
    except ValueError as e:
        raise DataFormatError(f"corrupt checkpoint header: {e}", offset=20) from None
    base = 20 + hlen
    params = {}
    for e in header["params"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        start = base + e["offset"]
        if start + 8 * n > len(raw):
            raise DataFormatError(f"payload for {e['name']} is truncated", offset=len(raw))
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=start).astype(np.float64)
        params[e["name"]] = arr.reshape(tuple(e["shape"]))
    graph = ModelGraph([LayerSpec.from_dict(d) for d in header["layers"]], tuple(header["input_shape"]),
                       params, header["mode"], header["T"], header["gamma"], header["detach_reset"])
    return graph, header["metadata"]


def save_checkpoint(path, graph, metadata=None):
    Path(path).write_bytes(to_bytes(graph, metadata))


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise DependencyError(f"checkpoint {path} not found")
    return from_bytes(path.read_bytes())
