"""Binary checkpoint and dataset files.

Layout: 8-byte little-endian header length, a UTF-8 JSON header, then the
matrices as row-major little-endian float64 in header order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .archext import spec_from_dict
from .datagen import Dataset
from .netcore import ArchSpec, NetworkParams

FORMAT = "opl1"


def _write(path, header: dict, arrays) -> Path:
    path = Path(path)
    header = dict(header, format=FORMAT, shapes=[list(a.shape) for a in arrays])
    blob = json.dumps(header, sort_keys=True).encode()
    with path.open("wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return path


def _read(path) -> tuple[dict, list]:
    path = Path(path)
    with path.open("rb") as fh:
        (size,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(size))
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: unsupported format {header.get('format')!r}")
        arrays = []
        for shape in header["shapes"]:
            count = int(np.prod(shape))
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"{path}: truncated matrix block")
            arrays.append(np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64))
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after last matrix")
    return header, arrays


def save_checkpoint(params: NetworkParams, path) -> Path:
    header = {
        "arch": params.arch.to_dict(),
        "seed": int(params.seed),
        "ext": None if params.ext is None else params.ext.to_dict(),
        "n_bias": len(params.bias or []),
    }
    return _write(path, header, [params.A, *params.W, params.B, *(params.bias or [])])


def load_checkpoint(path) -> NetworkParams:
    header, arrays = _read(path)
    arch = ArchSpec.from_dict(header["arch"])
    nb = header.get("n_bias", 0)
    L = arch.depth
    A, W, B = arrays[0], arrays[1 : L + 1], arrays[L + 1]
    bias = arrays[L + 2 : L + 2 + nb] if nb else None
    return NetworkParams(A, list(W), B, arch, header["seed"], bias=bias, ext=spec_from_dict(header.get("ext")))


def save_dataset(data: Dataset, path) -> Path:
    header = {
        "n": data.n,
        "input_dim": data.input_dim,
        "output_dim": data.output_dim,
        "certified_delta": data.certified_delta if np.isfinite(data.certified_delta) else "inf",
        "label_mode": data.label_mode,
        "seed": data.seed,
    }
    return _write(path, header, [data.X, np.asarray(data.Y, dtype=np.float64)])


def load_dataset(path) -> Dataset:
    header, (X, Y) = _read(path)
    delta = float(header["certified_delta"])
    return Dataset(X, Y, delta, header["label_mode"], header["seed"])
