"""Binary checkpoint format.

Layout (little-endian)::

    b"H2NN"            4 bytes magic
    version            u32
    config digest      32 bytes, SHA-256 of the canonical network text
    payload            float32 values: for each parameterized layer in
                       declaration order, its weights then its bias

Loading against a config whose digest differs is refused.
"""

import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError

MAGIC = b"H2NN"
VERSION = 1
_HEADER = struct.Struct("<4sI32s")


def encode_checkpoint(config, params):
    chunks = [_HEADER.pack(MAGIC, VERSION, config.digest())]
    for i, (wshape, bshape) in config.param_shapes().items():
        w, b = params[i]
        if w.shape != wshape or b.shape != bshape:
            raise ConfigError("parameters do not match config", layer_index=i)
        chunks.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return b"".join(chunks)


def decode_checkpoint(config, blob, source="<bytes>"):
    if len(blob) < _HEADER.size:
        raise DataError("truncated checkpoint header", path=source)
    magic, version, digest = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DataError(f"bad magic {magic!r}", path=source)
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}", path=source)
    if digest != config.digest():
        raise ConfigError(f"{source}: checkpoint was written for a different network config")
    offset = _HEADER.size
    params = {}
    for i, (wshape, bshape) in config.param_shapes().items():
        arrays = []
        for shape in (wshape, bshape):
            count = int(np.prod(shape))
            end = offset + 4 * count
            if end > len(blob):
                raise DataError("truncated checkpoint payload", path=source)
            arrays.append(np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
                          .astype(np.float32).reshape(shape))
            offset = end
        params[i] = tuple(arrays)
    if offset != len(blob):
        raise DataError(f"{len(blob) - offset} trailing bytes in checkpoint", path=source)
    return params


def save_checkpoint(path, config, params):
    Path(path).write_bytes(encode_checkpoint(config, params))


def load_checkpoint(path, config):
    return decode_checkpoint(config, Path(path).read_bytes(), source=str(path))
