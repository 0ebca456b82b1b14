"""Binary checkpoint format.

Layout (little-endian)::

    b"CKPT" | version u8 | descriptor length u32 | descriptor (UTF-8 JSON)
    | tensor count u32
    | per tensor: name length u16 | name | rank u8 | dims u32 * rank | float64 data
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .models import Classifier, build_classifier

MAGIC = b"CKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(descriptor: dict, tensors: dict[str, np.ndarray]) -> bytes:
    desc = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<BI", VERSION, len(desc)), desc, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        if data[:4] != MAGIC:
            raise CheckpointError("not a checkpoint (bad magic)")
        version, dlen = struct.unpack_from("<BI", data, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 9
        descriptor = json.loads(data[pos:pos + dlen].decode("utf-8"))
        pos += dlen
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            tensors[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
            pos += 8 * size
    except (struct.error, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    if pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint tensors")
    return descriptor, tensors


def save_checkpoint(path, model: Classifier, state: dict[str, np.ndarray] | None = None,
                    extra: dict | None = None) -> None:
    descriptor = {"spec": model.descriptor(), **(extra or {})}
    with open(path, "wb") as f:
        f.write(encode_checkpoint(descriptor, state if state is not None else model.state_dict()))


def load_checkpoint(path, dtype=np.float32) -> tuple[Classifier, dict]:
    with open(path, "rb") as f:
        descriptor, tensors = decode_checkpoint(f.read())
    spec = descriptor.get("spec")
    if not spec:
        raise CheckpointError("checkpoint has no model spec")
    model = build_classifier(spec["variant"], spec["arch"], spec["image_size"],
                             spec["num_classes"], spec["width_multiplier"], dtype=dtype)
    try:
        model.load_state_dict(tensors)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint does not match its spec: {exc}") from exc
    return model, descriptor
