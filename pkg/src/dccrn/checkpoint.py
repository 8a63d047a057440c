"""Checkpoint container.

Layout (UTF-8 header, then raw data)::

    DCCRN-CHECKPOINT
    version=1
    model.<field>=<value>        one line per ModelConfig field
    meta.<key>=<value>           optional free-form metadata
    tensor=<name>:<d0>,<d1>,...  parameters, declaration order
    buffer=<name>:<d0>,...       batch-norm running statistics
    end

followed by every tensor and buffer, in header order, as little-endian
float32 with no padding. Saving a loaded checkpoint reproduces the file
byte for byte.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .model import DCCRN, ModelConfig

MAGIC = "DCCRN-CHECKPOINT"
VERSION = 1
_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def _shape_str(shape) -> str:
    return ",".join(str(int(d)) for d in shape)


def _entries(model: DCCRN):
    for name, p in model.named_parameters():
        yield "tensor", name, p.data
    for name, b in model.named_buffers():
        yield "buffer", name, b


def to_bytes(model: DCCRN, meta: dict | None = None) -> bytes:
    lines = [MAGIC, f"version={VERSION}"]
    lines += [f"model.{k}={v}" for k, v in model.config.to_dict().items()]
    for k, v in sorted((meta or {}).items()):
        text = str(v)
        if "\n" in text or "=" in str(k):
            raise CheckpointError(f"metadata {k!r} must be a single key=value line")
        lines.append(f"meta.{k}={text}")
    payload = io.BytesIO()
    for kind, name, arr in _entries(model):
        lines.append(f"{kind}={name}:{_shape_str(arr.shape)}")
        payload.write(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes())
    lines.append("end")
    return ("\n".join(lines) + "\n").encode("utf-8") + payload.getvalue()


def save(model: DCCRN, path, meta: dict | None = None) -> None:
    Path(path).write_bytes(to_bytes(model, meta))


def _parse(blob: bytes, source: str):
    end = blob.find(b"\nend\n")
    if not blob.startswith(MAGIC.encode() + b"\n") or end < 0:
        raise CheckpointError(f"{source}: not a DCCRN checkpoint")
    header = blob[:end].decode("utf-8").split("\n")
    version = header[1].partition("=")[2] if header[1].startswith("version=") else ""
    if version != str(VERSION):
        raise CheckpointError(f"{source}: checkpoint format version {version or '?'}, this build reads {VERSION}")
    model_kv, meta, entries = {}, {}, []
    for line in header[2:]:
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"{source}: malformed header line {line!r}")
        if key.startswith("model."):
            model_kv[key[6:]] = value
        elif key.startswith("meta."):
            meta[key[5:]] = value
        elif key in ("tensor", "buffer"):
            name, _, shape = value.rpartition(":")
            dims = tuple(int(d) for d in shape.split(",") if d)
            entries.append((key, name, dims))
        else:
            raise CheckpointError(f"{source}: unknown header key {key!r}")
    return model_kv, meta, entries, blob[end + len(b"\nend\n"):]


def load(path, expect: ModelConfig | None = None):
    """Returns (model in eval mode, metadata dict).

    With ``expect`` the stored configuration must match it exactly.
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as err:
        raise CheckpointError(f"{path}: cannot read checkpoint ({err.strerror})") from None
    return from_bytes(blob, str(path), expect)


def from_bytes(blob: bytes, source: str = "<bytes>", expect: ModelConfig | None = None):
    model_kv, meta, entries, data = _parse(blob, source)
    try:
        config = ModelConfig.from_dict(model_kv)
    except (KeyError, ValueError) as err:
        raise CheckpointError(f"{source}: bad model configuration ({err})") from None
    if expect is not None and config != expect:
        raise CheckpointError(f"{source}: checkpoint config {config.to_dict()} does not match {expect.to_dict()}")
    model = DCCRN(config)
    wanted = [(k, n, tuple(a.shape)) for k, n, a in _entries(model)]
    if wanted != entries:
        raise CheckpointError(f"{source}: tensor list does not match the model built from its header")
    need = sum(int(np.prod(s)) for _, _, s in entries) * _DTYPE.itemsize
    if len(data) != need:
        raise CheckpointError(f"{source}: payload has {len(data)} bytes, header describes {need}")
    params = dict(model.named_parameters())
    offset = 0
    for kind, name, shape in entries:
        count = int(np.prod(shape))
        arr = np.frombuffer(data, _DTYPE, count, offset).reshape(shape)
        offset += count * _DTYPE.itemsize
        if kind == "tensor":
            params[name].data = arr.astype(model.dtype)
        else:
            current = dict(model.named_buffers())[name]
            model.set_buffer(name, arr.astype(current.dtype))
    model.eval()
    return model, meta
