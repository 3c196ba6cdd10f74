"""
Binary checkpoint container.

Layout (all integers little-endian ``<u4`` unless noted)::

    b"DWCK"                      magic
    version
    header_length, header        canonical YAML: variant, capsules, options, extra
    tensor_count
    per tensor:
        name_length, name        UTF-8
        dtype_length, dtype      numpy dtype string, "<f8" or "<f4"
        rank, shape[rank]
        raw values               little-endian, row-major
    crc32                        over every preceding byte

Saving a loaded checkpoint reproduces the original bytes.
"""

import hashlib
import zlib
from collections import OrderedDict
from pathlib import Path

import numpy as np
import yaml

from dwcaps_engine.core.utils.errors import CheckpointError, ContractError
from dwcaps_engine.core.utils.yaml import dump_canonical

MAGIC = b"DWCK"
FORMAT_VERSION = 1
_DTYPES = {"<f8": np.float64, "<f4": np.float32}


def _u4(*values):
    return np.array(values, dtype="<u4").tobytes()


def _text(s):
    raw = s.encode("utf-8")
    return _u4(len(raw)) + raw


def encode(header, tensors):
    """Bytes of a checkpoint holding ``header`` (a dict) and ``tensors`` (name -> array)."""
    parts = [MAGIC, _u4(FORMAT_VERSION), _text(dump_canonical(header)), _u4(len(tensors))]
    for name, array in tensors.items():
        array = np.asarray(array)
        code = "<f4" if array.dtype == np.float32 else "<f8"
        parts.append(_text(name))
        parts.append(_text(code))
        parts.append(_u4(array.ndim, *array.shape))
        parts.append(np.ascontiguousarray(array, dtype=code).tobytes())
    body = b"".join(parts)
    return body + _u4(zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if n < 0 or self.pos + n > len(self.data):
            raise CheckpointError("Checkpoint is truncated.")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u4(self, count=1):
        values = np.frombuffer(self.take(4 * count), dtype="<u4")
        return [int(v) for v in values]

    def text(self):
        (length,) = self.u4()
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError as err:
            raise CheckpointError(f"Checkpoint holds an undecodable string: {err}") from err


def decode(data):
    """(header, OrderedDict name -> array) from checkpoint bytes."""
    if len(data) < len(MAGIC) + 8:
        raise CheckpointError("Checkpoint is truncated.")
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("Not a checkpoint file (bad magic).")
    body, trailer = data[:-4], data[-4:]
    if int(np.frombuffer(trailer, dtype="<u4")[0]) != (zlib.crc32(body) & 0xFFFFFFFF):
        raise CheckpointError("Checkpoint checksum mismatch (file truncated or corrupted).")

    reader = _Reader(body)
    reader.take(len(MAGIC))
    (version,) = reader.u4()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Checkpoint format version {version} is not supported (expected {FORMAT_VERSION}).")
    try:
        header = yaml.safe_load(reader.text())
    except yaml.YAMLError as err:
        raise CheckpointError(f"Checkpoint header is not valid YAML: {err}") from err

    (count,) = reader.u4()
    tensors = OrderedDict()
    for _ in range(count):
        name = reader.text()
        code = reader.text()
        if code not in _DTYPES:
            raise CheckpointError(f"Tensor {name} has unsupported dtype {code!r}.")
        (rank,) = reader.u4()
        shape = tuple(reader.u4(rank)) if rank else ()
        itemsize = np.dtype(code).itemsize
        raw = reader.take(int(np.prod(shape, dtype=np.int64)) * itemsize)
        tensors[name] = np.frombuffer(raw, dtype=code).astype(_DTYPES[code]).reshape(shape)
    if reader.pos != len(body):
        raise CheckpointError("Checkpoint has trailing bytes after the last tensor.")
    return header, tensors


def model_header(model, extra=None):
    return {
        "format_version": FORMAT_VERSION,
        "variant": model.variant.name,
        "capsules": model.caps.to_dict(),
        "options": model.options.to_dict(),
        "extra": dict(extra or {}),
    }


def checkpoint_bytes(model, extra=None):
    if extra is None:
        extra = getattr(model, "checkpoint_extra", None)
    arrays = OrderedDict((name, t.data) for name, t in model.named_parameters().items())
    return encode(model_header(model, extra), arrays)


def checksum(data):
    return hashlib.sha256(data).hexdigest()


def save_checkpoint(model, path, extra=None):
    """Write ``model`` to ``path``; returns the sha256 of the written bytes."""
    data = checkpoint_bytes(model, extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return checksum(data)


def load_checkpoint(path, expected_variant=None):
    """
    Rebuild the model stored at ``path``. The header's ``extra`` mapping is
    attached to the model as ``checkpoint_extra``.
    """
    from dwcaps_engine.core.capsules.routing import CapsuleConfig
    from dwcaps_engine.make_model import BuildOptions, build_variant

    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as err:
        raise CheckpointError(f"Checkpoint not found: {path}") from err
    header, tensors = decode(data)
    try:
        variant = header["variant"]
        caps = CapsuleConfig(**header["capsules"])
        options = BuildOptions(**header["options"])
    except (KeyError, TypeError) as err:
        raise CheckpointError(f"Checkpoint header is incomplete: {err}") from err
    if expected_variant is not None and str(expected_variant) != variant:
        raise ContractError(f"Checkpoint holds variant {variant}, expected {expected_variant}.")

    model = build_variant(variant, caps, options, initialize=True)
    model.load_named(tensors)
    model.checkpoint_extra = header.get("extra", {})
    return model
