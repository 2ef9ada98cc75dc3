"""
Checkpoint file format (little-endian throughout)::

    b"KMUN"  u32 version=1
    u32 n    n bytes of UTF-8 "key=value" lines (the model config)
    u32 count
    count x { u16 len, name, u8 dtype (0 = float32), u8 rank, rank x u64 dim, raw values }
"""
import io
import logging
import struct
from pathlib import Path

import numpy as np

from numerics.exceptions import CheckpointError

from .config import model_config_pairs
from .model import build
from .serializers import ModelConfigSerializer

logger = logging.getLogger(__name__)

MAGIC = b"KMUN"
VERSION = 1
DTYPE_F32 = 0


def _pack_config(cfg):
    return "".join(f"{k}={v}\n" for k, v in model_config_pairs(cfg)).encode("utf-8")


def _unpack_config(blob):
    pairs = {}
    for line in blob.decode("utf-8").splitlines():
        if line:
            key, _, value = line.partition("=")
            pairs[key] = value
    return pairs


def save_checkpoint(path, model):
    path = Path(path)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    config = _pack_config(model.cfg)
    buf.write(struct.pack("<I", len(config)))
    buf.write(config)
    named = list(model.named_parameters())
    buf.write(struct.pack("<I", len(named)))
    for name, tensor in named:
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<BB", DTYPE_F32, tensor.ndim))
        buf.write(struct.pack(f"<{tensor.ndim}Q", *tensor.shape))
        buf.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(buf.getvalue())
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot write checkpoint ({exc.strerror or exc})") from exc
    logger.info("saved checkpoint %s (%d tensors)", path, len(named))
    return path


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path):
    """Returns ``(config pairs, {name: float32 array})`` without building a model."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror or exc})") from exc
    reader = _Reader(data, path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a KM-UNet checkpoint (bad magic)")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}, expected {VERSION}")
    (config_len,) = reader.unpack("<I")
    try:
        pairs = _unpack_config(reader.take(config_len))
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"{path}: config block is not UTF-8") from exc
    (count,) = reader.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8", errors="replace")
        dtype, rank = reader.unpack("<BB")
        if dtype != DTYPE_F32:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype code {dtype}")
        shape = reader.unpack(f"<{rank}Q")
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    return pairs, tensors


def load_checkpoint(path):
    """Rebuild the model described by the checkpoint and restore its parameters."""
    pairs, tensors = read_checkpoint(path)
    serializer = ModelConfigSerializer(data=pairs)
    if not serializer.is_valid():
        raise CheckpointError(f"{path}: invalid model config {dict(serializer.errors)}")
    cfg = serializer.save()
    model = build(cfg, seed=0)
    named = dict(model.named_parameters())
    if set(named) != set(tensors):
        missing = sorted(set(named) - set(tensors))
        extra = sorted(set(tensors) - set(named))
        raise CheckpointError(f"{path}: parameter names do not match the config (missing {missing}, extra {extra})")
    for name, param in named.items():
        values = tensors[name]
        if values.shape != param.shape:
            raise CheckpointError(f"{path}: {name} has shape {values.shape}, model expects {param.shape}")
        param.data = values
    logger.info("loaded checkpoint %s", path)
    return model
