"""PGW1 weight files: named float32 tensors followed by the run configuration text."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

from .io import FormatError

MAGIC = b"PGW1"


def encode_weights(tensors: dict[str, torch.Tensor], config_text: str = "") -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, tensor in tensors.items():
        raw = name.encode("utf-8")
        arr = tensor.detach().cpu().numpy().astype("<f4")
        if arr.ndim > 0xFF:
            raise ValueError(f"tensor {name!r} has too many dimensions")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    cfg = config_text.encode("utf-8")
    parts.append(struct.pack("<I", len(cfg)) + cfg)
    return b"".join(parts)


def decode_weights(buf: bytes, path="<bytes>") -> tuple[dict[str, torch.Tensor], str]:
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"{path}: truncated checkpoint at offset {pos}")
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise FormatError(f"{path}: not a PGW1 checkpoint")
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", take(2))
        name = take(n).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape)
        tensors[name] = torch.from_numpy(arr.astype(np.float32))
    (n,) = struct.unpack("<I", take(4))
    config_text = take(n).decode("utf-8")
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes after checkpoint")
    return tensors, config_text


def save_checkpoint(path, tensors: dict[str, torch.Tensor], config_text: str = "") -> None:
    Path(path).write_bytes(encode_weights(tensors, config_text))


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], str]:
    return decode_weights(Path(path).read_bytes(), path)
