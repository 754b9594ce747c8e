"""Model checkpoint (SNDM) and loss-history files.

SNDM layout, little-endian: magic b"SNDM" | version u16 = 1 | width u16 |
tensor count u32, then per tensor: name length u16 | UTF-8 name | ndim u8 |
ndim x u32 dims | float32 values in C order.
"""

import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import FormatError, UnsupportedVersion
from .network import DenoiserModel

MAGIC = b"SNDM"
VERSION = 1


def save_model(path, model):
    state = model.state_dict()
    parts = [MAGIC, struct.pack("<HHI", VERSION, model.width, len(state))]
    for name, tensor in state.items():
        raw = name.encode("utf-8")
        arr = tensor.detach().cpu().numpy().astype("<f4")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path):
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise FormatError("not a SNDM checkpoint", offset=0)
    if len(buf) < 12:
        raise FormatError("truncated checkpoint header", offset=len(buf))
    version, width, count = struct.unpack_from("<HHI", buf, 4)
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported SNDM version {version}", offset=4)
    try:
        offset = 12
        state = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, offset)
            name = buf[offset + 2:offset + 2 + n].decode("utf-8")
            offset += 2 + n
            (ndim,) = struct.unpack_from("<B", buf, offset)
            shape = struct.unpack_from(f"<{ndim}I", buf, offset + 1)
            offset += 1 + 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            values = np.frombuffer(buf, dtype="<f4", count=size, offset=offset).reshape(shape)
            offset += 4 * size
            state[name] = torch.from_numpy(values.copy())
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint: {exc}") from exc
    model = DenoiserModel(width=width)
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise FormatError(f"checkpoint does not match the network layout: {exc}") from exc
    return model.eval()


def save_history(path, history):
    lines = ["epoch,loss1,loss2,total"]
    lines += [f"{i + 1},{h.loss1:.9g},{h.loss2:.9g},{h.total:.9g}" for i, h in enumerate(history)]
    Path(path).write_text("\n".join(lines) + "\n")
