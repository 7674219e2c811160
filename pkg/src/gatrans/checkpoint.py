"""Binary checkpoint format.

Layout (all integers little-endian):
  magic "GATR" | u32 version | u32 config length | config utf-8 text |
  u32 param count | records | 8-byte checksum (truncated SHA-256 of all
  preceding bytes).
Each record: u16 name length | name utf-8 | u8 ndim | u32 dims... |
raw float32 little-endian values.
"""

from __future__ import annotations

import hashlib
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"GATR"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, params, config_text: str):
    """params: iterable of (name, float32 ndarray); round-trips bit-exactly."""
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    cfg = config_text.encode("utf-8")
    buf += struct.pack("<I", len(cfg)) + cfg
    params = list(params)
    buf += struct.pack("<I", len(params))
    for name, arr in params:
        nb = name.encode("utf-8")
        buf += struct.pack("<H", len(nb)) + nb
        arr = np.asarray(arr)
        buf += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            buf += struct.pack("<I", d)
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    buf += hashlib.sha256(bytes(buf)).digest()[:8]
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path):
    """Returns (config_text, OrderedDict name -> float32 array)."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 + 8:
        raise CheckpointError("checkpoint truncated")
    body, checksum = raw[:-8], raw[-8:]
    if hashlib.sha256(body).digest()[:8] != checksum:
        raise CheckpointError("checkpoint checksum mismatch")
    if body[:4] != MAGIC:
        raise CheckpointError(f"bad magic bytes {body[:4]!r}")
    off = 4
    (version,) = struct.unpack_from("<I", body, off); off += 4
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (clen,) = struct.unpack_from("<I", body, off); off += 4
    config_text = body[off:off + clen].decode("utf-8"); off += clen
    (count,) = struct.unpack_from("<I", body, off); off += 4
    params = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, off); off += 2
        name = body[off:off + nlen].decode("utf-8"); off += nlen
        (ndim,) = struct.unpack_from("<B", body, off); off += 1
        shape = struct.unpack_from(f"<{ndim}I", body, off); off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(body, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        params[name] = arr.astype(np.float32)
    if off != len(body):
        raise CheckpointError("trailing bytes after last parameter record")
    return config_text, params


def save_models(path, G, D, train_cfg):
    from .config import configs_to_text
    params = [("G." + n, t.data) for n, t in G.named_parameters()]
    params += [("D." + n, t.data) for n, t in D.named_parameters()]
    save_checkpoint(path, params, configs_to_text(G.config, D.config, train_cfg))


def load_models(path):
    """Rebuild generator and discriminator from a checkpoint."""
    from .config import configs_from_text
    from .models import Discriminator, GTNet
    config_text, params = load_checkpoint(path)
    gcfg, dcfg, tcfg = configs_from_text(config_text)
    G = GTNet(gcfg, seed=tcfg.seed)
    D = Discriminator(dcfg, seed=tcfg.seed + 1)
    _load_into(G, params, "G.")
    _load_into(D, params, "D.")
    return G, D, tcfg


def _load_into(model, params, prefix):
    for name, t in model.named_parameters():
        key = prefix + name
        if key not in params:
            raise CheckpointError(f"checkpoint missing parameter {key}")
        arr = params[key]
        if arr.shape != t.data.shape:
            raise CheckpointError(
                f"parameter {key} shape {arr.shape} != model shape {t.data.shape}")
        t.data = arr.copy()
