"""Named tensor-block checkpoints.

Layout (little-endian)::

    magic     4 bytes  b"DYNC"
    version   u16
    meta_len  u32, then UTF-8 JSON (sorted keys): config, cardinalities, step, ...
    n_blocks  u32
    block:    name_len u16, name (UTF-8), ndim u8, dims u64 * ndim,
              float64 data in row-major order

Parameter blocks use the model's names (``embed.0``, ``pin.W.1``,
``gen.0.hidden.W``, ``out.b``); optimizer state blocks are prefixed
``opt.<param>.<slot>``.
"""

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DYNC"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable checkpoint, or one that does not match the expected model."""


def write_blocks(path, blocks, meta):
    parts = [MAGIC, struct.pack("<H", VERSION)]
    payload = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(payload)))
    parts.append(payload)
    parts.append(struct.pack("<I", len(blocks)))
    for name in sorted(blocks):
        arr = np.ascontiguousarray(blocks[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_blocks(path):
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a DYNC checkpoint")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    (meta_len,) = struct.unpack_from("<I", data, 6)
    off = 10
    meta = json.loads(data[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    blocks = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        blocks[name] = np.frombuffer(data, "<f8", size, off).reshape(shape).astype(np.float64)
        off += 8 * size
    return blocks, meta


def save_model(path, model, optimizers=None, extra=None):
    from dataclasses import asdict

    meta = {"config": asdict(model.config), "cardinalities": list(model.cardinalities)}
    meta.update(extra or {})
    blocks = dict(model.params)
    for pname, opt in (optimizers or {}).items():
        for slot, arr in opt.state().items():
            blocks[f"opt.{pname}.{slot}"] = arr
    write_blocks(path, blocks, meta)


def load_model(path, cardinalities=None):
    """Rebuild a :class:`~dynint.model.DynIntModel` from a checkpoint.

    Returns ``(model, optimizer_state, meta)`` where ``optimizer_state`` maps
    parameter names to their slot dicts.
    """
    from .model import DynIntModel, TrainConfig

    blocks, meta = read_blocks(path)
    cards = tuple(meta["cardinalities"])
    if cardinalities is not None and tuple(cardinalities) != cards:
        raise CheckpointError(
            f"checkpoint cardinalities {cards} do not match data {tuple(cardinalities)}")
    model = DynIntModel(TrainConfig(**meta["config"]), cards)
    missing = [k for k in model.params if k not in blocks]
    if missing:
        raise CheckpointError(f"checkpoint lacks parameter blocks {missing}")
    for name, arr in model.params.items():
        if blocks[name].shape != arr.shape:
            raise CheckpointError(f"{name}: shape {blocks[name].shape} != model {arr.shape}")
        arr[...] = blocks[name]
    opt_state = {}
    for key, arr in blocks.items():
        if key.startswith("opt."):
            pname, slot = key[4:].rsplit(".", 1)
            opt_state.setdefault(pname, {})[slot] = arr
    return model, opt_state, meta
