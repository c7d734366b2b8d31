"""Task-boundary checkpoints.

Layout: ``MAGIC`` (8 bytes), format version (1 byte), little-endian uint32
length of a UTF-8 JSON header, the header, then an ``.npz`` archive holding
every array.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .seeding import rng_for

MAGIC = b"FWDPCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(header, arrays):
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    head = json.dumps(header, sort_keys=True).encode()
    return MAGIC + bytes([FORMAT_VERSION]) + struct.pack("<I", len(head)) + head + buf.getvalue()


def decode_checkpoint(blob):
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic header)")
    version = blob[8]
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    (n,) = struct.unpack("<I", blob[9:13])
    header = json.loads(blob[13:13 + n].decode())
    with np.load(io.BytesIO(blob[13 + n:]), allow_pickle=False) as npz:
        arrays = {k: npz[k] for k in npz.files}
    return header, arrays


def save_checkpoint(directory, task, method, model, pool, ledger, cfg):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {"adapter": model.adapter}
    arrays.update({f"frozen.{k}": v for k, v in model.weights.arrays().items()})
    if pool is not None:
        arrays.update({f"pool.{k}": v for k, v in pool.state().items()})
    # the next epoch's order generator is everything needed to resume the sample stream
    rng_state = rng_for(cfg.seed, "order", task + 1, 0).bit_generator.state
    header = {
        "task": task,
        "method": method.value,
        "config": cfg.to_dict(),
        "ledger": ledger.to_dict() if ledger is not None else None,
        "frozen_digest": model.weights.digest(),
        "rng_state": {k: (str(v) if k == "state" else v) for k, v in rng_state.items()},
    }
    path = directory / f"task_{task:03d}.ckpt"
    path.write_bytes(encode_checkpoint(header, arrays))
    return path


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())
