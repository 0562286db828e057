"""Binary checkpoint format "SPSN1".

Layout: magic bytes, u32-length canonical config JSON, u32 record count,
then per-array records (u32 name length, name utf-8, u32 rank, u32 dims,
little-endian float32 payload). Loading restores bit-identical float32
parameters and validates structural config compatibility, including the
resolution binding of the reliance network.
"""

import io
import struct

import numpy as np

from .config import Config

MAGIC = b"SPSN1"

# keys that change parameter shapes or semantics; they must match on load
STRUCTURAL_KEYS = ("image_size", "n_superpixels", "a_k", "encoder_widths", "n_heads")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, store, config):
    buf = io.BytesIO()
    buf.write(MAGIC)
    cfg = config.to_json().encode()
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    arrays = store.named_arrays()
    buf.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<I", d))
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path, store=None, expected_config=None):
    """Read a checkpoint; optionally load into `store` and check `expected_config`.

    Returns (config, arrays). Nothing is written into `store` unless the
    whole file parses, so a corrupt file never leaves partial state.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"bad magic bytes {magic!r}; not an SPSN1 checkpoint")
        (cfg_len,) = struct.unpack("<I", _read(fh, 4, "config length"))
        try:
            config = Config.from_json(_read(fh, cfg_len, "config").decode())
        except (ValueError, UnicodeDecodeError) as exc:
            raise CheckpointError(f"invalid config block: {exc}") from exc
        (count,) = struct.unpack("<I", _read(fh, 4, "record count"))
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read(fh, 4, "name length"))
            name = _read(fh, name_len, "name").decode()
            (rank,) = struct.unpack("<I", _read(fh, 4, "rank"))
            shape = tuple(struct.unpack("<I", _read(fh, 4, "dims"))[0] for _ in range(rank))
            n_items = int(np.prod(shape, dtype=np.int64)) if shape else 1
            payload = _read(fh, 4 * n_items, f"payload of {name}")
            arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError("trailing bytes after last record")

    if expected_config is not None:
        for key in STRUCTURAL_KEYS:
            a, b = getattr(config, key), getattr(expected_config, key)
            if a != b:
                raise CheckpointError(
                    f"checkpoint/config mismatch on {key}: checkpoint has {a}, requested {b}")
    if store is not None:
        store.load_arrays(arrays)
    return config, arrays
