"""Binary parameter container.

Layout: magic ``b"GIC1"``, one version byte, then named entries until EOF.
Entry: uint16 LE name length, UTF-8 name, uint8 rank, rank uint32 LE dims,
little-endian float64 payload in C order. Everything — parameters, config
scalars (``meta.<field>``), and strings (stored as codepoint arrays) — is a
float64 entry, which keeps the reader a single loop.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"GIC1"
VERSION = 1

_META_STRINGS = ("architecture", "weight_mode", "khop_variant")
_META_INTS = ("num_scales", "num_components", "c_final", "in_dim",
              "num_classes", "seed", "em_restarts")


def _encode_str(s: str) -> np.ndarray:
    return np.array([float(ord(ch)) for ch in s])


def _decode_str(a: np.ndarray) -> str:
    return "".join(chr(int(round(v))) for v in np.asarray(a).ravel())


def save_entries(path, entries: dict) -> None:
    """Write named float64 arrays; iteration order is preserved on disk."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        for name, array in entries.items():
            arr = np.asarray(array, dtype="<f8")  # tobytes() copies in C order
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(bytes([arr.ndim]))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_entries(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 5 or blob[4] != VERSION:
        raise CheckpointError(f"{path}: unsupported container version")
    entries: dict[str, np.ndarray] = {}
    off = 5
    while off < len(blob):
        try:
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + name_len].decode("utf-8")
            off += name_len
            rank = blob[off]
            off += 1
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            array = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
            off += 8 * count
        except (struct.error, ValueError, IndexError) as exc:
            raise CheckpointError(f"{path}: truncated entry near byte {off}") from exc
        if off > len(blob):
            raise CheckpointError(f"{path}: truncated payload for entry {name!r}")
        entries[name] = array.reshape(dims).copy()
    return entries


def save_network(path, network) -> None:
    """Parameters plus enough metadata to rebuild the network."""
    entries: dict[str, np.ndarray] = {}
    meta = {
        "architecture": network.architecture,
        "weight_mode": network.weight_mode,
        "khop_variant": network.khop_variant,
        "num_scales": network.num_scales,
        "num_components": network.num_components,
        "c_final": network.c_final,
        "in_dim": network.in_dim,
        "num_classes": network.num_classes,
        "seed": network.seed,
        "em_restarts": network.em_restarts,
    }
    for key in _META_STRINGS:
        entries[f"meta.{key}"] = _encode_str(meta[key])
    for key in _META_INTS:
        entries[f"meta.{key}"] = np.array(float(meta[key]))
    for name, p in network.parameters().items():
        entries[name] = p.data
    save_entries(path, entries)


def load_network(path):
    from .network import GicNetwork

    entries = load_entries(path)
    try:
        kwargs = {key: _decode_str(entries[f"meta.{key}"])
                  for key in _META_STRINGS}
        kwargs |= {key: int(entries[f"meta.{key}"].item()) for key in _META_INTS}
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing metadata entry {exc}") from exc
    network = GicNetwork(
        kwargs["architecture"], kwargs["in_dim"], kwargs["num_classes"],
        num_scales=kwargs["num_scales"], num_components=kwargs["num_components"],
        c_final=kwargs["c_final"], weight_mode=kwargs["weight_mode"],
        khop_variant=kwargs["khop_variant"], em_restarts=kwargs["em_restarts"],
        seed=kwargs["seed"],
    )
    params = network.parameters()
    for name, p in params.items():
        if name not in entries:
            raise CheckpointError(f"{path}: missing parameter {name!r}")
        if entries[name].shape != p.data.shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {entries[name].shape}, "
                f"network expects {p.data.shape}")
        p.data = entries[name]
    return network
