"""Serialization of quantized models.

One file holds a little magic header, a JSON index and a binary blob. Signs
pack 2 bits per weight (little-endian within a byte: 00 zero, 01 plus one,
10 minus one, 11 reserved and rejected on read); scaling factors are
consecutive little-endian float32 values. Offsets in the index address the
blob. Writing is fully deterministic: identical models produce identical
bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError
from .residual import BlockStack, QuantizedLayer, QuantizedModel
from .tensors import BlockView
from .ternary import TernaryLevel

MAGIC = b"TRQ0"
FORMAT_VERSION = 1

_CODE_OF_SIGN = {0: 0, 1: 1, -1: 2}


def pack_signs(signs: np.ndarray) -> bytes:
    """Pack a {-1,0,+1} vector, 4 weights per byte, first weight in low bits."""
    signs = np.asarray(signs, dtype=np.int8)
    codes = np.zeros(signs.size, dtype=np.uint8)
    codes[signs == 1] = 1
    codes[signs == -1] = 2
    pad = (-signs.size) % 4
    if pad:
        codes = np.concatenate([codes, np.zeros(pad, dtype=np.uint8)])
    quads = codes.reshape(-1, 4)
    packed = quads[:, 0] | (quads[:, 1] << 2) | (quads[:, 2] << 4) | (quads[:, 3] << 6)
    return packed.astype(np.uint8).tobytes()


def unpack_signs(payload: bytes, length: int) -> np.ndarray:
    """Inverse of pack_signs; rejects the reserved code 11."""
    if len(payload) != (length + 3) // 4:
        raise FormatError(
            f"sign payload holds {len(payload)} bytes, expected {(length + 3) // 4}"
        )
    raw = np.frombuffer(payload, dtype=np.uint8)
    codes = np.empty((raw.size, 4), dtype=np.uint8)
    codes[:, 0] = raw & 0b11
    codes[:, 1] = (raw >> 2) & 0b11
    codes[:, 2] = (raw >> 4) & 0b11
    codes[:, 3] = (raw >> 6) & 0b11
    codes = codes.reshape(-1)[:length]
    if np.any(codes == 3):
        raise FormatError("sign payload uses the reserved code 0b11")
    signs = np.zeros(length, dtype=np.int8)
    signs[codes == 1] = 1
    signs[codes == 2] = -1
    return signs


def _layer_index_and_blob(layer: QuantizedLayer, blob: bytearray) -> dict:
    scale_offsets = []
    for stack in layer.stacks:
        scale_offsets.append(len(blob))
        for level in stack.levels:
            blob.extend(struct.pack("<f", level.alpha))
    sign_offsets = []
    for stack in layer.stacks:
        sign_offsets.append(len(blob))
        for level in stack.levels:
            blob.extend(pack_signs(level.signs))
    return {
        "name": layer.layer,
        "shape": list(layer.shape),
        "N": layer.block_size,
        "delta": layer.delta,
        "epsilon_sq": layer.epsilon_sq,
        "source_norm_sq": layer.source_norm_sq,
        "exhausted": layer.exhausted,
        "levels_per_block": layer.levels_per_block(),
        "scale_offsets": scale_offsets,
        "sign_offsets": sign_offsets,
    }


def save_quantized(model: QuantizedModel, path) -> None:
    blob = bytearray()
    layers = [_layer_index_and_blob(l, blob) for l in model.layers]
    index = {
        "format_version": FORMAT_VERSION,
        "manifest": model.manifest_doc,
        "provenance": model.provenance,
        "layers": layers,
    }
    encoded = json.dumps(index, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(str(path), "wb") as fp:
        fp.write(MAGIC)
        fp.write(struct.pack("<I", len(encoded)))
        fp.write(encoded)
        fp.write(bytes(blob))


def _read_layer(entry: dict, blob: bytes) -> QuantizedLayer:
    name = entry["name"]
    shape = tuple(int(d) for d in entry["shape"])
    block_size = int(entry["N"])
    size = 1
    for d in shape:
        size *= d
    levels_per_block = [int(c) for c in entry["levels_per_block"]]
    scale_offsets = entry["scale_offsets"]
    sign_offsets = entry["sign_offsets"]
    num_blocks = (size + block_size - 1) // block_size
    if not (len(levels_per_block) == len(scale_offsets) == len(sign_offsets) == num_blocks):
        raise FormatError(f"layer {name!r}: index does not match {num_blocks} blocks")

    stacks = []
    for k in range(num_blocks):
        start = k * block_size
        length = min(block_size, size - start)
        count = levels_per_block[k]
        s_off = int(scale_offsets[k])
        if s_off + 4 * count > len(blob):
            raise FormatError(f"layer {name!r}: truncated scale payload")
        alphas = np.frombuffer(blob, dtype="<f4", count=count, offset=s_off)
        packed_len = (length + 3) // 4
        g_off = int(sign_offsets[k])
        if g_off + packed_len * count > len(blob):
            raise FormatError(f"layer {name!r}: truncated sign payload")
        levels = []
        for t in range(count):
            signs = unpack_signs(
                blob[g_off + t * packed_len : g_off + (t + 1) * packed_len], length
            )
            try:
                levels.append(TernaryLevel(float(alphas[t]), signs))
            except ValueError as exc:
                raise FormatError(f"layer {name!r}: inconsistent level ({exc})") from exc
        stacks.append(BlockStack(BlockView(name, k, start, length), tuple(levels)))

    return QuantizedLayer(
        layer=name,
        shape=shape,
        block_size=block_size,
        stacks=tuple(stacks),
        delta=float(entry["delta"]),
        epsilon_sq=float(entry["epsilon_sq"]),
        source_norm_sq=float(entry["source_norm_sq"]),
        exhausted=bool(entry.get("exhausted", False)),
    )


def load_quantized(path) -> QuantizedModel:
    path = str(path)
    with open(path, "rb") as fp:
        raw = fp.read()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a quantized container")
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header")
    (json_len,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + json_len:
        raise FormatError(f"{path}: truncated index")
    try:
        index = json.loads(raw[8 : 8 + json_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad index ({exc})") from exc
    version = index.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: format_version {version!r}, expected {FORMAT_VERSION}")
    blob = raw[8 + json_len :]
    try:
        layers = tuple(_read_layer(entry, blob) for entry in index["layers"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed layer index ({exc})") from exc
    return QuantizedModel(
        manifest_doc=index.get("manifest") or {},
        layers=layers,
        provenance=index.get("provenance") or {},
    )
