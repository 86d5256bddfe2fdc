"""Weight storage: deterministic initialization, binding flat arrays into
the structured forms the block functions consume, and a checksummed binary
container.

Container layout (all integers little-endian):

* magic ``MHWT``, u32 version (currently 1), u32 entry count;
* per entry: u16 name length, UTF-8 name, u8 rank, u32 dims, raw float32
  payload;
* trailing u64 CRC-64/XZ checksum of every preceding byte.

Store-level metadata (form, seed, config digest) rides along as a reserved
entry named ``__meta__`` whose payload encodes a UTF-8 string one byte per
float, keeping the container format uniform.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .blocks import (
    AAFWeights,
    ConvUnit,
    ConvUnitSpec,
    MixerSpec,
    SAFWeights,
    rephms_from_units,
)
from .errors import ShapeError, StateError, WeightFileError
from .graph import ModelGraph, Node, graph_param_entries, node_slots
from .reparam import RepHConvWeights
from .tensor import BNParams, ConvKernel

__all__ = [
    "WeightStore",
    "init_weights",
    "validate_store",
    "bind_node_weights",
    "save_weights",
    "load_weights",
    "crc64_xz",
]

META_ENTRY = "__meta__"
MAGIC = b"MHWT"
VERSION = 1


@dataclass
class WeightStore:
    """Flat name -> float32 array mapping plus provenance metadata."""

    entries: dict[str, np.ndarray] = field(default_factory=dict)
    form: str = "training"
    seed: int | None = None
    spec_digest: str | None = None

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.entries[name]
        except KeyError:
            raise StateError(f"weight store has no entry '{name}'") from None


def init_weights(graph: ModelGraph, seed: int = 0) -> WeightStore:
    """Deterministically initialize every entry the graph expects.

    Conv weights draw from a fan-in-scaled normal (std ``sqrt(2 / fan_in)``),
    biases start at zero, BN starts as the identity transform.  Entries are
    drawn in graph order from a single seeded generator, so equal seeds give
    byte-identical stores.
    """
    rng = np.random.default_rng(seed)
    store = WeightStore(
        form=graph.form, seed=seed, spec_digest=graph.meta.get("spec_hash")
    )
    for entry in graph_param_entries(graph):
        if entry.kind == "conv_weight":
            fan_in = entry.shape[1] * entry.shape[2] * entry.shape[3]
            arr = rng.standard_normal(entry.shape) * np.sqrt(2.0 / fan_in)
            arr = arr.astype(np.float32)
        elif entry.kind == "conv_bias":
            arr = np.zeros(entry.shape, dtype=np.float32)
        elif entry.kind in ("bn_gamma", "bn_var"):
            arr = np.ones(entry.shape, dtype=np.float32)
        elif entry.kind in ("bn_beta", "bn_mean"):
            arr = np.zeros(entry.shape, dtype=np.float32)
        else:
            raise StateError(f"unknown entry kind '{entry.kind}'")
        store.entries[entry.name] = arr
    return store


def validate_store(graph: ModelGraph, store: WeightStore) -> None:
    """Check that a store matches a graph: same form, same config digest
    (when both are known), and exactly the expected entry names/shapes."""
    if store.form != graph.form:
        raise StateError(
            f"store is in {store.form} form but the graph is {graph.form}"
        )
    digest = graph.meta.get("spec_hash")
    if digest and store.spec_digest and digest != store.spec_digest:
        raise StateError(
            f"store was created for config {store.spec_digest}, graph is {digest}"
        )
    expected = {e.name: e.shape for e in graph_param_entries(graph)}
    got = {name: arr.shape for name, arr in store.entries.items()}
    if expected != got:
        missing = sorted(set(expected) - set(got))[:3]
        extra = sorted(set(got) - set(expected))[:3]
        wrong = sorted(
            n for n in set(expected) & set(got) if expected[n] != got[n]
        )[:3]
        raise ShapeError(
            "weight store does not match graph: "
            f"missing={missing} unexpected={extra} wrong-shape={wrong}"
        )


# ---------------------------------------------------------------------------
# binding flat entries into structured block weights


def _bind_unit(store: WeightStore, prefix: str, slot: ConvUnitSpec, form: str) -> ConvUnit:
    weights = store[f"{prefix}.conv.weight"]
    if form == "deployed":
        kernel = ConvKernel(
            weights=weights,
            bias=store[f"{prefix}.conv.bias"],
            stride=slot.stride,
            groups=slot.groups,
        )
        return ConvUnit(kernel=kernel, bn=None, act=slot.act)
    kernel = ConvKernel(weights=weights, stride=slot.stride, groups=slot.groups)
    bn = BNParams(
        mean=store[f"{prefix}.bn.mean"],
        var=store[f"{prefix}.bn.var"],
        gamma=store[f"{prefix}.bn.gamma"],
        beta=store[f"{prefix}.bn.beta"],
    )
    return ConvUnit(kernel=kernel, bn=bn, act=slot.act)


def _bind_mixer(store: WeightStore, prefix: str, mixer: MixerSpec, form: str) -> RepHConvWeights:
    spec = mixer.spec
    if form == "deployed":
        fused = ConvKernel(
            weights=store[f"{prefix}.fused.weight"],
            bias=store[f"{prefix}.fused.bias"],
            stride=1,
            groups=spec.channels,
        )
        return RepHConvWeights(spec=spec, fused=fused)
    branches = []
    for k in spec.all_kernels:
        kernel = ConvKernel(
            weights=store[f"{prefix}.k{k}.conv.weight"], stride=1, groups=spec.channels
        )
        bn = BNParams(
            mean=store[f"{prefix}.k{k}.bn.mean"],
            var=store[f"{prefix}.k{k}.bn.var"],
            gamma=store[f"{prefix}.k{k}.bn.gamma"],
            beta=store[f"{prefix}.k{k}.bn.beta"],
        )
        branches.append((kernel, bn))
    return RepHConvWeights(spec=spec, branches=branches)


def bind_node_weights(node: Node, store: WeightStore, form: str):
    """Materialize the structured weights of one graph node from the flat
    store.  Returns an object matching the node kind (ConvKernel, BNParams,
    RepHMSWeights, SAFWeights, AAFWeights) or None for weightless kinds."""
    if node.kind == "conv":
        a = node.attrs
        bias = store[f"{node.name}.bias"] if a.get("bias") else None
        return ConvKernel(
            weights=store[f"{node.name}.weight"],
            bias=bias,
            stride=a["stride"],
            groups=a["groups"],
        )
    if node.kind == "bn":
        return BNParams(
            mean=store[f"{node.name}.mean"],
            var=store[f"{node.name}.var"],
            gamma=store[f"{node.name}.gamma"],
            beta=store[f"{node.name}.beta"],
        )
    if node.kind == "rephms":
        from .graph import _rephms_spec

        units = {}
        for slot in node_slots(node):
            prefix = f"{node.name}.{slot.path}"
            if isinstance(slot, MixerSpec):
                units[slot.path] = _bind_mixer(store, prefix, slot, form)
            else:
                units[slot.path] = _bind_unit(store, prefix, slot, form)
        return rephms_from_units(_rephms_spec(node), units)
    if node.kind == "saf":
        slots = {s.path: s for s in node_slots(node)}
        ctrl = None
        if "ctrl" in slots:
            ctrl = _bind_unit(store, f"{node.name}.ctrl", slots["ctrl"], form)
        return SAFWeights(ctrl=ctrl)
    if node.kind == "aaf":
        slots = {s.path: s for s in node_slots(node)}
        down = ctrl = None
        if "down" in slots:
            down = _bind_unit(store, f"{node.name}.down", slots["down"], form)
        if "ctrl" in slots:
            ctrl = _bind_unit(store, f"{node.name}.ctrl", slots["ctrl"], form)
        return AAFWeights(down=down, ctrl=ctrl)
    return None


# ---------------------------------------------------------------------------
# CRC-64/XZ


def _build_tables() -> list[list[int]]:
    poly = 0xC96C5795D7870F42
    first = []
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ poly if crc & 1 else crc >> 1
        first.append(crc)
    tables = [first]
    for _ in range(7):
        prev = tables[-1]
        tables.append([first[c & 0xFF] ^ (c >> 8) for c in prev])
    return tables


_TABLES = _build_tables()
_MASK = 0xFFFFFFFFFFFFFFFF


def crc64_xz(data: bytes) -> int:
    """CRC-64/XZ (reflected, poly 0x42F0E1EBA9EA3693, init/xorout all-ones).

    Slice-by-8 implementation; the check value of b"123456789" is
    0x995DC9BBDF1939FA.
    """
    t0, t1, t2, t3, t4, t5, t6, t7 = _TABLES
    crc = _MASK
    n8 = len(data) - len(data) % 8
    if n8:
        words = np.frombuffer(data[:n8], dtype="<u8").tolist()
        for word in words:
            crc ^= word
            crc = (
                t7[crc & 0xFF]
                ^ t6[(crc >> 8) & 0xFF]
                ^ t5[(crc >> 16) & 0xFF]
                ^ t4[(crc >> 24) & 0xFF]
                ^ t3[(crc >> 32) & 0xFF]
                ^ t2[(crc >> 40) & 0xFF]
                ^ t1[(crc >> 48) & 0xFF]
                ^ t0[(crc >> 56) & 0xFF]
            )
    for b in data[n8:]:
        crc = t0[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ _MASK


# ---------------------------------------------------------------------------
# binary container


def _encode_meta(store: WeightStore) -> np.ndarray:
    text = (
        f"form={store.form};seed={'none' if store.seed is None else store.seed};"
        f"spec={store.spec_digest or 'none'}"
    )
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def _decode_meta(arr: np.ndarray, store: WeightStore) -> None:
    text = bytes(arr.astype(np.uint8).tolist()).decode("utf-8", errors="replace")
    for part in text.split(";"):
        key, _, value = part.partition("=")
        if key == "form":
            store.form = value
        elif key == "seed":
            store.seed = None if value == "none" else int(value)
        elif key == "spec":
            store.spec_digest = None if value == "none" else value


def _pack_entry(buf: bytearray, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise WeightFileError(f"entry name too long: {name[:40]}...")
    buf += struct.pack("<H", len(encoded))
    buf += encoded
    if arr.ndim > 0xFF:
        raise WeightFileError(f"entry rank {arr.ndim} exceeds format limit")
    buf += struct.pack("<B", arr.ndim)
    buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
    buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_weights(store: WeightStore, path: str) -> None:
    """Write the store to the binary container (metadata entry first, then
    data entries in insertion order, then the checksum)."""
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    buf += struct.pack("<I", len(store.entries) + 1)
    _pack_entry(buf, META_ENTRY, _encode_meta(store))
    for name, arr in store.entries.items():
        _pack_entry(buf, name, arr)
    buf += struct.pack("<Q", crc64_xz(bytes(buf)))
    with open(path, "wb") as fh:
        fh.write(buf)


def load_weights(path: str) -> WeightStore:
    """Read a container, verifying the checksum before trusting any entry."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 4 + 4 + 8:
        raise WeightFileError(f"'{path}' is too short to be a weight file")
    if raw[:4] != MAGIC:
        raise WeightFileError(f"'{path}' lacks the weight-file magic")
    body, trailer = raw[:-8], raw[-8:]
    (stated,) = struct.unpack("<Q", trailer)
    actual = crc64_xz(body)
    if stated != actual:
        raise WeightFileError(
            f"checksum mismatch in '{path}': stored {stated:016x}, "
            f"computed {actual:016x}"
        )
    (version,) = struct.unpack_from("<I", body, 4)
    if version != VERSION:
        raise WeightFileError(f"unsupported weight-file version {version}")
    (count,) = struct.unpack_from("<I", body, 8)
    offset = 12
    store = WeightStore(entries={})
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, offset)
            offset += 2
            name = body[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", body, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", body, offset)
            offset += 4 * rank
            n = 1
            for d in dims:
                n *= d
            arr = np.frombuffer(body, dtype="<f4", count=n, offset=offset).reshape(dims)
            offset += 4 * n
            if name == META_ENTRY:
                _decode_meta(arr, store)
            elif name in store.entries:
                raise WeightFileError(f"duplicate entry '{name}' in '{path}'")
            else:
                store.entries[name] = np.ascontiguousarray(arr, dtype=np.float32)
    except (struct.error, ValueError) as exc:
        raise WeightFileError(f"'{path}' is truncated or malformed: {exc}") from exc
    if offset != len(body):
        raise WeightFileError(
            f"'{path}' carries {len(body) - offset} trailing bytes past the "
            f"declared {count} entries"
        )
    return store
