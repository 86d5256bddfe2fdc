"""Tests for weight initialization and the checksummed container format."""

import struct

import numpy as np
import pytest

from mhaf.config import load_preset
from mhaf.errors import ShapeError, StateError, WeightFileError
from mhaf.graph import assemble
from mhaf.weights import (
    WeightStore,
    crc64_xz,
    init_weights,
    load_weights,
    save_weights,
    validate_store,
)


def crc64_bitwise(data):
    """Reference CRC-64/XZ: reflected polynomial, one bit at a time."""
    poly = 0xC96C5795D7870F42
    crc = 0xFFFFFFFFFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ poly if crc & 1 else crc >> 1
    return crc ^ 0xFFFFFFFFFFFFFFFF


def small_store():
    return init_weights(assemble(load_preset("lite-nano")), seed=0)


def craft_file(path, entries, version=1, count=None, pad=b""):
    """Write a container byte-by-byte, independent of the library's writer."""
    body = bytearray(b"MHWT")
    body += struct.pack("<I", version)
    body += struct.pack("<I", len(entries) if count is None else count)
    for name, values in entries:
        encoded = name.encode("utf-8")
        arr = np.asarray(values, dtype="<f4")
        body += struct.pack("<H", len(encoded))
        body += encoded
        body += struct.pack("<B", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.tobytes()
    body += pad
    body += struct.pack("<Q", crc64_bitwise(bytes(body)))
    path.write_bytes(bytes(body))


class TestChecksum:
    def test_standard_check_value(self):
        assert crc64_xz(b"123456789") == 0x995DC9BBDF1939FA

    def test_empty_input(self):
        assert crc64_xz(b"") == crc64_bitwise(b"")

    def test_matches_bitwise_reference(self):
        rng = np.random.default_rng(7)
        for length in (1, 2, 7, 8, 9, 63, 64, 65, 1000):
            data = rng.integers(0, 256, size=length, dtype=np.uint8).tobytes()
            assert crc64_xz(data) == crc64_bitwise(data)

    def test_sensitive_to_every_byte(self):
        data = bytes(range(64))
        base = crc64_xz(data)
        for i in (0, 31, 63):
            mutated = bytearray(data)
            mutated[i] ^= 0x01
            assert crc64_xz(bytes(mutated)) != base


class TestInitialization:
    def test_same_seed_gives_identical_bytes(self, tmp_path):
        graph = assemble(load_preset("lite-nano"))
        a, b = tmp_path / "a.mhwt", tmp_path / "b.mhwt"
        save_weights(init_weights(graph, seed=11), a)
        save_weights(init_weights(graph, seed=11), b)
        assert a.read_bytes() == b.read_bytes()

    def test_different_seeds_differ(self):
        graph = assemble(load_preset("lite-nano"))
        s0 = init_weights(graph, seed=0)
        s1 = init_weights(graph, seed=1)
        name = "stem.1.conv.weight"
        assert not np.array_equal(s0[name], s1[name])

    def test_bn_entries_start_as_identity(self):
        store = small_store()
        assert np.all(store["stem.1.bn.gamma"] == 1.0)
        assert np.all(store["stem.1.bn.var"] == 1.0)
        assert np.all(store["stem.1.bn.beta"] == 0.0)
        assert np.all(store["stem.1.bn.mean"] == 0.0)

    def test_store_matches_its_graph(self):
        graph = assemble(load_preset("lite-nano"))
        validate_store(graph, init_weights(graph, seed=0))

    def test_store_rejected_against_other_config(self):
        store = small_store()
        other = assemble(load_preset("nano"))
        with pytest.raises((ShapeError, StateError)):
            validate_store(other, store)

    def test_missing_entry_is_named(self):
        graph = assemble(load_preset("lite-nano"))
        store = init_weights(graph, seed=0)
        del store.entries["stem.1.conv.weight"]
        with pytest.raises(ShapeError, match="stem.1.conv.weight"):
            validate_store(graph, store)

    def test_unknown_lookup_raises(self):
        with pytest.raises(StateError, match="no entry"):
            small_store()["nonexistent.weight"]


class TestRoundTrip:
    def test_entries_survive_exactly(self, tmp_path):
        store = small_store()
        path = tmp_path / "w.mhwt"
        save_weights(store, path)
        loaded = load_weights(path)
        assert set(loaded.entries) == set(store.entries)
        for name, arr in store.entries.items():
            assert np.array_equal(loaded.entries[name], arr)
            assert loaded.entries[name].dtype == np.float32

    def test_metadata_survives(self, tmp_path):
        store = small_store()
        path = tmp_path / "w.mhwt"
        save_weights(store, path)
        loaded = load_weights(path)
        assert loaded.form == "training"
        assert loaded.seed == 0
        assert loaded.spec_digest == store.spec_digest

    def test_resave_is_byte_identical(self, tmp_path):
        p1, p2 = tmp_path / "a.mhwt", tmp_path / "b.mhwt"
        save_weights(small_store(), p1)
        save_weights(load_weights(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestDamageDetection:
    def test_flipped_byte_is_caught(self, tmp_path):
        path = tmp_path / "w.mhwt"
        save_weights(small_store(), path)
        raw = bytearray(path.read_bytes())
        for pos in (12, len(raw) // 2, len(raw) - 9):
            damaged = bytearray(raw)
            damaged[pos] ^= 0xFF
            path.write_bytes(bytes(damaged))
            with pytest.raises(WeightFileError, match="checksum"):
                load_weights(path)

    def test_truncation_is_caught(self, tmp_path):
        path = tmp_path / "w.mhwt"
        save_weights(small_store(), path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 100])
        with pytest.raises(WeightFileError):
            load_weights(path)

    def test_wrong_magic_is_caught(self, tmp_path):
        path = tmp_path / "w.mhwt"
        save_weights(small_store(), path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"ONNX"
        path.write_bytes(bytes(raw))
        with pytest.raises(WeightFileError, match="magic"):
            load_weights(path)

    def test_appended_garbage_is_caught(self, tmp_path):
        path = tmp_path / "w.mhwt"
        save_weights(small_store(), path)
        path.write_bytes(path.read_bytes() + b"\x00" * 16)
        with pytest.raises(WeightFileError, match="checksum"):
            load_weights(path)

    def test_tiny_file_is_caught(self, tmp_path):
        path = tmp_path / "w.mhwt"
        path.write_bytes(b"MHWT\x01")
        with pytest.raises(WeightFileError, match="too short"):
            load_weights(path)


class TestFormatContract:
    def test_independently_written_file_loads(self, tmp_path):
        # built with nothing but struct.pack, so reader and writer cannot
        # share a bug
        path = tmp_path / "hand.mhwt"
        craft_file(path, [("w", [[1.5, -2.0], [0.25, 8.0]])])
        store = load_weights(path)
        assert np.array_equal(store.entries["w"], [[1.5, -2.0], [0.25, 8.0]])

    def test_duplicate_entry_rejected(self, tmp_path):
        path = tmp_path / "dup.mhwt"
        craft_file(path, [("w", [1.0]), ("w", [2.0])])
        with pytest.raises(WeightFileError, match="duplicate"):
            load_weights(path)

    def test_unsupported_version_rejected(self, tmp_path):
        path = tmp_path / "v9.mhwt"
        craft_file(path, [("w", [1.0])], version=9)
        with pytest.raises(WeightFileError, match="version 9"):
            load_weights(path)

    def test_undeclared_trailing_entry_rejected(self, tmp_path):
        path = tmp_path / "extra.mhwt"
        craft_file(path, [("w", [1.0])], pad=b"\x00" * 11)
        with pytest.raises(WeightFileError, match="trailing"):
            load_weights(path)

    def test_library_file_parses_with_plain_struct(self, tmp_path):
        # decode the library's own output with an independent reader
        path = tmp_path / "w.mhwt"
        store = WeightStore(entries={"a.weight": np.arange(6, dtype=np.float32).reshape(2, 3)})
        save_weights(store, path)
        raw = path.read_bytes()
        assert raw[:4] == b"MHWT"
        version, count = struct.unpack_from("<II", raw, 4)
        assert version == 1
        assert count == 2  # metadata entry plus the payload entry
        (stated,) = struct.unpack("<Q", raw[-8:])
        assert stated == crc64_bitwise(raw[:-8])
        offset = 12
        seen = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", raw, offset)
            offset += 4 * rank
            n = int(np.prod(dims)) if dims else 1
            seen[name] = np.frombuffer(raw, "<f4", count=n, offset=offset).reshape(dims)
            offset += 4 * n
        assert offset == len(raw) - 8
        assert np.array_equal(seen["a.weight"], store.entries["a.weight"])

    def test_overlong_name_rejected_at_save(self, tmp_path):
        store = WeightStore(entries={"x" * 70_000: np.zeros(1, dtype=np.float32)})
        with pytest.raises(WeightFileError, match="name too long"):
            save_weights(store, tmp_path / "bad.mhwt")
