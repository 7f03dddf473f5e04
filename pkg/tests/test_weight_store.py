import json
import struct

import numpy as np
import pytest

from morphscope import weight_store as ws
from morphscope.errors import ArgumentError, CorruptionError, FormatError, SchemaError


def test_default_config_derived_sizes():
    cfg = ws.ViTConfig()
    assert cfg.n_patches == 144
    assert cfg.seq_len == 145
    assert cfg.patch_dim == 3072
    assert cfg.head_dim == 64


def test_total_parameter_count_default_geometry():
    # independently derived from the schema shapes:
    #   patch embed 3072*1024 + 1024, cls 1024, pos 145*1024,
    #   24 blocks * (4*(1024*1024+1024) + 2*1024*4096 + 4096 + 1024
    #                + 4*1024) and the final norm pair
    embed = 3072 * 1024 + 1024 + 1024 + 145 * 1024
    block = 4 * (1024 * 1024 + 1024) + (1024 * 4096 + 4096) + (4096 * 1024 + 1024) + 4 * 1024
    expected = embed + 24 * block + 2 * 1024
    assert expected == 305_607_680
    assert ws.total_parameter_count(ws.ViTConfig()) == expected


def test_schema_order_and_mode_dependence():
    cfg = ws.ViTConfig()
    names = [n for n, _ in ws.schema(cfg)]
    assert names[0] == "embed.patch.weight"
    assert "pos_embed" in names
    assert names[-1] == "final_ln.beta"
    assert len(names) == 4 + 24 * 16 + 2

    sin_cfg = ws.ViTConfig(positional_mode="sinusoidal", final_layer_norm=False)
    sin_names = [n for n, _ in ws.schema(sin_cfg)]
    assert "pos_embed" not in sin_names
    assert "final_ln.gamma" not in sin_names


def test_config_validation_errors():
    with pytest.raises(ArgumentError):
        ws.ViTConfig(image_side=100, patch_side=32)
    with pytest.raises(ArgumentError):
        ws.ViTConfig(hidden_dim=100, heads=16)
    with pytest.raises(ArgumentError):
        ws.ViTConfig(depth=0)
    with pytest.raises(ArgumentError):
        ws.ViTConfig(positional_mode="rotary")


def test_roundtrip_bit_exact(tmp_path, toy_config):
    bundle = ws.random_bundle(toy_config, seed=5)
    path = tmp_path / "w.msw"
    ws.save_weights(bundle, path)
    loaded = ws.load_weights(path)
    assert loaded.config == toy_config
    assert set(loaded.entries) == set(bundle.entries)
    for name, arr in bundle.entries.items():
        assert np.array_equal(arr, loaded.entries[name]), name
    assert not loaded.entries["cls_token"].flags.writeable


def test_file_layout_header_and_alignment(tmp_path, toy_config):
    bundle = ws.random_bundle(toy_config, seed=6)
    path = tmp_path / "w.msw"
    ws.save_weights(bundle, path)
    blob = path.read_bytes()
    assert blob[:4] == b"MSW1"
    (header_len,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8 : 8 + header_len])
    assert header["version"] == ws.FORMAT_VERSION
    table = header["tensors"]
    assert [t["name"] for t in table] == [n for n, _ in ws.schema(toy_config)]
    for t in table:
        assert t["byte_offset"] % ws.ALIGNMENT == 0
    # every toy tensor byte size is already a multiple of the alignment, so
    # the payload is dense and the file size is exactly predictable
    data_start = (8 + header_len + ws.ALIGNMENT - 1) // ws.ALIGNMENT * ws.ALIGNMENT
    assert len(blob) == data_start + 4 * ws.total_parameter_count(toy_config)


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.msw"
    path.write_bytes(b"XXXX" + b"\x00" * 64)
    with pytest.raises(FormatError):
        ws.load_weights(path)


def test_load_rejects_truncation(tmp_path, toy_config):
    bundle = ws.random_bundle(toy_config, seed=8)
    path = tmp_path / "w.msw"
    ws.save_weights(bundle, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 100])
    with pytest.raises(CorruptionError):
        ws.load_weights(path)


def test_load_rejects_missing_tensor(tmp_path, toy_config):
    bundle = ws.random_bundle(toy_config, seed=9)
    path = tmp_path / "w.msw"
    ws.save_weights(bundle, path)
    blob = bytearray(path.read_bytes())
    (header_len,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8 : 8 + header_len])
    dropped = header["tensors"][:-1]
    new_header = json.dumps(
        {"version": header["version"], "config": header["config"], "tensors": dropped},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    path.write_bytes(
        b"MSW1" + struct.pack("<I", len(new_header)) + new_header + bytes(blob[8 + header_len :])
    )
    with pytest.raises(SchemaError, match="missing tensor"):
        ws.load_weights(path)


def test_validate_schema_reports_problems(toy_config):
    bundle = ws.random_bundle(toy_config, seed=10)
    ok = ws.validate_schema(bundle)
    assert ok == []

    del bundle.entries["cls_token"]
    bundle.entries["extra"] = np.zeros(3, np.float32)
    bundle.entries["embed.patch.bias"] = np.zeros(7, np.float32)
    problems = ws.validate_schema(bundle)
    text = "\n".join(problems)
    assert "missing tensor 'cls_token'" in text
    assert "unexpected tensor 'extra'" in text
    assert "embed.patch.bias" in text and "shape" in text


def test_validate_schema_flags_nonfinite(toy_config):
    bundle = ws.random_bundle(toy_config, seed=11)
    bundle.entries["cls_token"] = bundle.entries["cls_token"].copy()
    bundle.entries["cls_token"][0] = np.nan
    problems = ws.validate_schema(bundle)
    assert any("non-finite" in p for p in problems)


def test_save_rejects_invalid_bundle(tmp_path, toy_config):
    bundle = ws.random_bundle(toy_config, seed=12)
    del bundle.entries["final_ln.beta"]
    with pytest.raises(SchemaError):
        ws.save_weights(bundle, tmp_path / "w.msw")
    assert not (tmp_path / "w.msw").exists()


def test_random_bundle_deterministic(toy_config):
    a = ws.random_bundle(toy_config, seed=13)
    b = ws.random_bundle(toy_config, seed=13)
    c = ws.random_bundle(toy_config, seed=14)
    assert all(np.array_equal(a.entries[n], b.entries[n]) for n in a.entries)
    assert any(not np.array_equal(a.entries[n], c.entries[n]) for n in a.entries)
