"""Encoder weight container and its binary file format.

A :class:`WeightBundle` holds every tensor of one vision-transformer encoder
under canonical names, together with the :class:`ViTConfig` describing the
geometry.  Bundles serialize to a single ``.msw`` file:

    bytes 0..3    magic ``MSW1``
    bytes 4..7    header length L, unsigned 32-bit little endian
    bytes 8..8+L  UTF-8 JSON header: format version, config, tensor table
    payload       raw little-endian float32 tensor data

Each tensor table entry records name, shape and ``byte_offset``.  Offsets
are relative to the start of the data section, which begins at the first
64-byte-aligned file offset after the header; every tensor offset is itself
64-byte aligned.  Tensors appear in canonical schema order.

Canonical tensor names for a config with depth D:

    embed.patch.weight        [patch_dim, hidden]
    embed.patch.bias          [hidden]
    cls_token                 [hidden]
    pos_embed                 [seq_len, hidden]     (learned mode only)
    blocks.<l>.ln1.gamma      [hidden]              l in 0..D-1
    blocks.<l>.ln1.beta       [hidden]
    blocks.<l>.attn.q.weight  [hidden, hidden]
    blocks.<l>.attn.q.bias    [hidden]
    (same for k, v, out)
    blocks.<l>.ln2.gamma      [hidden]
    blocks.<l>.ln2.beta       [hidden]
    blocks.<l>.mlp.fc1.weight [hidden, mlp_dim]
    blocks.<l>.mlp.fc1.bias   [mlp_dim]
    blocks.<l>.mlp.fc2.weight [mlp_dim, hidden]
    blocks.<l>.mlp.fc2.bias   [hidden]
    final_ln.gamma            [hidden]              (final_layer_norm only)
    final_ln.beta             [hidden]

Weight matrices are stored so the consumer computes ``x @ W``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, CorruptionError, FormatError, SchemaError

MAGIC = b"MSW1"
FORMAT_VERSION = 1
ALIGNMENT = 64

POSITIONAL_MODES = ("learned", "sinusoidal")


@dataclass(frozen=True)
class ViTConfig:
    """Geometry and structural switches of one encoder."""

    image_side: int = 384
    patch_side: int = 32
    hidden_dim: int = 1024
    depth: int = 24
    heads: int = 16
    mlp_dim: int = 4096
    positional_mode: str = "learned"
    final_layer_norm: bool = True

    def __post_init__(self):
        for name in ("image_side", "patch_side", "hidden_dim", "depth", "heads", "mlp_dim"):
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ArgumentError(f"config {name} must be a positive integer, got {v!r}")
        if self.image_side % self.patch_side != 0:
            raise ArgumentError(
                f"image_side {self.image_side} is not divisible by patch_side {self.patch_side}"
            )
        if self.hidden_dim % self.heads != 0:
            raise ArgumentError(
                f"hidden_dim {self.hidden_dim} is not divisible by heads {self.heads}"
            )
        if self.positional_mode not in POSITIONAL_MODES:
            raise ArgumentError(
                f"positional_mode must be one of {POSITIONAL_MODES}, got {self.positional_mode!r}"
            )
        if not isinstance(self.final_layer_norm, bool):
            raise ArgumentError("final_layer_norm must be a bool")

    @property
    def grid_side(self) -> int:
        return self.image_side // self.patch_side

    @property
    def n_patches(self) -> int:
        return self.grid_side * self.grid_side

    @property
    def seq_len(self) -> int:
        return self.n_patches + 1

    @property
    def patch_dim(self) -> int:
        return self.patch_side * self.patch_side * 3

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.heads

    def to_dict(self) -> dict:
        return {
            "image_side": self.image_side,
            "patch_side": self.patch_side,
            "hidden_dim": self.hidden_dim,
            "depth": self.depth,
            "heads": self.heads,
            "mlp_dim": self.mlp_dim,
            "positional_mode": self.positional_mode,
            "final_layer_norm": self.final_layer_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ViTConfig":
        known = {f for f in cls.__dataclass_fields__}
        bad = set(d) - known
        if bad:
            raise SchemaError(f"unknown config fields: {sorted(bad)}")
        return cls(**d)


def schema(config: ViTConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical ordered list of (tensor name, shape) for ``config``."""
    h = config.hidden_dim
    entries: list[tuple[str, tuple[int, ...]]] = [
        ("embed.patch.weight", (config.patch_dim, h)),
        ("embed.patch.bias", (h,)),
        ("cls_token", (h,)),
    ]
    if config.positional_mode == "learned":
        entries.append(("pos_embed", (config.seq_len, h)))
    for layer in range(config.depth):
        p = f"blocks.{layer}"
        entries.append((f"{p}.ln1.gamma", (h,)))
        entries.append((f"{p}.ln1.beta", (h,)))
        for proj in ("q", "k", "v", "out"):
            entries.append((f"{p}.attn.{proj}.weight", (h, h)))
            entries.append((f"{p}.attn.{proj}.bias", (h,)))
        entries.append((f"{p}.ln2.gamma", (h,)))
        entries.append((f"{p}.ln2.beta", (h,)))
        entries.append((f"{p}.mlp.fc1.weight", (h, config.mlp_dim)))
        entries.append((f"{p}.mlp.fc1.bias", (config.mlp_dim,)))
        entries.append((f"{p}.mlp.fc2.weight", (config.mlp_dim, h)))
        entries.append((f"{p}.mlp.fc2.bias", (h,)))
    if config.final_layer_norm:
        entries.append(("final_ln.gamma", (h,)))
        entries.append(("final_ln.beta", (h,)))
    return entries


def total_parameter_count(config: ViTConfig) -> int:
    """Number of scalar parameters in the canonical schema for ``config``."""
    return sum(int(np.prod(shape)) for _, shape in schema(config))


@dataclass
class WeightBundle:
    """One encoder's tensors plus the config they belong to."""

    config: ViTConfig
    entries: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.entries[name]
        except KeyError:
            raise SchemaError(f"bundle has no tensor named {name!r}") from None


def validate_schema(bundle: WeightBundle, config: ViTConfig | None = None) -> list[str]:
    """Check ``bundle`` against the canonical schema.

    Returns a list of human-readable violation strings; an empty list means
    the bundle is valid.  Violations cover missing tensors, extra tensors,
    shape mismatches and non-finite values.
    """
    cfg = config if config is not None else bundle.config
    expected = dict(schema(cfg))
    problems: list[str] = []
    for name, shape in expected.items():
        if name not in bundle.entries:
            problems.append(f"missing tensor {name!r} (expected shape {shape})")
            continue
        arr = bundle.entries[name]
        if tuple(arr.shape) != shape:
            problems.append(
                f"tensor {name!r} has shape {tuple(arr.shape)}, expected {shape}"
            )
        elif not np.isfinite(arr).all():
            problems.append(f"tensor {name!r} contains non-finite values")
    for name in bundle.entries:
        if name not in expected:
            problems.append(f"unexpected tensor {name!r}")
    return problems


def _aligned(offset: int) -> int:
    return (offset + ALIGNMENT - 1) // ALIGNMENT * ALIGNMENT


def save_weights(bundle: WeightBundle, path) -> None:
    """Write ``bundle`` to ``path`` in the MSW1 container format.

    The bundle must validate against its own config; an invalid bundle is
    rejected before any bytes are written.
    """
    problems = validate_schema(bundle)
    if problems:
        raise SchemaError("refusing to save invalid bundle: " + "; ".join(problems))

    order = schema(bundle.config)
    table = []
    offset = 0
    for name, shape in order:
        offset = _aligned(offset)
        table.append({"name": name, "shape": list(shape), "byte_offset": offset})
        offset += int(np.prod(shape)) * 4
    header = {
        "version": bundle.version,
        "config": bundle.config.to_dict(),
        "tensors": table,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        data_start = _aligned(8 + len(header_bytes))
        fh.write(b"\x00" * (data_start - 8 - len(header_bytes)))
        written = 0
        for entry in table:
            pad = entry["byte_offset"] - written
            if pad:
                fh.write(b"\x00" * pad)
                written += pad
            raw = np.ascontiguousarray(
                bundle.entries[entry["name"]], dtype="<f4"
            ).tobytes()
            fh.write(raw)
            written += len(raw)


def load_weights(path) -> WeightBundle:
    """Read an MSW1 file and return a validated, read-only WeightBundle."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: not an MSW1 weight file (bad magic)")
    (header_len,) = struct.unpack("<I", blob[4:8])
    if 8 + header_len > len(blob):
        raise CorruptionError(f"{path}: header length {header_len} exceeds file size")
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: header is not valid JSON ({exc})") from exc

    for key in ("version", "config", "tensors"):
        if key not in header:
            raise SchemaError(f"{path}: header is missing {key!r}")
    config = ViTConfig.from_dict(header["config"])
    data_start = _aligned(8 + header_len)

    entries: dict[str, np.ndarray] = {}
    for item in header["tensors"]:
        name = item["name"]
        shape = tuple(int(s) for s in item["shape"])
        off = data_start + int(item["byte_offset"])
        nbytes = int(np.prod(shape)) * 4
        if off + nbytes > len(blob):
            raise CorruptionError(
                f"{path}: tensor {name!r} extends past end of file "
                f"(needs {off + nbytes} bytes, file has {len(blob)})"
            )
        arr = np.frombuffer(blob, dtype="<f4", count=int(np.prod(shape)), offset=off)
        arr = arr.reshape(shape)
        entries[name] = arr  # view on immutable bytes: read-only by construction

    bundle = WeightBundle(config=config, entries=entries, version=int(header["version"]))
    problems = validate_schema(bundle)
    if problems:
        raise SchemaError(f"{path}: " + "; ".join(problems))
    return bundle


def random_bundle(config: ViTConfig, seed: int = 0, scale: float = 0.02) -> WeightBundle:
    """Synthesize a valid bundle with N(0, scale^2) weights.

    Layer-norm gains are set to 1 and shifts to 0 so the encoder stays
    well conditioned; everything else is gaussian noise.  Deterministic for
    a fixed seed.
    """
    rng = np.random.default_rng(seed)
    entries: dict[str, np.ndarray] = {}
    for name, shape in schema(config):
        if name.endswith(".gamma"):
            arr = np.ones(shape, dtype=np.float32)
        elif name.endswith(".beta") or name.endswith(".bias"):
            arr = np.zeros(shape, dtype=np.float32)
        else:
            arr = rng.normal(0.0, scale, size=shape).astype(np.float32)
        entries[name] = arr
    return WeightBundle(config=config, entries=entries)
