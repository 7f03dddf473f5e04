"""Vision-transformer encoder forward pass and the feature cache format.

The encoder consumes a normalized square image tensor, cuts it into
non-overlapping patches, projects each patch linearly, prepends a learned
class token, adds positional information and runs a stack of pre-norm
transformer blocks:

    z'  = z  + MSA(LN1(z))
    out = z' + MLP(LN2(z'))          MLP(x) = fc2(gelu(fc1(x)))

The feature of an image is the class-token row after the last block (and
the final layer norm when the config enables it).

Feature vectors batch-serialize to ``.msf`` files:

    magic ``MSF1`` | u32 count | u32 dim |
    count records of ( u32 id_length | UTF-8 image id | dim float32 LE )
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .errors import CorruptionError, FormatError, ShapeError
from .weight_store import ViTConfig, WeightBundle

FEATURE_MAGIC = b"MSF1"


@dataclass
class FeatureVector:
    """CLS-token embedding of one image."""

    image_id: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 1:
            raise ShapeError(
                f"feature vector must be 1-D, got shape {self.values.shape}"
            )


def patchify(image: np.ndarray, patch_side: int) -> np.ndarray:
    """Cut a square (side, side, 3) image into flattened patch rows.

    Patches are ordered row-major over the patch grid; within a patch the
    pixels flatten in row, column, channel order.  Output shape is
    (n_patches, patch_side * patch_side * 3).
    """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected (side, side, 3) image, got shape {image.shape}")
    side = image.shape[0]
    if image.shape[1] != side:
        raise ShapeError(f"image must be square, got {image.shape[0]}x{image.shape[1]}")
    if side % patch_side != 0:
        raise ShapeError(
            f"image side {side} is not divisible by patch side {patch_side}"
        )
    g = side // patch_side
    patches = image.reshape(g, patch_side, g, patch_side, 3)
    patches = patches.transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(patches.reshape(g * g, patch_side * patch_side * 3))


def sinusoidal_positions(seq_len: int, dim: int) -> np.ndarray:
    """Fixed sin/cos positional table of shape (seq_len, dim).

    Channel pair 2i holds sin(pos / 10000^(2i/dim)) and channel 2i+1 the
    cosine at the same frequency.  ``dim`` must be even.
    """
    if dim % 2 != 0:
        raise ShapeError(f"sinusoidal positions need an even dim, got {dim}")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    table = np.zeros((seq_len, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table.astype(np.float32)


def embed(patches: np.ndarray, bundle: WeightBundle) -> np.ndarray:
    """Project patches, prepend the class token, add positions.

    Returns the (seq_len, hidden) token matrix ``z0``.
    """
    cfg = bundle.config
    if patches.shape != (cfg.n_patches, cfg.patch_dim):
        raise ShapeError(
            f"expected {cfg.n_patches} patches of dim {cfg.patch_dim}, "
            f"got shape {patches.shape}"
        )
    projected = tc.matmul(patches, bundle["embed.patch.weight"])
    projected = projected + bundle["embed.patch.bias"]
    tokens = np.empty((cfg.seq_len, cfg.hidden_dim), dtype=np.float32)
    tokens[0] = bundle["cls_token"]
    tokens[1:] = projected
    if cfg.positional_mode == "learned":
        tokens = tokens + bundle["pos_embed"]
    else:
        tokens = tokens + sinusoidal_positions(cfg.seq_len, cfg.hidden_dim)
    return tokens


@dataclass(frozen=True)
class LayerParams:
    """Weight views for one encoder block."""

    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    q_w: np.ndarray
    q_b: np.ndarray
    k_w: np.ndarray
    k_b: np.ndarray
    v_w: np.ndarray
    v_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray

    @classmethod
    def from_bundle(cls, bundle: WeightBundle, layer: int) -> "LayerParams":
        p = f"blocks.{layer}"
        return cls(
            ln1_gamma=bundle[f"{p}.ln1.gamma"],
            ln1_beta=bundle[f"{p}.ln1.beta"],
            q_w=bundle[f"{p}.attn.q.weight"],
            q_b=bundle[f"{p}.attn.q.bias"],
            k_w=bundle[f"{p}.attn.k.weight"],
            k_b=bundle[f"{p}.attn.k.bias"],
            v_w=bundle[f"{p}.attn.v.weight"],
            v_b=bundle[f"{p}.attn.v.bias"],
            out_w=bundle[f"{p}.attn.out.weight"],
            out_b=bundle[f"{p}.attn.out.bias"],
            ln2_gamma=bundle[f"{p}.ln2.gamma"],
            ln2_beta=bundle[f"{p}.ln2.beta"],
            fc1_w=bundle[f"{p}.mlp.fc1.weight"],
            fc1_b=bundle[f"{p}.mlp.fc1.bias"],
            fc2_w=bundle[f"{p}.mlp.fc2.weight"],
            fc2_b=bundle[f"{p}.mlp.fc2.bias"],
        )


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    seq, hidden = x.shape
    dh = hidden // heads
    return x.reshape(seq, heads, dh).transpose(1, 0, 2)


def multi_head_attention(
    z: np.ndarray,
    params: LayerParams,
    heads: int,
    return_weights: bool = False,
):
    """Scaled dot-product multi-head self-attention.

    Per head h: A_h = softmax(Q_h K_h^T / sqrt(d_h)), output rows are
    A_h V_h concatenated over heads and passed through the out projection.
    With ``return_weights`` the (heads, seq, seq) attention tensor is
    returned alongside the output.
    """
    z = tc.as_matrix(z, "attention input")
    seq, hidden = z.shape
    if hidden % heads != 0:
        raise ShapeError(f"hidden dim {hidden} is not divisible by {heads} heads")
    dh = hidden // heads
    q = _split_heads(tc.matmul(z, params.q_w) + params.q_b, heads)
    k = _split_heads(tc.matmul(z, params.k_w) + params.k_b, heads)
    v = _split_heads(tc.matmul(z, params.v_w) + params.v_b, heads)

    scale = np.float32(1.0 / np.sqrt(dh))
    scores = np.matmul(q, k.transpose(0, 2, 1)) * scale
    attn = tc.softmax_rows(scores.reshape(heads * seq, seq)).reshape(heads, seq, seq)
    ctx = np.matmul(attn, v)
    merged = ctx.transpose(1, 0, 2).reshape(seq, hidden)
    out = tc.matmul(merged, params.out_w) + params.out_b
    if return_weights:
        return out, attn
    return out


def encoder_block(
    z: np.ndarray,
    params: LayerParams,
    heads: int,
    return_weights: bool = False,
):
    """One pre-norm transformer block with residual connections."""
    attn_in = tc.layer_norm(z, params.ln1_gamma, params.ln1_beta)
    if return_weights:
        attn_out, weights = multi_head_attention(
            attn_in, params, heads, return_weights=True
        )
    else:
        attn_out = multi_head_attention(attn_in, params, heads)
    z = z + attn_out
    mlp_in = tc.layer_norm(z, params.ln2_gamma, params.ln2_beta)
    hidden = tc.gelu(tc.matmul(mlp_in, params.fc1_w) + params.fc1_b)
    mlp_out = tc.matmul(hidden, params.fc2_w) + params.fc2_b
    z = z + mlp_out
    if return_weights:
        return z, weights
    return z


def encode_tokens(
    image: np.ndarray,
    bundle: WeightBundle,
    collect_attention: bool = False,
):
    """Run the full encoder; returns the final (seq, hidden) token matrix.

    With ``collect_attention`` a list of per-layer (heads, seq, seq)
    attention tensors is returned as well.
    """
    cfg = bundle.config
    patches = patchify(image, cfg.patch_side)
    z = embed(patches, bundle)
    attention = []
    for layer in range(cfg.depth):
        params = LayerParams.from_bundle(bundle, layer)
        if collect_attention:
            z, weights = encoder_block(z, params, cfg.heads, return_weights=True)
            attention.append(weights)
        else:
            z = encoder_block(z, params, cfg.heads)
    if cfg.final_layer_norm:
        z = tc.layer_norm(z, bundle["final_ln.gamma"], bundle["final_ln.beta"])
    if collect_attention:
        return z, attention
    return z


def extract_cls(image: np.ndarray, bundle: WeightBundle, image_id: str = "") -> FeatureVector:
    """Encode ``image`` and return its class-token feature vector."""
    tokens = encode_tokens(image, bundle)
    return FeatureVector(image_id=image_id, values=tokens[0].copy())


def save_features(features: list[FeatureVector], path) -> None:
    """Write feature vectors to an MSF1 file; all dims must agree."""
    if features:
        dim = features[0].values.shape[0]
    else:
        dim = 0
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", len(features), dim))
        for fv in features:
            if fv.values.shape[0] != dim:
                raise ShapeError(
                    f"feature {fv.image_id!r} has dim {fv.values.shape[0]}, expected {dim}"
                )
            ident = fv.image_id.encode("utf-8")
            fh.write(struct.pack("<I", len(ident)))
            fh.write(ident)
            fh.write(np.ascontiguousarray(fv.values, dtype="<f4").tobytes())


def load_features(path) -> list[FeatureVector]:
    """Read an MSF1 feature file back into FeatureVector records."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: not an MSF1 feature file (bad magic)")
    count, dim = struct.unpack("<II", blob[4:12])
    out: list[FeatureVector] = []
    pos = 12
    for _ in range(count):
        if pos + 4 > len(blob):
            raise CorruptionError(f"{path}: truncated record header")
        (id_len,) = struct.unpack("<I", blob[pos : pos + 4])
        pos += 4
        if pos + id_len + dim * 4 > len(blob):
            raise CorruptionError(f"{path}: truncated record payload")
        ident = blob[pos : pos + id_len].decode("utf-8")
        pos += id_len
        values = np.frombuffer(blob, dtype="<f4", count=dim, offset=pos).copy()
        pos += dim * 4
        out.append(FeatureVector(image_id=ident, values=values))
    return out
