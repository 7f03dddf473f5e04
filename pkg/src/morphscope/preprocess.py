"""Image decoding and geometric preprocessing ahead of the encoder.

Supported inputs are binary PPM (P6, 8-bit) and 8-bit RGB/RGBA PNG.  The
pipeline is decode -> face crop -> bilinear resize -> channel
normalization, producing the (side, side, 3) float32 tensor the encoder
consumes.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DecodeError, ShapeError, UnsupportedFormatError


def decode_ppm(data: bytes) -> np.ndarray:
    """Parse a binary P6 PPM into a (h, w, 3) float32 array in [0, 1]."""
    if not data.startswith(b"P6"):
        raise DecodeError("not a P6 PPM stream")

    pos = 2
    fields: list[int] = []

    def skip_separators(pos: int) -> int:
        while pos < len(data):
            c = data[pos : pos + 1]
            if c.isspace():
                pos += 1
            elif c == b"#":
                while pos < len(data) and data[pos : pos + 1] != b"\n":
                    pos += 1
            else:
                break
        return pos

    while len(fields) < 3:
        pos = skip_separators(pos)
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise DecodeError("malformed PPM header")
        fields.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise DecodeError("PPM header not terminated by whitespace")
    pos += 1

    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise DecodeError(f"bad PPM dimensions {width}x{height}")
    if maxval > 255:
        raise UnsupportedFormatError(f"16-bit PPM (maxval {maxval}) is not supported")
    if maxval <= 0:
        raise DecodeError(f"bad PPM maxval {maxval}")

    expected = width * height * 3
    raw = data[pos : pos + expected]
    if len(raw) < expected:
        raise DecodeError(
            f"truncated PPM payload: expected {expected} bytes, got {len(raw)}"
        )
    img = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)
    return img.astype(np.float32) / float(maxval)


def encode_ppm(image: np.ndarray) -> bytes:
    """Serialize a float [0, 1] (h, w, 3) array as binary P6 with maxval 255."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected (h, w, 3) image, got shape {image.shape}")
    q = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = q.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + q.tobytes()


def decode_png(data: bytes) -> np.ndarray:
    """Decode an 8-bit RGB or RGBA PNG; alpha is dropped, not composited."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.format != "PNG":
                raise DecodeError(f"expected PNG data, got {im.format}")
            if im.mode not in ("RGB", "RGBA"):
                raise UnsupportedFormatError(
                    f"unsupported PNG mode {im.mode!r}: only 8-bit RGB/RGBA"
                )
            arr = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise DecodeError(f"undecodable PNG stream: {exc}") from exc
    except (OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"corrupt PNG stream: {exc}") from exc
    if arr.ndim != 3:
        raise DecodeError(f"unexpected PNG array shape {arr.shape}")
    return arr[:, :, :3].astype(np.float32) / 255.0


def decode_image(data: bytes, format_hint: str | None = None) -> np.ndarray:
    """Decode PPM or PNG bytes to a (h, w, 3) float32 array in [0, 1].

    Without a hint the format is sniffed from the leading magic bytes.
    """
    fmt = (format_hint or "").lower()
    if not fmt:
        if data.startswith(b"P6"):
            fmt = "ppm"
        elif data.startswith(b"\x89PNG\r\n\x1a\n"):
            fmt = "png"
        else:
            raise UnsupportedFormatError("unrecognized image format (expected PPM or PNG)")
    if fmt == "ppm":
        return decode_ppm(data)
    if fmt == "png":
        return decode_png(data)
    raise UnsupportedFormatError(f"unsupported format hint {format_hint!r}")


@dataclass(frozen=True)
class BBox:
    """Axis-aligned face box in pixel units: top-left corner plus size."""

    x: float
    y: float
    w: float
    h: float


def crop_face(image: np.ndarray, box: BBox, margin: float = 0.0) -> np.ndarray:
    """Cut out a square face region around ``box``.

    The box first grows by ``margin * max(w, h)`` on every side, then is
    clamped to the image, then expanded symmetrically along its shorter
    axis to a square, and clamped once more (so a face at the border may
    come out non-square).  Pixels are copied, never interpolated.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected (h, w, 3) image, got shape {image.shape}")
    if box.w <= 0 or box.h <= 0:
        raise ArgumentError(f"face box must have positive size, got {box.w}x{box.h}")
    if margin < 0:
        raise ArgumentError(f"margin must be nonnegative, got {margin}")

    img_h, img_w = image.shape[:2]
    m = margin * max(box.w, box.h)
    x0, y0 = box.x - m, box.y - m
    x1, y1 = box.x + box.w + m, box.y + box.h + m
    if x1 <= 0 or y1 <= 0 or x0 >= img_w or y0 >= img_h:
        raise ArgumentError("expanded face box does not intersect the image")
    x0, x1 = max(x0, 0.0), min(x1, float(img_w))
    y0, y1 = max(y0, 0.0), min(y1, float(img_h))

    side = max(x1 - x0, y1 - y0)
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    x0, x1 = cx - side / 2.0, cx + side / 2.0
    y0, y1 = cy - side / 2.0, cy + side / 2.0
    x0, x1 = max(x0, 0.0), min(x1, float(img_w))
    y0, y1 = max(y0, 0.0), min(y1, float(img_h))

    ix0, iy0 = int(np.floor(x0)), int(np.floor(y0))
    ix1, iy1 = int(np.ceil(x1)), int(np.ceil(y1))
    return np.ascontiguousarray(image[iy0:iy1, ix0:ix1])


def resize_bilinear(image: np.ndarray, side: int) -> np.ndarray:
    """Resize to (side, side, 3) with bilinear sampling.

    Sample positions use half-pixel centers, src = (dst + 0.5) * scale - 0.5,
    clamped to the source range, so an identity resize preserves values.
    """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected (h, w, 3) image, got shape {image.shape}")
    if side <= 0:
        raise ArgumentError(f"target side must be positive, got {side}")
    src_h, src_w = image.shape[:2]
    if src_h == 0 or src_w == 0:
        raise ArgumentError("cannot resize an empty image")

    def axis_coords(src_dim: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        scale = src_dim / side
        pos = (np.arange(side, dtype=np.float64) + 0.5) * scale - 0.5
        pos = np.clip(pos, 0.0, src_dim - 1.0)
        lo = np.floor(pos).astype(np.int64)
        lo = np.minimum(lo, src_dim - 1)
        hi = np.minimum(lo + 1, src_dim - 1)
        frac = (pos - lo).astype(np.float32)
        return lo, hi, frac

    y0, y1, fy = axis_coords(src_h)
    x0, x1, fx = axis_coords(src_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]

    top = image[y0][:, x0] * (1.0 - fx) + image[y0][:, x1] * fx
    bottom = image[y1][:, x0] * (1.0 - fx) + image[y1][:, x1] * fx
    return (top * (1.0 - fy) + bottom * fy).astype(np.float32)


def normalize(
    image: np.ndarray,
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5),
    std: tuple[float, float, float] = (0.5, 0.5, 0.5),
) -> np.ndarray:
    """Per-channel affine normalization (v - mean_c) / std_c."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected (h, w, 3) image, got shape {image.shape}")
    mean_arr = np.asarray(mean, dtype=np.float32)
    std_arr = np.asarray(std, dtype=np.float32)
    if mean_arr.shape != (3,) or std_arr.shape != (3,):
        raise ArgumentError("mean and std must each carry three channel values")
    if np.any(std_arr == 0):
        raise ArgumentError("std must be nonzero in every channel")
    return (image - mean_arr) / std_arr


@dataclass(frozen=True)
class PreprocessConfig:
    """Everything that determines the encoder input for given image bytes."""

    side: int = 384
    margin: float = 0.0
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: tuple[float, float, float] = (0.5, 0.5, 0.5)

    def to_dict(self) -> dict:
        return {
            "side": self.side,
            "margin": self.margin,
            "mean": list(self.mean),
            "std": list(self.std),
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def preprocess_bytes(
    data: bytes,
    bbox: BBox | None,
    config: PreprocessConfig,
    format_hint: str | None = None,
) -> np.ndarray:
    """Full pipeline from raw image bytes to an encoder-ready tensor."""
    img = decode_image(data, format_hint)
    if bbox is not None:
        img = crop_face(img, bbox, config.margin)
    img = resize_bilinear(img, config.side)
    return normalize(img, config.mean, config.std)
