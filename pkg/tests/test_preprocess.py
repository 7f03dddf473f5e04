import io

import numpy as np
import pytest

from morphscope import preprocess as pp
from morphscope.errors import ArgumentError, DecodeError, ShapeError, UnsupportedFormatError

import oracles


def test_decode_ppm_example_values():
    data = b"P6\n2 1\n255\n" + bytes([255, 0, 0, 0, 128, 255])
    img = pp.decode_ppm(data)
    assert img.shape == (1, 2, 3)
    np.testing.assert_allclose(img[0, 0], [1.0, 0.0, 0.0])
    np.testing.assert_allclose(img[0, 1], [0.0, 128.0 / 255.0, 1.0], atol=1e-7)


def test_decode_ppm_header_comments_and_maxval_scaling():
    data = b"P6 # binary pixmap\n# size\n2 1 # wh\n100\n" + bytes([100, 50, 0, 0, 0, 0])
    img = pp.decode_ppm(data)
    np.testing.assert_allclose(img[0, 0], [1.0, 0.5, 0.0], atol=1e-7)


def test_decode_ppm_errors():
    with pytest.raises(DecodeError):
        pp.decode_ppm(b"P5\n1 1\n255\n\x00")
    with pytest.raises(UnsupportedFormatError):
        pp.decode_ppm(b"P6\n1 1\n65535\n" + b"\x00" * 6)
    with pytest.raises(DecodeError):
        pp.decode_ppm(b"P6\n2 2\n255\n" + b"\x00" * 5)  # truncated
    with pytest.raises(DecodeError):
        pp.decode_ppm(b"P6\nx y\n255\n")


def test_encode_decode_ppm_roundtrip():
    rng = np.random.default_rng(0)
    img = (rng.integers(0, 256, (5, 4, 3)) / 255.0).astype(np.float32)
    out = pp.decode_ppm(pp.encode_ppm(img))
    np.testing.assert_allclose(out, img, atol=1e-7)


def test_decode_png_solid_gray():
    rgb = np.full((8, 8, 3), 128, dtype=np.uint8)
    img = pp.decode_image(oracles.build_png(rgb))
    assert img.shape == (8, 8, 3)
    np.testing.assert_allclose(img, 128.0 / 255.0, atol=1e-7)


def test_decode_png_rgba_drops_alpha():
    rng = np.random.default_rng(1)
    rgb = rng.integers(0, 256, (4, 6, 3)).astype(np.uint8)
    img = pp.decode_image(oracles.build_png(rgb, alpha=7))
    assert img.shape == (4, 6, 3)
    np.testing.assert_allclose(img, rgb / 255.0, atol=1e-7)


def test_decode_png_rejects_unsupported_modes():
    from PIL import Image

    for mode, color in (("L", 3), ("P", 0), ("I;16", 500)):
        buf = io.BytesIO()
        Image.new(mode, (4, 4), color).save(buf, format="PNG")
        with pytest.raises(UnsupportedFormatError):
            pp.decode_png(buf.getvalue())


def test_decode_png_rejects_corrupt_stream():
    rgb = np.zeros((4, 4, 3), dtype=np.uint8)
    blob = bytearray(oracles.build_png(rgb))
    blob = blob[:40]  # chop inside the first chunk
    with pytest.raises(DecodeError):
        pp.decode_png(bytes(blob))


def test_decode_image_sniffing_and_hint():
    rgb = np.full((2, 2, 3), 10, dtype=np.uint8)
    png = oracles.build_png(rgb)
    ppm = b"P6\n1 1\n255\n\x01\x02\x03"
    assert pp.decode_image(png).shape == (2, 2, 3)
    assert pp.decode_image(ppm).shape == (1, 1, 3)
    assert pp.decode_image(ppm, format_hint="ppm").shape == (1, 1, 3)
    with pytest.raises(UnsupportedFormatError):
        pp.decode_image(b"GIF89a....")
    with pytest.raises(UnsupportedFormatError):
        pp.decode_image(ppm, format_hint="bmp")


def test_crop_face_exact_box():
    rng = np.random.default_rng(2)
    img = rng.random((100, 100, 3)).astype(np.float32)
    crop = pp.crop_face(img, pp.BBox(40, 40, 20, 20), margin=0.0)
    np.testing.assert_array_equal(crop, img[40:60, 40:60])


def test_crop_face_margin_doubles_box():
    rng = np.random.default_rng(3)
    img = rng.random((100, 100, 3)).astype(np.float32)
    crop = pp.crop_face(img, pp.BBox(25, 25, 50, 50), margin=0.5)
    np.testing.assert_array_equal(crop, img)


def test_crop_face_squares_up_rectangular_box():
    rng = np.random.default_rng(4)
    img = rng.random((200, 200, 3)).astype(np.float32)
    crop = pp.crop_face(img, pp.BBox(80, 90, 40, 20), margin=0.0)
    # longer side 40, centered vertically on 100: rows 80..120, cols 80..120
    assert crop.shape == (40, 40, 3)
    np.testing.assert_array_equal(crop, img[80:120, 80:120])


def test_crop_face_clamps_at_border():
    rng = np.random.default_rng(5)
    img = rng.random((50, 50, 3)).astype(np.float32)
    crop = pp.crop_face(img, pp.BBox(0, 0, 10, 10), margin=1.0)
    # expansion by 10 on each side clamps at the top-left corner
    assert crop.shape[0] <= 30 and crop.shape[1] <= 30
    np.testing.assert_array_equal(crop, img[: crop.shape[0], : crop.shape[1]])


def test_crop_face_argument_errors():
    img = np.zeros((10, 10, 3), np.float32)
    with pytest.raises(ArgumentError):
        pp.crop_face(img, pp.BBox(0, 0, 0, 5))
    with pytest.raises(ArgumentError):
        pp.crop_face(img, pp.BBox(100, 100, 5, 5))
    with pytest.raises(ArgumentError):
        pp.crop_face(img, pp.BBox(0, 0, 5, 5), margin=-0.1)


def test_resize_identity_preserves_values():
    rng = np.random.default_rng(6)
    img = rng.random((16, 16, 3)).astype(np.float32)
    out = pp.resize_bilinear(img, 16)
    np.testing.assert_allclose(out, img, atol=1e-6)


def test_resize_matches_per_pixel_oracle():
    rng = np.random.default_rng(7)
    for src, dst in ((4, 7), (6, 3), (2, 4)):
        img = rng.random((src, src, 3)).astype(np.float32)
        got = pp.resize_bilinear(img, dst)
        want = oracles.bilinear_resize_direct(img, dst)
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-6)


def test_resize_constant_image_stays_constant():
    img = np.full((5, 5, 3), 0.37, np.float32)
    out = pp.resize_bilinear(img, 11)
    np.testing.assert_allclose(out, 0.37, atol=1e-6)


def test_resize_nonsquare_input():
    rng = np.random.default_rng(8)
    img = rng.random((6, 3, 3)).astype(np.float32)
    out = pp.resize_bilinear(img, 5)
    want = oracles.bilinear_resize_direct(img, 5)
    assert out.shape == (5, 5, 3)
    np.testing.assert_allclose(out, want, rtol=1e-5, atol=1e-6)


def test_normalize_defaults_and_custom():
    img = np.array([[[0.0, 0.5, 1.0]]], np.float32)
    out = pp.normalize(img)
    np.testing.assert_allclose(out[0, 0], [-1.0, 0.0, 1.0], atol=1e-7)
    out2 = pp.normalize(img, mean=(0.0, 0.0, 0.0), std=(2.0, 2.0, 2.0))
    np.testing.assert_allclose(out2[0, 0], [0.0, 0.25, 0.5], atol=1e-7)
    with pytest.raises(ArgumentError):
        pp.normalize(img, std=(0.0, 1.0, 1.0))
    with pytest.raises(ShapeError):
        pp.normalize(np.zeros((2, 2), np.float32))


def test_full_pipeline_value_preserving_on_square_images():
    rng = np.random.default_rng(9)
    img = (rng.integers(0, 256, (32, 32, 3)) / 255.0).astype(np.float32)
    data = pp.encode_ppm(img)
    cfg = pp.PreprocessConfig(side=32, margin=0.0, mean=(0, 0, 0), std=(1, 1, 1))
    out = pp.preprocess_bytes(data, pp.BBox(0, 0, 32, 32), cfg)
    np.testing.assert_allclose(out, img, atol=1e-6)


def test_preprocess_config_digest_stable():
    a = pp.PreprocessConfig()
    b = pp.PreprocessConfig()
    c = pp.PreprocessConfig(margin=0.2)
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()
