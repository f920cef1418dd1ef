import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import unpatchify
from vistok.errors import DimensionMismatch, NonUniformFrames, UnsupportedImageFormat
from vistok.patchify import (
    PatchGrid,
    PixelBuffer,
    patchify_image,
    patchify_video,
    read_image_size,
    resample,
)
from vistok.resize import ResizePlan, ResizeSpec, token_count

SPEC = ResizeSpec()


def _img(rng, h, w):
    return PixelBuffer(rng.random((h, w, 3)))


def _plan(h, w, th=None, tw=None):
    return ResizePlan(h, w, th or h, tw or w)


def test_pixel_buffer_from_flat_and_invariants():
    buf = PixelBuffer.from_flat(list(range(12)), 2, 2, 3)
    assert (buf.height, buf.width, buf.channels) == (2, 2, 3)
    assert buf.flat().tolist() == list(range(12))
    with pytest.raises(DimensionMismatch):
        PixelBuffer.from_flat([0.0] * 11, 2, 2, 3)


def test_patch_grid_invariants():
    g = PatchGrid(2, 3, 4)
    assert g.num_tokens == 24 and g.patch_shape() == (2, 6, 8)
    with pytest.raises(ValueError):
        PatchGrid(0, 1, 1)
    with pytest.raises(DimensionMismatch):
        PatchGrid(1, 1, 2, np.zeros((1, 10)))


def test_resample_examples():
    rng = np.random.default_rng(0)
    src = _img(rng, 5, 7)
    assert resample(src, 5, 7) == src
    const = PixelBuffer(np.full((2, 2, 3), 0.3))
    np.testing.assert_allclose(resample(const, 4, 4).data, 0.3, atol=1e-15)
    line = PixelBuffer(np.array([[[0.0], [1.0]]]))
    np.testing.assert_allclose(resample(line, 1, 3).data[0, :, 0], [0, 0.5, 1])


def test_resample_matches_closed_form_for_linear_ramp():
    # bilinear reproduces affine functions exactly
    h, w, th, tw = 6, 9, 11, 4
    y, x = np.mgrid[0:h, 0:w]
    src = PixelBuffer((0.1 * y + 0.02 * x)[..., None] / 2)
    out = resample(src, th, tw).data[..., 0]
    yy = np.arange(th)[:, None] * (h - 1) / (th - 1)
    xx = np.arange(tw)[None, :] * (w - 1) / (tw - 1)
    np.testing.assert_allclose(out, (0.1 * yy + 0.02 * xx) / 2, atol=1e-14)


@pytest.mark.parametrize("h,w,grid", [(224, 224, (1, 8, 8)), (28, 28, (1, 1, 1)), (56, 28, (1, 2, 1))])
def test_patchify_image_examples(h, w, grid):
    rng = np.random.default_rng(1)
    g = patchify_image(_img(rng, h, w), _plan(h, w))
    assert g.shape == grid
    assert g.patch_vectors.shape == (g.num_tokens, 2 * 14 * 14 * 3 * 4)


def test_single_token_is_four_patches_duplicated_in_time():
    rng = np.random.default_rng(2)
    img = _img(rng, 28, 28)
    v = patchify_image(img, _plan(28, 28)).patch_vectors[0].reshape(2, 2, 2, 3, 14, 14)
    np.testing.assert_array_equal(v[0], v[1])
    np.testing.assert_array_equal(v[0, 0, 1].transpose(1, 2, 0), img.data[:14, 14:])
    np.testing.assert_array_equal(v[0, 1, 0].transpose(1, 2, 0), img.data[14:, :14])


def test_56x28_layout_by_hand():
    # 4x2 patch grid merges into 2 rows of one token; token 1 holds the bottom half
    data = np.zeros((56, 28, 3))
    data[28:] = 1.0
    g = patchify_image(PixelBuffer(data), _plan(56, 28))
    assert g.shape == (1, 2, 1)
    assert g.patch_vectors[0].sum() == 0 and np.all(g.patch_vectors[1] == 1)


@pytest.mark.parametrize(
    "n,size,grid", [(4, 224, (2, 8, 8)), (1, 224, (1, 8, 8)), (20, 112, (10, 4, 4))]
)
def test_patchify_video_examples(n, size, grid):
    rng = np.random.default_rng(3)
    frames = [_img(rng, size, size) for _ in range(n)]
    g = patchify_video(frames, _plan(size, size))
    assert g.shape == grid


def test_video_rejects_non_uniform_frames():
    rng = np.random.default_rng(4)
    with pytest.raises(NonUniformFrames):
        patchify_video([_img(rng, 28, 28), _img(rng, 28, 56)], _plan(28, 28))


def test_misaligned_plan_rejected():
    rng = np.random.default_rng(5)
    with pytest.raises(DimensionMismatch):
        patchify_image(_img(rng, 30, 30), _plan(30, 30))
    with pytest.raises(DimensionMismatch):
        patchify_image(_img(rng, 28, 28), _plan(56, 56))


sizes = st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(5, 90), st.integers(5, 90))


@settings(max_examples=40, deadline=None)
@given(sizes, st.integers(0, 2**32 - 1))
def test_reconstruction_conservation_and_token_count(s, seed):
    gh, gw, sh, sw = s
    rng = np.random.default_rng(seed)
    img = _img(rng, sh, sw)
    plan = _plan(sh, sw, 28 * gh, 28 * gw)
    g = patchify_image(img, plan)
    resampled = resample(img, plan.target_h, plan.target_w).data
    assert g.num_tokens == token_count(plan.target_h, plan.target_w, SPEC).merged
    frames = unpatchify(g.patch_vectors, g.shape)
    np.testing.assert_array_equal(frames[0], resampled)
    np.testing.assert_array_equal(frames[1], resampled)
    assert g.patch_vectors.sum() == pytest.approx(resampled.sum() * 2, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_image_equals_two_frame_video(gh, gw, seed):
    rng = np.random.default_rng(seed)
    img = _img(rng, 28 * gh + 3, 28 * gw + 5)
    plan = _plan(img.height, img.width, 28 * gh, 28 * gw)
    assert patchify_video([img, img], plan) == patchify_image(img, plan)
    assert patchify_video([img], plan) == patchify_image(img, plan)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_video_reconstruction_with_padding(n, seed):
    rng = np.random.default_rng(seed)
    frames = [_img(rng, 56, 28) for _ in range(n)]
    g = patchify_video(frames, _plan(56, 28))
    out = unpatchify(g.patch_vectors, g.shape)
    padded = [f.data for f in frames] + [frames[-1].data] * (len(out) - n)
    np.testing.assert_array_equal(out, np.stack(padded))


def _png(w, h):
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    chunk = struct.pack(">I", len(ihdr)) + b"IHDR" + ihdr + struct.pack(">I", zlib.crc32(b"IHDR" + ihdr))
    return b"\x89PNG\r\n\x1a\n" + chunk


def _jpeg(w, h, marker=0xC0):
    app0 = b"\xff\xe0" + struct.pack(">H", 16) + b"JFIF\x00" + b"\x01\x01\x00\x00\x01\x00\x01\x00\x00"
    sof = bytes([0xFF, marker]) + struct.pack(">HBHHB", 11, 8, h, w, 1) + b"\x01\x11\x00"
    return b"\xff\xd8" + app0 + sof + b"\xff\xd9"


def test_read_image_size(tmp_path):
    p = tmp_path / "a.png"
    p.write_bytes(_png(640, 480))
    assert read_image_size(p) == (480, 640)
    for marker in (0xC0, 0xC2):
        j = tmp_path / f"b{marker}.jpg"
        j.write_bytes(_jpeg(1000, 500, marker))
        assert read_image_size(j) == (500, 1000)
    bad = tmp_path / "c.gif"
    bad.write_bytes(b"GIF89a" + b"\x00" * 20)
    with pytest.raises(UnsupportedImageFormat):
        read_image_size(bad)
