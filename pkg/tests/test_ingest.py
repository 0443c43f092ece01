import logging

import cv2
import numpy as np
import pytest
import torch

from skyreg import ingest
from skyreg.errors import DecodeFailure, EmptyVideo, FrameRangeError, OutOfBounds


def _write_frames(folder, frames, bits=8):
    folder.mkdir(parents=True, exist_ok=True)
    scale = 65535 if bits == 16 else 255
    dtype = np.uint16 if bits == 16 else np.uint8
    for i, f in enumerate(frames):
        cv2.imwrite(str(folder / f"f_{i:04d}.png"), np.round(f * scale).astype(dtype))


def test_load_directory_resizes_and_scales(tmp_path, rng):
    frames = rng.random((3, 360, 640))
    _write_frames(tmp_path / "vid", frames, bits=16)
    seq = ingest.load_video(tmp_path / "vid")
    assert seq.frames.shape == (3, 180, 320)
    assert seq.frames.dtype == np.float32
    assert seq.source_size == (640, 360)
    assert seq.video_id == "vid"
    np.testing.assert_allclose(seq.frames[1], cv2.resize(frames[1].astype(np.float32), (320, 180),
                               interpolation=cv2.INTER_AREA), atol=1e-4)


def test_frames_sorted_numerically(tmp_path):
    folder = tmp_path / "v"
    folder.mkdir()
    for i in (10, 2, 1):
        cv2.imwrite(str(folder / f"frame{i}.png"), np.full((180, 320), i, np.uint8))
    seq = ingest.load_video(folder)
    assert [round(float(f[0, 0]) * 255) for f in seq.frames] == [1, 2, 10]


def test_non_16_9_warns(tmp_path, rng, caplog):
    _write_frames(tmp_path / "sq", rng.random((2, 200, 200)))
    with caplog.at_level(logging.WARNING):
        ingest.load_video(tmp_path / "sq")
    assert "16:9" in caplog.text


def test_errors(tmp_path, rng):
    with pytest.raises(DecodeFailure):
        ingest.load_video(tmp_path / "missing.mp4")
    _write_frames(tmp_path / "one", rng.random((1, 180, 320)))
    with pytest.raises(EmptyVideo):
        ingest.load_video(tmp_path / "one")
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "0.png").write_bytes(b"not a png")
    with pytest.raises(DecodeFailure):
        ingest.load_video(bad)


def test_manifest_filters_split(tmp_path, rng):
    for name in ("a", "b"):
        _write_frames(tmp_path / "train" / name, rng.random((2, 180, 320)))
    (tmp_path / "manifest.txt").write_text("b\n")
    assert [p.name for p in ingest.list_videos(tmp_path, "train")] == ["b"]
    assert ingest.list_videos(tmp_path, "test") == []


class TestSampling:
    def test_deterministic_and_within_margins(self, pan_clip):
        a = ingest.sample_patch_streams(pan_clip.sequence, 3, 4, 11, 8)
        b = ingest.sample_patch_streams(pan_clip.sequence, 3, 4, 11, 8)
        assert a.streams == b.streams
        (u_lo, u_hi), (v_lo, v_hi) = ingest.parent_bounds(pan_clip.sequence.size)
        for p in a.parents:
            assert u_lo <= p.top_left[0] <= u_hi and v_lo <= p.top_left[1] <= v_hi
        assert a.frames.shape[0] == 8

    def test_children_tile_parent(self, pan_clip):
        batch = ingest.sample_patch_streams(pan_clip.sequence, 0, 2, 5, 2)
        assert len(batch.streams) == 10
        for p in batch.parents:
            kids = batch.children_of(p)
            u, v = p.top_left
            assert [c.top_left for c in kids] == [(u, v), (u + 64, v), (u, v + 64), (u + 64, v + 64)]
            assert all(c.size == 64 and c.scale_level == "child" for c in kids)

    def test_seed_changes_locations(self, pan_clip):
        a = ingest.sample_patch_streams(pan_clip.sequence, 0, 3, 1, 2)
        b = ingest.sample_patch_streams(pan_clip.sequence, 0, 3, 2, 2)
        assert a.streams != b.streams

    def test_frame_range(self, pan_clip):
        with pytest.raises(FrameRangeError):
            ingest.sample_patch_streams(pan_clip.sequence, 20, 1, 0, 16)

    def test_margin_clipped_to_frame(self):
        assert ingest.parent_bounds((320, 180)) == ((32, 160), (26, 26))


def test_crop_and_upsample():
    frame = np.arange(180 * 320, dtype=np.float64).reshape(180, 320)
    with pytest.raises(OutOfBounds):
        ingest.crop(frame, (300, 0), 64)
    patch = ingest.crop(frame, (10, 20), 64)
    up = ingest.upsample(torch.as_tensor(patch), 128).numpy()
    assert up.shape == (128, 128)
    # corners align exactly, and a linear ramp is preserved
    assert up[0, 0] == patch[0, 0] and up[-1, -1] == patch[-1, -1]
    np.testing.assert_allclose(up[0], np.linspace(patch[0, 0], patch[0, -1], 128))


def test_bounds_over_many_samples():
    seq = ingest.FrameSequence(np.zeros((2, 180, 320), np.float32), (320, 180), "z")
    us, vs = [], []
    for seed in range(2500):
        for p in ingest.sample_patch_streams(seq, 0, 4, seed, 2).parents:
            us.append(p.top_left[0])
            vs.append(p.top_left[1])
    assert min(us) >= 32 and max(us) <= 320 - 128 - 32
    assert set(vs) == {26}


def test_child_ramp_half_slope():
    ramp = np.tile(np.arange(320, dtype=np.float64), (180, 1))
    child = ingest.extract_patch(ramp, ingest.PatchSpec(0, (0, 0), 64, "child", 1, 0))
    assert child.shape == (128, 128)
    np.testing.assert_allclose(child[5], np.linspace(0, 63, 128), atol=1e-12)
    parent = ingest.extract_patch(np.full((180, 320), 0.3), ingest.PatchSpec(0, (40, 26), 128, "parent", 0))
    assert np.all(parent == 0.3)
