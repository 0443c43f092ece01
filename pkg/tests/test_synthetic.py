import numpy as np
import pytest

from skyreg import baselines, evaluation, ingest, synthetic
from skyreg.errors import FootprintOverflow


def test_zero_motion():
    clip = synthetic.generate(synthetic.SyntheticSpec(motion=(synthetic.MotionStep(),), length=31))
    assert all(np.array_equal(f, clip.sequence.frames[0]) for f in clip.sequence.frames)
    assert np.allclose(clip.homographies, np.eye(3))
    res = evaluation.evaluate(baselines.IdentityEstimator(), [clip.sequence],
                              {clip.annotation.video_id: clip.annotation})
    assert res.overall == 0.0


def test_pan_landmark_displacement():
    clip = synthetic.generate(synthetic.SyntheticSpec(length=31, seed=4))
    (t0, p0), (t1, p1) = clip.annotation.entries
    assert (t0, t1) == (0, 30)
    for k in p0:
        np.testing.assert_allclose(np.subtract(p1[k], p0[k]), (120.0, 0.0), atol=1e-9)


def test_content_moves_by_step():
    clip = synthetic.generate(synthetic.SyntheticSpec(
        motion=(synthetic.MotionStep(3, 2),), length=2, seed=1))
    f0, f1 = clip.sequence.frames
    np.testing.assert_allclose(f1[2:, 3:], f0[:-2, :-3], atol=1e-6)


def test_noise_floor():
    sigma = 0.02
    clip = synthetic.generate(synthetic.SyntheticSpec(
        motion=(synthetic.MotionStep(0.6, 0.3, 0.3, 1.003),), length=4, noise_sigma=sigma, seed=5))
    from skyreg import losses, geometry
    for t in range(3):
        ref = ingest.crop(clip.sequence.frames[t].astype(np.float64), (80, 26), 128)
        loss, _ = losses.photometric_loss(ref, clip.sequence.frames[t + 1], clip.homographies[t],
                                          geometry.patch_corners((80, 26), 128))
        assert float(loss) <= 2 * sigma + 0.01


def test_footprint_overflow():
    with pytest.raises(FootprintOverflow):
        synthetic.generate(synthetic.SyntheticSpec(length=10, texture=np.zeros((180, 320))))


def test_write_and_reload(tmp_path):
    clip = synthetic.generate(synthetic.SyntheticSpec(length=31, noise_sigma=0.01, seed=6,
                                                      video_id="v0"))
    synthetic.write_dataset(tmp_path, {"test": [clip]})
    seq = ingest.load_split(tmp_path, "test")[0]
    assert seq.video_id == "v0"
    np.testing.assert_allclose(seq.frames, clip.sequence.frames, atol=1e-4)
    np.testing.assert_allclose(synthetic.read_truth(tmp_path / "truth.csv")["v0"],
                               clip.homographies)
    ann = evaluation.read_annotations(tmp_path / "annotations.csv")["v0"]
    assert ann.entries == clip.annotation.entries


def test_split_clip():
    clip = synthetic.generate(synthetic.SyntheticSpec(length=95, seed=2, video_id="s"))
    head, tail = synthetic.split_clip(clip, 60)
    assert len(head.sequence) == 60 and len(tail.sequence) == 35
    assert [t for t, _ in tail.annotation.entries] == [0, 30]
    assert tail.annotation.entries[0][1] == clip.annotation.entries[2][1]
    with pytest.raises(ValueError):
        synthetic.split_clip(clip, 45)


def test_truth_beats_half_pixel_offsets_under_noise():
    # Fitness of the texture for unsupervised training: at sigma 0.05 the true
    # motion must score lower than half-pixel offsets, which interpolation
    # would otherwise favour by averaging noise.
    from skyreg import geometry, losses
    clip = synthetic.generate(synthetic.SyntheticSpec(length=13, noise_sigma=0.05, seed=0))
    f = clip.sequence.frames.astype(np.float64)

    def score(tx, ty):
        vals = []
        for tl in ((32, 26), (160, 26)):
            c = geometry.patch_corners(tl, 128)
            for t in range(0, 12, 3):
                loss, _ = losses.photometric_loss(ingest.crop(f[t], tl, 128), f[t + 1],
                                                  geometry.translation(tx, ty), c)
                vals.append(float(loss))
        return np.mean(vals)

    truth = score(1.0, 0.0)
    for off in ((0.5, 0.0), (1.5, 0.0), (1.0, 0.5), (1.0, -0.5), (0.5, 0.5)):
        assert truth < score(*off)
