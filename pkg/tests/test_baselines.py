import numpy as np
import pytest

from skyreg import baselines, synthetic
from skyreg.errors import InsufficientFeatures
from tests.conftest import random_homography


def corner_error(h, g, w=320, hgt=180):
    c = np.array([[0, 0], [w - 1, 0], [w - 1, hgt - 1], [0, hgt - 1]], np.float64)

    def m(x):
        p = np.c_[c, np.ones(4)] @ np.asarray(x).T
        return p[:, :2] / p[:, 2:]
    return np.linalg.norm(m(h) - m(g), axis=1).mean()


@pytest.fixture(scope="module")
def shifted():
    clip = synthetic.generate(synthetic.SyntheticSpec(motion=(synthetic.MotionStep(5, 0),),
                                                      length=2, seed=8))
    return clip


def test_identity():
    assert np.array_equal(baselines.identity_estimate(None, None), np.eye(3))


def test_recovers_translation(shifted):
    f = shifted.sequence.frames
    h = baselines.orb_ransac_estimate(f[0], f[1])
    assert corner_error(h, shifted.homographies[0]) < 0.5


def test_identical_frames(shifted):
    f = shifted.sequence.frames
    assert corner_error(baselines.orb_ransac_estimate(f[0], f[0]), np.eye(3)) < 0.1


def test_constant_frames():
    flat = np.full((180, 320), 0.5)
    with pytest.raises(InsufficientFeatures):
        baselines.orb_ransac_estimate(flat, flat)


def test_deterministic(shifted):
    f = shifted.sequence.frames
    cfg = baselines.RansacConfig(seed=3)
    assert np.array_equal(baselines.orb_ransac_estimate(f[0], f[1], cfg),
                          baselines.orb_ransac_estimate(f[0], f[1], cfg))


def test_ransac_rejects_outliers(rng):
    h = random_homography(rng, 10.0)
    src = rng.uniform(0, 300, (60, 2))
    p = np.c_[src, np.ones(60)] @ h.T
    dst = p[:, :2] / p[:, 2:]
    dst[:15] += rng.uniform(20, 40, (15, 2))
    est, inliers = baselines.ransac_homography(src, dst, baselines.RansacConfig(seed=1))
    assert inliers[15:].all() and not inliers[:15].any()
    np.testing.assert_allclose(est, h, atol=1e-6)


def test_config_validation():
    with pytest.raises(ValueError):
        baselines.RansacConfig(inlier_threshold_px=0)


def test_estimator_falls_back_to_identity():
    from skyreg.ingest import FrameSequence
    seq = FrameSequence(np.full((3, 180, 320), 0.5, np.float32), (1280, 720), "flat")
    est = baselines.OrbRansacEstimator()
    hs = est.estimate_sequence(seq)
    assert hs.shape == (2, 3, 3) and np.array_equal(hs[0], np.eye(3)) and est.failures == 2
