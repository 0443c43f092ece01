import numpy as np
import pytest
import torch

from skyreg import geometry, kernels
from tests.conftest import random_homography

BACKENDS = ["numpy"] + (["cython"] if kernels.BACKEND == "cython" else [])


@pytest.fixture
def image(rng):
    return rng.random((60, 80))


@pytest.mark.parametrize("backend", BACKENDS)
def test_identity_reproduces_image(image, backend):
    out, mask = kernels.warp_bilinear(image, np.eye(3), image.shape, backend=backend)
    assert mask.all()
    np.testing.assert_array_equal(out, image)


@pytest.mark.parametrize("backend", BACKENDS)
def test_integer_translation_with_origin(image, backend):
    h = np.array([[1, 0, 3], [0, 1, 2], [0, 0, 1.0]])
    out, mask = kernels.warp_bilinear(image, h, (10, 12), origin=(5, 4), backend=backend)
    np.testing.assert_array_equal(out, image[6:16, 8:20])
    assert mask.all()


@pytest.mark.parametrize("backend", BACKENDS)
def test_outside_is_masked(image, backend):
    h = np.array([[1, 0, 70], [0, 1, 0], [0, 0, 1.0]])
    out, mask = kernels.warp_bilinear(image, h, image.shape, backend=backend)
    assert mask[:, :10].all() and not mask[:, 11:].any()
    assert (out[~mask] == 0).all()


def test_backends_agree_with_each_other_and_torch(image, rng):
    corners = np.array([[8, 8], [40, 8], [40, 40], [8, 40]], np.float64)
    for _ in range(5):
        h = random_homography(rng, 6.0, corners)
        ref, ref_mask = kernels.warp_bilinear(image, h, (32, 32), origin=(8, 8), backend="numpy")
        for backend in BACKENDS:
            out, mask = kernels.warp_bilinear(image, h, (32, 32), origin=(8, 8), backend=backend)
            np.testing.assert_allclose(out, ref, atol=1e-12)
            np.testing.assert_array_equal(mask, ref_mask)
        t_out, t_mask = geometry.warp_image(torch.as_tensor(image), torch.as_tensor(h),
                                            geometry.patch_corners((8, 8), 32))
        inner = ref_mask & t_mask.numpy().astype(bool)
        np.testing.assert_allclose(t_out.numpy()[inner], ref[inner], atol=1e-9)


def test_backend_name():
    assert kernels.BACKEND in ("cython", "numpy")


def test_env_forces_pure_python():
    import os
    import subprocess
    import sys
    env = dict(os.environ, SKYREG_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from skyreg import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
