import numpy as np
import pytest
import torch


def random_homography(rng: np.random.Generator, max_shift: float = 24.0,
                      corners=None) -> np.ndarray:
    """A valid homography whose corner displacements stay within ``max_shift``.

    Built from four perturbed corners with OpenCV, so it is independent of
    skyreg.geometry.solve_dlt.
    """
    import cv2

    if corners is None:
        corners = np.array([[10, 10], [138, 10], [138, 138], [10, 138]], dtype=np.float64)
    moved = corners + rng.uniform(-max_shift, max_shift, size=(4, 2))
    h = cv2.getPerspectiveTransform(corners.astype(np.float32), moved.astype(np.float32))
    return h / h[2, 2]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def pan_clip():
    from skyreg import synthetic
    return synthetic.generate(synthetic.SyntheticSpec(length=32, noise_sigma=0.01, seed=3,
                                                      video_id="pan"))


@pytest.fixture(scope="session")
def desk_config():
    """Narrow network settings used by the fast training tests."""
    return dict(width_divisor=8, hidden_dim=64, checkpoint_every=0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
