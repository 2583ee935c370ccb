import numpy as np
import pytest

from roadcal.geometry import ExtrinsicCalibration, Intrinsics, orthonormalized


def random_rotation(rng):
    """Uniform-ish random rotation from a random Gaussian matrix."""
    return orthonormalized(rng.standard_normal((3, 3)))


def random_extrinsic(rng, anchor=None):
    R = random_rotation(rng)
    t = rng.uniform(-10.0, 10.0, size=3)
    if anchor is None:
        anchor = np.zeros(3)
    return ExtrinsicCalibration(R, t, anchor)


@pytest.fixture
def intr():
    return Intrinsics(
        fx=1000.0, fy=1000.0, cx=960.0, cy=600.0, image_width=1920, image_height=1200
    )
