import shutil

import numpy as np
import pytest
from PIL import Image


def save_pgm(plane: np.ndarray, path) -> None:
    """Write a [0,1] float plane as an 8-bit PGM."""
    arr = np.clip(np.asarray(plane) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PPM")


@pytest.fixture
def smooth_image(tmp_path):
    y, x = np.mgrid[0:16, 0:16]
    path = tmp_path / "smooth.pgm"
    save_pgm((x + y) / 30.0, path)
    return path


@pytest.fixture
def textured_image(tmp_path):
    rng = np.random.default_rng(5)
    path = tmp_path / "textured.pgm"
    save_pgm(rng.random((16, 16)), path)
    return path


def core_cli() -> str:
    """Path to the installed detection-core CLI; the contract tests need it."""
    exe = shutil.which("synthscan")
    if exe is None:
        pytest.fail("the `synthscan` CLI must be installed to run the bridge tests")
    return exe
