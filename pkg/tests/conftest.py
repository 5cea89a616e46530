import numpy as np
import pytest

from chipqa import synth

NATURAL_IMAGES = ("camera", "astronaut", "coffee", "chelsea", "rocket",
                  "coins", "brick", "grass", "gravel", "clock")

# (criterion, passed, detail) rows collected by the acceptance module
ACCEPTANCE_RESULTS = []


def natural_image(name: str) -> np.ndarray:
    from skimage import data

    img = np.asarray(getattr(data, name)(), dtype=np.float64)
    if img.ndim == 3:
        img = img[..., :3] @ np.array([0.299, 0.587, 0.114])
    return img


def natural_clip(name: str, n_frames: int = 12, size=(96, 128), velocity=(1.3, 0.6)):
    return synth.pan_clip(natural_image(name), n_frames, size, velocity=velocity, sprite_size=24)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_pristine():
    """Pristine model with 24-pixel patches so small fixtures get spatial features."""
    from chipqa import niqe

    frames = [natural_image(n) for n in NATURAL_IMAGES + ("moon", "hubble_deep_field")]
    return niqe.fit_pristine(frames, patch_size=24)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit, ok, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        tr.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'}  {detail}")
