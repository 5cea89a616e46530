"""Local Gaussian-weighted moments, MSCN coefficients and Sobel gradient magnitude."""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import FrameTooSmall

DEFAULT_HALF_WIDTH = 3
DEFAULT_SIGMA = 7.0 / 6.0


def mscn_constant(bit_depth: int = 8) -> float:
    """Stabilizing constant; scales with code-value range (1 at 8 bits, 4 at 10 bits)."""
    return float(1 << max(0, bit_depth - 8))


@dataclass(frozen=True)
class GaussianWindow:
    half_width: int = DEFAULT_HALF_WIDTH
    sigma: float = DEFAULT_SIGMA
    taps: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        k = np.arange(-self.half_width, self.half_width + 1, dtype=np.float64)
        g = np.exp(-0.5 * (k / self.sigma) ** 2)
        object.__setattr__(self, "taps", g / g.sum())

    @property
    def size(self) -> int:
        return 2 * self.half_width + 1

    @property
    def weights(self) -> np.ndarray:
        return np.outer(self.taps, self.taps)

    @classmethod
    def three_sigma(cls, half_width: int = DEFAULT_HALF_WIDTH) -> "GaussianWindow":
        """Window whose half-width spans exactly three standard deviations."""
        return cls(half_width, half_width / 3.0)


DEFAULT_WINDOW = GaussianWindow()


def _values(f) -> np.ndarray:
    arr = getattr(f, "luma", getattr(f, "values", f))
    return np.asarray(arr, dtype=np.float64)


def _smooth(arr: np.ndarray, taps: np.ndarray) -> np.ndarray:
    # whole-sample reflection (dcb|abcd), numpy's "reflect" padding
    return cv2.sepFilter2D(arr, cv2.CV_64F, taps, taps, borderType=cv2.BORDER_REFLECT_101)


def local_moments(f, w: GaussianWindow = DEFAULT_WINDOW):
    """Return ``(mean, sigma)`` fields under window ``w`` with reflect padding."""
    img = _values(f)
    if img.ndim != 2 or img.shape[0] < w.size or img.shape[1] < w.size:
        raise FrameTooSmall(f"frame {img.shape} smaller than {w.size}x{w.size} window")
    mu_c, sigma = _centered_moments(img, w)
    return mu_c + img.flat[0], sigma


def _centered_moments(img: np.ndarray, w: GaussianWindow):
    # Work relative to the first sample: exact for integer frames, and keeps
    # E[x^2] - E[x]^2 away from catastrophic cancellation.
    x = img - img.flat[0]
    mu = _smooth(x, w.taps)
    ex2 = _smooth(x * x, w.taps)
    var = ex2 - mu * mu
    # anything below the cancellation floor of E[x^2] - E[x]^2 is rounding noise
    var[var <= 1e-12 * ex2] = 0.0
    return mu, np.sqrt(var)


def mscn_with_sigma(f, w: GaussianWindow = DEFAULT_WINDOW, C: float = 1.0):
    """MSCN field plus the local sigma field it was normalized by."""
    if C <= 0:
        raise ValueError("C must be positive")
    img = _values(f)
    if img.ndim != 2 or img.shape[0] < w.size or img.shape[1] < w.size:
        raise FrameTooSmall(f"frame {img.shape} smaller than {w.size}x{w.size} window")
    mu, sigma = _centered_moments(img, w)
    return (img - img.flat[0] - mu) / (sigma + C), sigma


def mscn(f, w: GaussianWindow = DEFAULT_WINDOW, C: float = 1.0) -> np.ndarray:
    return mscn_with_sigma(f, w, C)[0]


def sobel_magnitude(f) -> np.ndarray:
    img = _values(f)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise FrameTooSmall(f"frame {img.shape} smaller than 3x3")
    gx = cv2.Sobel(img, cv2.CV_64F, 1, 0, ksize=3, borderType=cv2.BORDER_REFLECT_101)
    gy = cv2.Sobel(img, cv2.CV_64F, 0, 1, ksize=3, borderType=cv2.BORDER_REFLECT_101)
    return np.sqrt(gx * gx + gy * gy)
