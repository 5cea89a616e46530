"""Small synthetic clips: textured noise fields and camera pans over still images."""

from __future__ import annotations

from typing import Optional, Tuple

import cv2
import numpy as np

from .videoio import Frame


def textured_frame(rng: np.random.Generator, height: int, width: int,
                   mean: float = 128.0, contrast: float = 40.0) -> np.ndarray:
    """Band-limited noise with a roughly 1/f spectrum, clipped to 8-bit range."""
    out = np.zeros((height, width))
    for sigma in (0.8, 1.6, 3.2, 6.4):
        layer = cv2.GaussianBlur(rng.standard_normal((height, width)), (0, 0), sigma,
                                 borderType=cv2.BORDER_REFLECT)
        out += layer / (layer.std() + 1e-12)
    out *= contrast / out.std()
    return np.clip(out + mean, 0, 255)


def shift_image(img: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Translate content by (dx, dy) pixels (bicubic, reflected borders)."""
    M = np.float32([[1, 0, dx], [0, 1, dy]])
    return cv2.warpAffine(np.asarray(img, dtype=np.float64), M, (img.shape[1], img.shape[0]),
                          flags=cv2.INTER_CUBIC, borderMode=cv2.BORDER_REFLECT)


def pan_clip(image: np.ndarray, n_frames: int, size: Tuple[int, int],
             velocity: Tuple[float, float] = (1.3, 0.6), origin: Tuple[int, int] = (0, 0),
             sprite_size: int = 0, sprite_velocity: Tuple[float, float] = (-2.1, 1.4),
             rng: Optional[np.random.Generator] = None) -> list:
    """Camera pan over ``image`` with an optional independently moving square.

    ``size`` is (height, width); ``velocity`` is the pan in pixels per frame
    (x, y). The sprite is a patch cut from the image's opposite corner.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img[..., :3] @ np.array([0.299, 0.587, 0.114])
    if img.max() <= 1.0:
        img = img * 255.0
    h, w = size
    ox, oy = origin
    sprite = None
    if sprite_size:
        sprite = img[-sprite_size:, -sprite_size:].copy()
    frames = []
    for t in range(n_frames):
        fx, fy = ox + velocity[0] * t, oy + velocity[1] * t
        ix, iy = int(np.floor(fx)), int(np.floor(fy))
        pad = 4
        crop = img[iy:iy + h + pad, ix:ix + w + pad]
        if crop.shape != (h + pad, w + pad):
            raise ValueError("pan leaves the source image; use a larger image or fewer frames")
        frame = shift_image(crop, -(fx - ix), -(fy - iy))[:h, :w]
        if sprite is not None:
            sx = w / 2 + sprite_velocity[0] * t - sprite_size / 2
            sy = h / 2 + sprite_velocity[1] * t - sprite_size / 2
            x0, y0 = int(np.floor(sx)) % (w - sprite_size), int(np.floor(sy)) % (h - sprite_size)
            frame[y0:y0 + sprite_size, x0:x0 + sprite_size] = sprite
        if rng is not None:
            frame = frame + rng.normal(0.0, 0.5, frame.shape)
        frames.append(Frame(np.clip(np.rint(frame), 0, 255), t, 8))
    return frames
