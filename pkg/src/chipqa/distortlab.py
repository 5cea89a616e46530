"""Synthetic distortions for building small labelled corpora.

Every kind preserves the sequence length and is deterministic for a given seed.
Parameters grow strictly with severity (1..5).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import cv2
import numpy as np

from .chips import DEFAULT_T_PRIME
from .errors import TooShort
from .videoio import Frame

KINDS = ("frame_drop", "judder", "flicker", "blur", "noise", "interlace_sim")
MAX_SEVERITY = 5
FLICKER_PERIOD = 4
INTERLACE_CYCLE = 5


@dataclass(frozen=True)
class DistortionSpec:
    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distortion {self.kind!r}; choose from {', '.join(KINDS)}")
        if not 1 <= int(self.severity) <= MAX_SEVERITY:
            raise ValueError(f"severity must be in 1..{MAX_SEVERITY} (leave the clip untouched for 0)")


def mos_proxy(severity: int) -> float:
    """Stand-in opinion score for a synthetic corpus; 100 for pristine."""
    return 100.0 - 18.0 * severity


def _hold_drops(n: int, k: int, rng) -> np.ndarray:
    # kept runs of 2..4 frames, then k frames that repeat the last kept one
    src = np.arange(n)
    t = int(rng.integers(1, 4))
    while t < n:
        src[t:t + k] = src[t - 1]
        t += k + int(rng.integers(2, 5))
    return src


def _judder(n: int, s: int, rng) -> np.ndarray:
    # show every (s+1)-th source frame s+1 times: motion advances in uneven jumps
    period = s + 1
    phase = int(rng.integers(0, period))
    t = np.arange(n)
    return np.clip(period * ((t + phase) // period) - phase, 0, n - 1)


def _interlace_weave(cur: np.ndarray, nxt: np.ndarray) -> np.ndarray:
    out = cur.copy()
    out[1::2] = nxt[1::2]
    return out


def frame_index_map(spec: DistortionSpec, n: int) -> np.ndarray:
    """Source frame shown at each output slot (temporal kinds only)."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "frame_drop":
        return _hold_drops(n, spec.severity, rng)
    if spec.kind == "judder":
        return _judder(n, spec.severity, rng)
    return np.arange(n)


def apply(spec: DistortionSpec, frames: Sequence, t_prime: int = DEFAULT_T_PRIME) -> list:
    """Distorted copy of ``frames`` (Frames or 2-D arrays), as Frames."""
    frames = [f if isinstance(f, Frame) else Frame(np.asarray(f, dtype=np.float64), i, 8)
              for i, f in enumerate(frames)]
    n = len(frames)
    if n < t_prime:
        raise TooShort(f"{n} frames, need at least {t_prime}")
    s = int(spec.severity)
    rng = np.random.default_rng(spec.seed)
    bd = frames[0].bit_depth
    peak = float((1 << bd) - 1)
    scale = peak / 255.0  # severities are in 8-bit code values
    lumas = [f.luma for f in frames]

    if spec.kind in ("frame_drop", "judder"):
        idx = frame_index_map(spec, n)
        out = [lumas[i].copy() for i in idx]
    elif spec.kind == "blur":
        out = [cv2.GaussianBlur(y, (0, 0), sigmaX=float(s), borderType=cv2.BORDER_REFLECT_101) for y in lumas]
    elif spec.kind == "noise":
        out = [y + rng.normal(0.0, 2.0 * s * scale, y.shape) for y in lumas]
    elif spec.kind == "flicker":
        # gain modulation: swing of 4*s code values at the clip's mean luminance
        mean = max(float(np.mean([y.mean() for y in lumas])), 1.0)
        phase = rng.uniform(0, 2 * np.pi)
        amp = 4.0 * s * scale
        out = [y * (1.0 + amp / mean * np.sin(2 * np.pi * t / FLICKER_PERIOD + phase))
               for t, y in enumerate(lumas)]
    else:  # interlace_sim
        start = int(rng.integers(0, INTERLACE_CYCLE))
        out = []
        for t, y in enumerate(lumas):
            woven = (t + start) % INTERLACE_CYCLE < s and t + 1 < n
            out.append(_interlace_weave(y, lumas[t + 1]) if woven else y.copy())
    return [Frame(np.clip(np.rint(y), 0.0, peak), t, bd) for t, y in enumerate(out)]
