"""Space-time chips: motion-perpendicular cuts through a short MSCN volume.

For each RxR patch a line of R samples is drawn through the patch centre,
perpendicular to the patch's median flow, and the same line is read from each
of the T' fields in the volume. The R x T' chips are tiled into one frame
(rows: position along the line, columns: time).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, InsufficientHistory
from .flow import PatchFlowGrid

DEFAULT_T_PRIME = 5
ZERO_FLOW_EPS = 1e-6


@dataclass(frozen=True)
class ChipGeometry:
    t_prime: int = DEFAULT_T_PRIME
    R: int = DEFAULT_T_PRIME

    def __post_init__(self):
        if self.R < 1 or self.R % 2 == 0:
            raise ValueError(f"chip length R must be odd, got {self.R}")
        if self.t_prime < 2:
            raise ValueError("T' must be at least 2")


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def chip_directions(u, v):
    """Unit vectors perpendicular to (u, v), angle folded into [0, pi).

    Near-zero flow falls back to (1, 0).
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    norm = np.hypot(u, v)
    still = norm < ZERO_FLOW_EPS
    safe = np.where(still, 1.0, norm)
    dx = np.where(still, 1.0, -v / safe)
    dy = np.where(still, 0.0, u / safe)
    # a vanishing component would otherwise fold the angle onto pi itself
    dx = np.where(np.abs(dx) < 1e-12, 0.0, dx)
    dy = np.where(np.abs(dy) < 1e-12, 0.0, dy)
    flip = (dy < 0) | ((dy == 0) & (dx < 0))
    dx = np.where(flip, -dx, dx) + 0.0
    dy = np.where(flip, -dy, dy) + 0.0
    return dx, dy


def _line_points(u, v, cx, cy, R: int, width: int, height: int):
    dx, dy = chip_directions(u, v)
    off = np.arange(R, dtype=np.float64) - (R - 1) / 2.0
    xs = _round_half_away(np.asarray(cx, dtype=np.float64)[..., None] + off * np.asarray(dx)[..., None])
    ys = _round_half_away(np.asarray(cy, dtype=np.float64)[..., None] + off * np.asarray(dy)[..., None])
    xs = np.clip(xs, 0, width - 1).astype(np.intp)
    ys = np.clip(ys, 0, height - 1).astype(np.intp)
    return xs, ys


def perpendicular_line(median_flow, center, R: int, bounds):
    """R integer (x, y) points through ``center`` perpendicular to ``median_flow``."""
    if R % 2 == 0:
        raise ValueError("R must be odd")
    (u, v), (cx, cy), (w, h) = median_flow, center, bounds
    if not (0 <= cx < w and 0 <= cy < h):
        raise ValueError(f"centre {center} outside {w}x{h}")
    xs, ys = _line_points(u, v, cx, cy, R, w, h)
    return [(int(x), int(y)) for x, y in zip(xs, ys)]


def _as_volume(volume) -> np.ndarray:
    if isinstance(volume, np.ndarray):
        return volume
    return np.stack([np.asarray(f) for f in volume])


def extract_chip(volume, line, t_prime: Optional[int] = None) -> np.ndarray:
    """Gather one R x T' chip: ``chip[k, t] = volume[t][y_k, x_k]``."""
    vol = _as_volume(volume)
    if t_prime is not None and vol.shape[0] < t_prime:
        raise InsufficientHistory(f"need {t_prime} fields, have {vol.shape[0]}")
    xs = np.array([p[0] for p in line], dtype=np.intp)
    ys = np.array([p[1] for p in line], dtype=np.intp)
    return vol[:, ys, xs].T.copy()


def grid_lines(grid: PatchFlowGrid, width: int, height: int):
    """Line coordinates for every patch: two (gh, gw, R) index arrays."""
    R = grid.patch_size
    gh, gw = grid.shape
    half = (R - 1) // 2
    cy, cx = np.meshgrid(np.arange(gh) * R + half, np.arange(gw) * R + half, indexing="ij")
    return _line_points(grid.med_u, grid.med_v, cx, cy, R, width, height)


def aggregate_chips(volume, grid: PatchFlowGrid, t_prime: Optional[int] = None,
                    lines=None) -> np.ndarray:
    """Tile every patch's chip into the chip frame of shape (gh*R, gw*T')."""
    vol = _as_volume(volume)
    if t_prime is not None and vol.shape[0] < t_prime:
        raise InsufficientHistory(f"need {t_prime} fields, have {vol.shape[0]}")
    tp, h, w = vol.shape
    R = grid.patch_size
    gh, gw = grid.shape
    if (gh, gw) != (h // R, w // R):
        raise DimensionMismatch(f"flow grid {grid.shape} does not tile {w}x{h} with R={R}")
    xs, ys = grid_lines(grid, w, h) if lines is None else lines
    vals = vol[:, ys, xs]  # (T', gh, gw, R)
    return np.ascontiguousarray(vals.transpose(1, 3, 2, 0).reshape(gh * R, gw * tp))
