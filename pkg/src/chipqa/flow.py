"""Dense two-frame optical flow and per-patch median pooling.

Any object with ``estimate(prev, next) -> FlowField`` can stand in for the
Farneback estimator (see :class:`ZeroFlow`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import cv2
import numpy as np

from .errors import DimensionMismatch, FrameTooSmall

# OpenCV's Farneback treats the outermost row/column as out of range for
# interpolation and reports spurious motion there; estimating on a mirrored
# margin and cropping removes it.
FLOW_MARGIN = 8


@dataclass(frozen=True)
class FlowParams:
    levels: int = 3
    pyr_scale: float = 0.5
    winsize: int = 15
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.1


@dataclass(frozen=True)
class FlowField:
    u: np.ndarray
    v: np.ndarray

    @property
    def shape(self):
        return self.u.shape


@dataclass(frozen=True)
class PatchFlowGrid:
    med_u: np.ndarray
    med_v: np.ndarray
    patch_size: int

    @property
    def shape(self):
        return self.med_u.shape


class FlowEstimator(Protocol):
    name: str

    def estimate(self, prev: np.ndarray, next: np.ndarray) -> FlowField: ...


def _plane(f) -> np.ndarray:
    return np.asarray(getattr(f, "luma", f))


def estimate_flow(prev, next, params: FlowParams = FlowParams()) -> FlowField:
    """Farneback flow mapping ``prev`` onto ``next`` (u: columns, v: rows)."""
    a, b = _plane(prev), _plane(next)
    if a.shape != b.shape:
        raise DimensionMismatch(f"flow frames differ: {a.shape} vs {b.shape}")
    if min(a.shape) < 2 * params.poly_n:
        raise FrameTooSmall(f"frame {a.shape} too small for flow (poly_n={params.poly_n})")
    m = FLOW_MARGIN
    pa = cv2.copyMakeBorder(a.astype(np.float32), m, m, m, m, cv2.BORDER_REFLECT_101)
    pb = cv2.copyMakeBorder(b.astype(np.float32), m, m, m, m, cv2.BORDER_REFLECT_101)
    flow = cv2.calcOpticalFlowFarneback(
        pa, pb, None, params.pyr_scale, params.levels, params.winsize, params.iterations,
        params.poly_n, params.poly_sigma, 0,
    )[m:m + a.shape[0], m:m + a.shape[1]]
    return FlowField(u=flow[..., 0].astype(np.float64), v=flow[..., 1].astype(np.float64))


class FarnebackFlow:
    name = "farneback"

    def __init__(self, params: FlowParams = FlowParams()):
        self.params = params

    def estimate(self, prev, next) -> FlowField:
        return estimate_flow(prev, next, self.params)


class ZeroFlow:
    """Stub estimator reporting no motion anywhere (ablation baseline)."""

    name = "zero"

    def estimate(self, prev, next) -> FlowField:
        a, b = _plane(prev), _plane(next)
        if a.shape != b.shape:
            raise DimensionMismatch(f"flow frames differ: {a.shape} vs {b.shape}")
        z = np.zeros(a.shape, dtype=np.float64)
        return FlowField(u=z, v=z.copy())


def make_estimator(name: str, params: FlowParams = FlowParams()) -> FlowEstimator:
    if name == "farneback":
        return FarnebackFlow(params)
    if name == "zero":
        return ZeroFlow()
    raise ValueError(f"unknown flow estimator {name!r}")


def _block_lower_median(a: np.ndarray, R: int) -> np.ndarray:
    gh, gw = a.shape[0] // R, a.shape[1] // R
    blocks = a[: gh * R, : gw * R].reshape(gh, R, gw, R).transpose(0, 2, 1, 3).reshape(gh, gw, R * R)
    k = (R * R - 1) // 2
    return np.partition(blocks, k, axis=-1)[..., k]


def median_pool(flow: FlowField, R: int) -> PatchFlowGrid:
    """Coordinate-wise median over complete, non-overlapping RxR blocks.

    Even-sized blocks take the lower-middle order statistic.
    """
    if R < 1:
        raise ValueError("patch size must be >= 1")
    h, w = flow.u.shape
    if h < R or w < R:
        raise FrameTooSmall(f"flow {w}x{h} smaller than {R}x{R} patch")
    return PatchFlowGrid(_block_lower_median(flow.u, R), _block_lower_median(flow.v, R), R)
