"""Y4M / raw planar YUV luma reader and writer, plus the 2:1 low-pass decimator."""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Optional

import cv2
import numpy as np

from ._atomic import atomic_open
from .errors import (
    FrameTooSmall,
    GeometryRequired,
    IndexOutOfRange,
    MalformedHeader,
    TruncatedPayload,
)

Y4M_MAGIC = b"YUV4MPEG2"
PIXEL_FORMATS = ("420", "422", "444", "mono")

# Y4M colorspace tag -> (pixel format, bit depth)
_Y4M_COLORSPACES = {
    "420": ("420", 8),
    "420jpeg": ("420", 8),
    "420paldv": ("420", 8),
    "420mpeg2": ("420", 8),
    "422": ("422", 8),
    "444": ("444", 8),
    "mono": ("mono", 8),
    "420p10": ("420", 10),
    "422p10": ("422", 10),
    "444p10": ("444", 10),
    "mono10": ("mono", 10),
}


def chroma_samples(width: int, height: int, pix_fmt: str) -> int:
    """Number of samples in both chroma planes together."""
    cw, ch = (width + 1) // 2, (height + 1) // 2
    if pix_fmt == "420":
        return 2 * cw * ch
    if pix_fmt == "422":
        return 2 * cw * height
    if pix_fmt == "444":
        return 2 * width * height
    if pix_fmt == "mono":
        return 0
    raise ValueError(f"unsupported pixel format {pix_fmt!r}")


def frame_bytes(width: int, height: int, pix_fmt: str, bit_depth: int) -> int:
    bps = 1 if bit_depth <= 8 else 2
    return (width * height + chroma_samples(width, height, pix_fmt)) * bps


@dataclass(frozen=True)
class Frame:
    luma: np.ndarray
    index: int = 0
    bit_depth: int = 8

    @property
    def height(self) -> int:
        return self.luma.shape[0]

    @property
    def width(self) -> int:
        return self.luma.shape[1]

    @property
    def peak(self) -> int:
        return (1 << self.bit_depth) - 1


@dataclass(frozen=True)
class VideoSource:
    path: str
    width: int
    height: int
    frame_count: int
    bit_depth: int = 8
    pixel_format: str = "420"
    frame_rate: Fraction = Fraction(30, 1)
    container: str = "raw"
    # byte offset of each frame's luma plane
    offsets: tuple = field(default=(), repr=False)
    trailing_bytes: int = 0

    @property
    def frame_size(self) -> int:
        return frame_bytes(self.width, self.height, self.pixel_format, self.bit_depth)


def _parse_y4m_header(line: bytes) -> dict:
    parts = line.rstrip(b"\n").split(b" ")
    if parts[0] != Y4M_MAGIC:
        raise MalformedHeader(f"bad Y4M magic {parts[0][:16]!r}")
    info = {"colorspace": "420jpeg", "frame_rate": Fraction(30, 1)}
    for tok in parts[1:]:
        if not tok:
            continue
        tag, val = chr(tok[0]), tok[1:].decode("ascii", "replace")
        try:
            if tag == "W":
                info["width"] = int(val)
            elif tag == "H":
                info["height"] = int(val)
            elif tag == "F":
                num, den = val.split(":")
                info["frame_rate"] = Fraction(int(num), int(den) or 1)
            elif tag == "C":
                info["colorspace"] = val
        except ValueError as exc:
            raise MalformedHeader(f"bad Y4M tag {tok!r}") from exc
    if "width" not in info or "height" not in info:
        raise MalformedHeader("Y4M header lacks W or H")
    if info["colorspace"] not in _Y4M_COLORSPACES:
        raise MalformedHeader(f"unsupported Y4M colorspace C{info['colorspace']}")
    return info


def _open_y4m(path: str) -> VideoSource:
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        header = fh.readline(4096)
        if not header.endswith(b"\n"):
            raise MalformedHeader("unterminated Y4M header")
        info = _parse_y4m_header(header)
        pix_fmt, depth = _Y4M_COLORSPACES[info["colorspace"]]
        w, h = info["width"], info["height"]
        fbytes = frame_bytes(w, h, pix_fmt, depth)
        offsets = []
        pos = fh.tell()
        trailing = 0
        while pos < size:
            fh.seek(pos)
            marker = fh.readline(1024)
            if not marker.startswith(b"FRAME") or not marker.endswith(b"\n"):
                trailing = size - pos
                break
            data_at = pos + len(marker)
            if data_at + fbytes > size:
                trailing = size - pos
                break
            offsets.append(data_at)
            pos = data_at + fbytes
    if trailing:
        warnings.warn(
            TruncatedPayload(f"{path}: {trailing} trailing bytes ignored, {len(offsets)} whole frames"),
            stacklevel=3,
        )
    return VideoSource(
        path=path, width=w, height=h, frame_count=len(offsets), bit_depth=depth,
        pixel_format=pix_fmt, frame_rate=info["frame_rate"], container="y4m",
        offsets=tuple(offsets), trailing_bytes=trailing,
    )


def open_source(path, geometry: Optional[dict] = None) -> VideoSource:
    """Open a Y4M or raw planar YUV file.

    ``geometry`` is ``{"width", "height", "format", "depth"}``; required for raw
    files and ignored for Y4M (the header wins).
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        head = fh.read(len(Y4M_MAGIC))
    if head == Y4M_MAGIC or path.lower().endswith(".y4m"):
        return _open_y4m(path)
    if not geometry or "width" not in geometry or "height" not in geometry:
        raise GeometryRequired(f"{path}: raw YUV needs --width/--height")
    w, h = int(geometry["width"]), int(geometry["height"])
    pix_fmt = str(geometry.get("format", "420"))
    depth = int(geometry.get("depth", 8))
    if pix_fmt not in PIXEL_FORMATS:
        raise ValueError(f"unsupported pixel format {pix_fmt!r}")
    if depth not in (8, 10):
        raise ValueError(f"unsupported bit depth {depth}")
    size = os.path.getsize(path)
    fbytes = frame_bytes(w, h, pix_fmt, depth)
    count, trailing = divmod(size, fbytes)
    if trailing:
        warnings.warn(
            TruncatedPayload(f"{path}: {trailing} trailing bytes ignored, {count} whole frames"),
            stacklevel=2,
        )
    return VideoSource(
        path=path, width=w, height=h, frame_count=count, bit_depth=depth,
        pixel_format=pix_fmt, frame_rate=Fraction(geometry.get("fps", 30)),
        container="raw", offsets=tuple(i * fbytes for i in range(count)),
        trailing_bytes=trailing,
    )


def read_luma(src: VideoSource, t: int) -> Frame:
    if not 0 <= t < src.frame_count:
        raise IndexOutOfRange(f"frame {t} outside [0, {src.frame_count})")
    dtype = np.uint8 if src.bit_depth <= 8 else np.dtype("<u2")
    n = src.width * src.height
    with open(src.path, "rb") as fh:
        fh.seek(src.offsets[t])
        plane = np.fromfile(fh, dtype=dtype, count=n)
    if plane.size != n:
        raise IndexOutOfRange(f"frame {t} is truncated")
    luma = plane.reshape(src.height, src.width).astype(np.float64)
    return Frame(luma=luma, index=t, bit_depth=src.bit_depth)


def iter_luma(src: VideoSource, start: int = 0, stop: Optional[int] = None) -> Iterator[Frame]:
    stop = src.frame_count if stop is None else min(stop, src.frame_count)
    for t in range(start, stop):
        yield read_luma(src, t)


def _plane_bytes(arr: np.ndarray, bit_depth: int) -> bytes:
    peak = (1 << bit_depth) - 1
    q = np.clip(np.rint(arr), 0, peak)
    return q.astype(np.uint8 if bit_depth <= 8 else "<u2").tobytes()


def _neutral_chroma(width: int, height: int, pix_fmt: str, bit_depth: int) -> bytes:
    n = chroma_samples(width, height, pix_fmt)
    mid = 1 << (bit_depth - 1)
    return np.full(n, mid, dtype=np.uint8 if bit_depth <= 8 else "<u2").tobytes()


def _y4m_colorspace(pix_fmt: str, bit_depth: int) -> str:
    if bit_depth == 8:
        return pix_fmt
    return f"{pix_fmt}p{bit_depth}" if pix_fmt != "mono" else f"mono{bit_depth}"


def write_y4m(path, frames: Iterable, pix_fmt: str = "420", bit_depth: int = 8,
              frame_rate: Fraction = Fraction(30, 1)) -> int:
    """Write luma planes (2-D arrays or Frames) as Y4M with neutral chroma.

    Returns the number of frames written.
    """
    count = 0
    with atomic_open(path, "wb") as fh:
        chroma = None
        for f in frames:
            arr = f.luma if isinstance(f, Frame) else np.asarray(f)
            h, w = arr.shape
            if chroma is None:
                fr = Fraction(frame_rate)
                fh.write(
                    f"YUV4MPEG2 W{w} H{h} F{fr.numerator}:{fr.denominator} Ip A1:1 "
                    f"C{_y4m_colorspace(pix_fmt, bit_depth)}\n".encode("ascii")
                )
                chroma = _neutral_chroma(w, h, pix_fmt, bit_depth)
            fh.write(b"FRAME\n")
            fh.write(_plane_bytes(arr, bit_depth))
            fh.write(chroma)
            count += 1
    return count


def write_raw(path, frames: Iterable, pix_fmt: str = "420", bit_depth: int = 8) -> int:
    """Write planar Y,U,V per frame (little-endian 16-bit words for 10-bit)."""
    count = 0
    with atomic_open(path, "wb") as fh:
        chroma = None
        for f in frames:
            arr = f.luma if isinstance(f, Frame) else np.asarray(f)
            if chroma is None:
                chroma = _neutral_chroma(arr.shape[1], arr.shape[0], pix_fmt, bit_depth)
            fh.write(_plane_bytes(arr, bit_depth))
            fh.write(chroma)
            count += 1
    return count


def _gauss_taps(sigma: float = 1.0, radius: int = 2) -> np.ndarray:
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (k / sigma) ** 2)
    return g / g.sum()


DOWNSAMPLE_TAPS = _gauss_taps()


def lowpass(arr: np.ndarray) -> np.ndarray:
    """Separable 5x5 Gaussian (sigma 1), whole-sample reflected borders."""
    return cv2.sepFilter2D(np.asarray(arr, dtype=np.float64), cv2.CV_64F, DOWNSAMPLE_TAPS,
                           DOWNSAMPLE_TAPS, borderType=cv2.BORDER_REFLECT_101)


def downsample2_array(arr: np.ndarray) -> np.ndarray:
    h, w = arr.shape
    if h < 2 or w < 2:
        raise FrameTooSmall(f"cannot halve a {w}x{h} frame")
    return lowpass(arr)[0:2 * (h // 2):2, 0:2 * (w // 2):2]


def downsample2(f: Frame) -> Frame:
    return Frame(luma=downsample2_array(f.luma), index=f.index, bit_depth=f.bit_depth)
