"""Binary dumps of intermediate fields and plot-ready histograms of them.

Dump layout (little-endian): magic ``CQFD``, u32 version, u32 height,
u32 width, u32 planes, then planes*height*width float32 values. A chip-frame
dump file may hold several records back to back.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import Dict, Iterable, Iterator, Sequence

import numpy as np

from ._atomic import atomic_open
from .errors import EmptyInput, MalformedHeader

DUMP_MAGIC = b"CQFD"
DUMP_VERSION = 1
_REC = struct.Struct("<4sIIII")


def encode_field(arr: np.ndarray) -> bytes:
    a = np.asarray(arr, dtype="<f4")
    if a.ndim == 2:
        a = a[None]
    planes, h, w = a.shape
    return _REC.pack(DUMP_MAGIC, DUMP_VERSION, h, w, planes) + a.tobytes()


def write_fields(path, arrays: Iterable[np.ndarray]) -> int:
    n = 0
    with atomic_open(path, "wb") as fh:
        for a in arrays:
            fh.write(encode_field(a))
            n += 1
    return n


def write_flow(path, flow) -> None:
    """Flow dump: two planes, u (columns) then v (rows)."""
    write_fields(path, [np.stack([flow.u, flow.v])])


def read_fields(path) -> Iterator[np.ndarray]:
    data = Path(path).read_bytes()
    pos = 0
    while pos < len(data):
        if len(data) - pos < _REC.size:
            raise MalformedHeader(f"{path}: truncated record header at byte {pos}")
        magic, version, h, w, planes = _REC.unpack_from(data, pos)
        if magic != DUMP_MAGIC or version != DUMP_VERSION:
            raise MalformedHeader(f"{path}: bad dump record at byte {pos}")
        pos += _REC.size
        n = planes * h * w
        if len(data) - pos < 4 * n:
            raise MalformedHeader(f"{path}: truncated record payload")
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(planes, h, w)
        pos += 4 * n
        yield arr[0] if planes == 1 else arr


def histogram(values, bins: int = 101, value_range=(-4.0, 4.0)):
    """Unit-area density histogram. Returns (bin_centres, density, bin_width)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    v = v[np.isfinite(v)]
    lo, hi = value_range
    v = v[(v >= lo) & (v <= hi)]
    if v.size == 0:
        raise EmptyInput("no samples inside the histogram range")
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    width = (hi - lo) / bins
    return 0.5 * (edges[:-1] + edges[1:]), counts / (counts.sum() * width), width


def histogram_dump(series: Dict[str, Sequence], out_path, bins: int = 101,
                   value_range=(-4.0, 4.0)) -> None:
    """CSV with one density column per labelled series, e.g. pristine vs distorted."""
    if not series:
        raise EmptyInput("no series given")
    cols = {}
    centres = None
    for label, vals in series.items():
        arrs = [np.asarray(a, dtype=np.float64).ravel() for a in vals] if isinstance(vals, (list, tuple)) else [np.asarray(vals).ravel()]
        pooled = np.concatenate(arrs) if arrs else np.zeros(0)
        try:
            centres, dens, _ = histogram(pooled, bins, value_range)
        except EmptyInput as exc:
            raise EmptyInput(f"series {label!r}: {exc}") from None
        cols[label] = dens
    with atomic_open(out_path, "w") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_centre"] + list(cols))
        for i, c in enumerate(centres):
            w.writerow([f"{c:.6g}"] + [f"{cols[k][i]:.9g}" for k in cols])
