"""Per-instant 109-feature extraction and per-video pooling.

Layout of one feature vector:

* f1-f36   chip block on pixel MSCN (see :func:`chipqa.nvs.domain_features`)
* f37-f72  same block on MSCN of the Sobel gradient magnitude
* f73-f108 mean NIQE patch features, f109 NIQE score
"""

from __future__ import annotations

import csv
import enum
import json
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import chips, niqe, nvs
from ._atomic import atomic_open
from .errors import InsufficientHistory, NoPatchSelected, VideoTooShort
from .flow import FlowParams, make_estimator, median_pool
from .spatialops import GaussianWindow, mscn_constant, mscn_with_sigma, sobel_magnitude
from .videoio import Frame, VideoSource, downsample2_array, read_luma

LAYOUT_VERSION = 1
N_FEATURES = 109
CHIP_BLOCK = slice(0, 36)
GRADIENT_BLOCK = slice(36, 72)
SPATIAL_BLOCK = slice(72, 109)


class Degeneracy(enum.IntFlag):
    NONE = 0
    PIXEL_CHIPS = 1
    GRADIENT_CHIPS = 2
    SPATIAL = 4
    NO_PRISTINE = 8


def feature_names() -> List[str]:
    return [f"f{i}" for i in range(1, N_FEATURES + 1)]


def descriptive_names() -> List[str]:
    per_scale = ["ggd_alpha", "ggd_sigma2"] + [
        f"aggd_{o}_{p}" for o in nvs.ORIENTATIONS for p in ("eta", "nu", "sigmal2", "sigmar2")
    ]
    spatial = [f"niqe_{n}_s{s}" for s in (1, 2) for n in per_scale] + ["niqe_score"]
    return nvs.domain_feature_names("chip_") + nvs.domain_feature_names("gradchip_") + spatial


@dataclass
class ExtractConfig:
    t_prime: int = chips.DEFAULT_T_PRIME
    R: int = chips.DEFAULT_T_PRIME
    allow_unequal: bool = False
    temporal_stride: int = 1
    niqe_every: int = 1
    flow: str = "farneback"
    flow_params: FlowParams = field(default_factory=FlowParams)
    window_sigma: float = 7.0 / 6.0
    window_half_width: int = 3

    def __post_init__(self):
        if isinstance(self.flow_params, dict):
            self.flow_params = FlowParams(**self.flow_params)
        if self.R != self.t_prime and not self.allow_unequal:
            raise ValueError(f"R ({self.R}) must equal T' ({self.t_prime}) unless allow_unequal is set")
        chips.ChipGeometry(self.t_prime, self.R)
        if self.temporal_stride < 1 or self.niqe_every < 1:
            raise ValueError("temporal_stride and niqe_every must be >= 1")

    @property
    def window(self) -> GaussianWindow:
        return GaussianWindow(self.window_half_width, self.window_sigma)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FeatureVector:
    values: np.ndarray
    index: int
    flags: Degeneracy = Degeneracy.NONE
    layout_version: int = LAYOUT_VERSION


@dataclass
class VideoFeatures:
    per_instant: List[FeatureVector]
    video_id: str = ""
    content_id: str = ""

    @property
    def pooled(self) -> np.ndarray:
        # mean taken around the first instant so k identical instants pool to it exactly
        X = np.stack([fv.values for fv in self.per_instant])
        return X[0] + np.mean(X - X[0], axis=0)

    @property
    def flags(self) -> Degeneracy:
        out = Degeneracy.NONE
        for fv in self.per_instant:
            out |= fv.flags
        return out


@dataclass
class _ScaleState:
    luma: np.ndarray
    mscn: np.ndarray
    grad_mscn: np.ndarray
    sigma: Optional[np.ndarray] = None


class InstantExtractor:
    """Streaming extractor: push frames in order, get feature vectors back.

    Keeps only the last T' transformed fields per scale and domain.
    ``on_chip_frame(index, scale, domain, S)`` (if given) sees every chip frame.
    """

    def __init__(self, cfg: ExtractConfig = None, model: Optional[niqe.PristineModel] = None,
                 on_chip_frame: Optional[Callable] = None, emit_from: int = 0):
        self.cfg = cfg or ExtractConfig()
        self.model = model
        self.estimator = make_estimator(self.cfg.flow, self.cfg.flow_params)
        self.window = self.cfg.window
        self.on_chip_frame = on_chip_frame
        self.emit_from = emit_from
        tp = self.cfg.t_prime
        self.history = {s: deque(maxlen=tp) for s in (1, 2)}
        self.max_history = {1: 0, 2: 0}
        self._last_spatial = None
        self.frames_seen = 0

    def _transform(self, luma: np.ndarray, C: float, keep_sigma: bool) -> _ScaleState:
        m, sigma = mscn_with_sigma(luma, self.window, C)
        g, _ = mscn_with_sigma(sobel_magnitude(luma), self.window, C)
        return _ScaleState(luma, m, g, sigma if keep_sigma else None)

    def is_instant(self, t: int) -> bool:
        k = t - (self.cfg.t_prime - 1)
        return k >= 0 and k % self.cfg.temporal_stride == 0

    def _needs_niqe(self, t: int) -> bool:
        k = (t - (self.cfg.t_prime - 1)) // self.cfg.temporal_stride
        return k % self.cfg.niqe_every == 0 or self._last_spatial is None

    def push(self, frame: Frame) -> Optional[FeatureVector]:
        t = frame.index
        C = mscn_constant(frame.bit_depth)
        s1 = self._transform(frame.luma, C, keep_sigma=True)
        s2 = self._transform(downsample2_array(frame.luma), C, keep_sigma=False)
        for s, st in ((1, s1), (2, s2)):
            self.history[s].append(st)
            self.max_history[s] = max(self.max_history[s], len(self.history[s]))
        self.frames_seen += 1
        if not self.is_instant(t) or t < self.emit_from:
            return None
        if len(self.history[1]) < self.cfg.t_prime:
            raise InsufficientHistory(f"frame {t}: {len(self.history[1])} of {self.cfg.t_prime} frames seen")
        return self._features(t, frame.bit_depth)

    def _chip_frames(self, t: int, scale: int):
        hist = list(self.history[scale])
        prev, cur = hist[-2], hist[-1]
        fl = self.estimator.estimate(prev.luma, cur.luma)
        grid = median_pool(fl, self.cfg.R)
        h, w = cur.luma.shape
        lines = chips.grid_lines(grid, w, h)
        out = {}
        for domain in ("pixel", "gradient"):
            vol = np.stack([getattr(st, "mscn" if domain == "pixel" else "grad_mscn") for st in hist])
            S = chips.aggregate_chips(vol, grid, self.cfg.t_prime, lines=lines)
            if self.on_chip_frame is not None:
                self.on_chip_frame(t, scale, domain, S)
            out[domain] = S
        return out

    def _features(self, t: int, bit_depth: int) -> FeatureVector:
        c1 = self._chip_frames(t, 1)
        c2 = self._chip_frames(t, 2)
        flags = Degeneracy.NONE
        pix, bad = nvs.domain_features(c1["pixel"], c2["pixel"])
        if bad:
            flags |= Degeneracy.PIXEL_CHIPS
        grad, bad = nvs.domain_features(c1["gradient"], c2["gradient"])
        if bad:
            flags |= Degeneracy.GRADIENT_CHIPS
        if self._needs_niqe(t):
            self._last_spatial = self._spatial()
        spatial, sbad = self._last_spatial
        if sbad:
            flags |= Degeneracy.SPATIAL
        if self.model is None:
            flags |= Degeneracy.NO_PRISTINE
        vec = np.concatenate([pix, grad, spatial])
        return FeatureVector(vec, t, flags)

    def _spatial(self):
        cur1 = self.history[1][-1]
        cur2 = self.history[2][-1]
        size = self.model.patch_size if self.model is not None else niqe.PATCH_SIZE
        thr = self.model.sharpness_threshold if self.model is not None else niqe.SHARPNESS_THRESHOLD
        h, w = cur1.luma.shape
        feats = None
        if h >= 2 * size and w >= 2 * size:
            try:
                feats = niqe.patch_features_from_fields(cur1.mscn, cur1.sigma, cur2.mscn, size, thr)
            except NoPatchSelected:
                feats = None
        return niqe.spatial_block_from_features(feats, self.model)


def extract_instant(history: Sequence[Frame], model: Optional[niqe.PristineModel] = None,
                    cfg: ExtractConfig = None) -> FeatureVector:
    """Feature vector at the time of the last frame in ``history`` (needs T' frames)."""
    cfg = cfg or ExtractConfig()
    if len(history) < cfg.t_prime:
        raise InsufficientHistory(f"{len(history)} frames given, need {cfg.t_prime}")
    window = list(history)[-cfg.t_prime:]
    ex = InstantExtractor(
        ExtractConfig(**{**cfg.to_dict(), "temporal_stride": 1, "niqe_every": 1}), model
    )
    out = None
    for i, f in enumerate(window):
        out = ex.push(Frame(f.luma, i, f.bit_depth))
    return FeatureVector(out.values, window[-1].index, out.flags)


def _instant_indices(n_frames: int, cfg: ExtractConfig) -> List[int]:
    return list(range(cfg.t_prime - 1, n_frames, cfg.temporal_stride))


def _run_range(frames_at: Callable[[int], Frame], first: int, last: int, cfg, model, on_chip_frame=None):
    """Emit instants in [first, last], reading frames from first - (T'-1)."""
    ex = InstantExtractor(cfg, model, on_chip_frame, emit_from=first)
    out = []
    for t in range(max(0, first - (cfg.t_prime - 1)), last + 1):
        fv = ex.push(frames_at(t))
        if fv is not None:
            out.append(fv)
    return out, ex


def _chunks(instants: List[int], jobs: int, niqe_every: int) -> List[List[int]]:
    # Chunk boundaries fall on NIQE refresh points so every chunk starts fresh.
    groups = [instants[i:i + niqe_every] for i in range(0, len(instants), niqe_every)]
    per = -(-len(groups) // max(1, jobs))
    return [sum(groups[i:i + per], []) for i in range(0, len(groups), per)]


def _worker(src: VideoSource, first: int, last: int, cfg: ExtractConfig, model):
    import cv2

    cv2.setNumThreads(1)
    out, _ = _run_range(lambda t: read_luma(src, t), first, last, cfg, model)
    return out


def extract_video(src: VideoSource, cfg: ExtractConfig = None, model: Optional[niqe.PristineModel] = None,
                  video_id: str = "", content_id: str = "", jobs: int = 1,
                  on_chip_frame: Optional[Callable] = None) -> VideoFeatures:
    """Stream ``src`` once (per worker) and return per-instant and pooled features."""
    cfg = cfg or ExtractConfig()
    if src.frame_count < cfg.t_prime:
        raise VideoTooShort(f"{src.path}: {src.frame_count} frames, need {cfg.t_prime}")
    instants = _instant_indices(src.frame_count, cfg)
    last_needed = instants[-1]
    if jobs <= 1 or on_chip_frame is not None or len(instants) < 2:
        out, _ = _run_range(lambda t: read_luma(src, t), instants[0], last_needed, cfg, model, on_chip_frame)
    else:
        chunks = _chunks(instants, jobs, cfg.niqe_every)
        with ProcessPoolExecutor(max_workers=min(jobs, len(chunks))) as pool:
            futures = [pool.submit(_worker, src, c[0], c[-1], cfg, model) for c in chunks]
            out = [fv for fut in futures for fv in fut.result()]
    return VideoFeatures(out, video_id or os.path.splitext(os.path.basename(src.path))[0], content_id)


def extract_frames(frames, cfg: ExtractConfig = None, model: Optional[niqe.PristineModel] = None,
                   video_id: str = "", content_id: str = "", bit_depth: int = 8,
                   on_chip_frame: Optional[Callable] = None) -> VideoFeatures:
    """In-memory variant of :func:`extract_video` for a (T, H, W) array or frame list."""
    cfg = cfg or ExtractConfig()
    frames = [f if isinstance(f, Frame) else Frame(np.asarray(f, dtype=np.float64), i, bit_depth)
              for i, f in enumerate(frames)]
    if len(frames) < cfg.t_prime:
        raise VideoTooShort(f"{len(frames)} frames, need {cfg.t_prime}")
    instants = _instant_indices(len(frames), cfg)
    out, _ = _run_range(lambda t: Frame(frames[t].luma, t, frames[t].bit_depth),
                        instants[0], instants[-1], cfg, model, on_chip_frame)
    return VideoFeatures(out, video_id, content_id)


def write_features_csv(path, videos: Sequence[VideoFeatures], per_instant: bool = False) -> None:
    header = feature_names() + ["video_id", "content_id"] + (["instant"] if per_instant else [])
    with atomic_open(path, "w") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for vf in videos:
            rows = [(fv.values, [fv.index]) for fv in vf.per_instant] if per_instant else [(vf.pooled, [])]
            for vals, extra in rows:
                w.writerow([repr(float(x)) for x in vals] + [vf.video_id, vf.content_id] + extra)


def write_sidecar(path, videos: Sequence[VideoFeatures], cfg: ExtractConfig, extra: Optional[dict] = None) -> None:
    doc = {
        "layout_version": LAYOUT_VERSION,
        "n_features": N_FEATURES,
        "feature_names": descriptive_names(),
        "config": cfg.to_dict(),
        "videos": [
            {
                "video_id": vf.video_id,
                "content_id": vf.content_id,
                "n_instants": len(vf.per_instant),
                "degeneracy_flags": int(vf.flags),
                "degeneracy": [f.name for f in Degeneracy if f and f in vf.flags],
                "instant_flags": [int(fv.flags) for fv in vf.per_instant],
            }
            for vf in videos
        ],
    }
    if extra:
        doc.update(extra)
    with atomic_open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=str)


def read_features_csv(path):
    """Return ``(X, video_ids, content_ids)`` from a pooled feature CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    names = feature_names()
    if not rows:
        return np.zeros((0, N_FEATURES)), [], []
    missing = [n for n in names if n not in rows[0]]
    if missing:
        raise ValueError(f"{path}: missing feature columns {missing[:3]}...")
    X = np.array([[float(r[n]) for n in names] for r in rows])
    return X, [r["video_id"] for r in rows], [r.get("content_id", "") or r["video_id"] for r in rows]
