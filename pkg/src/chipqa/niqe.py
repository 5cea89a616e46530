"""NIQE-style spatial naturalness features and score.

Per patch: GGD fit of the MSCN coefficients and AGGD fits of their four
paired products, at full and half resolution (36 values). A pristine model
is the mean/covariance of those vectors over a corpus of natural frames; the
score is the Mahalanobis-like distance between the model and the test frame's
own patch Gaussian.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import nvs
from ._atomic import atomic_open
from .errors import CorruptModel, FrameTooSmall, InsufficientCorpus, NoPatchSelected
from .spatialops import DEFAULT_WINDOW, mscn_constant, mscn_with_sigma
from .videoio import downsample2_array

PATCH_SIZE = 96
SHARPNESS_THRESHOLD = 0.75
N_FEATURES = 36
MIN_CORPUS_FRAMES = 10
MIN_CORPUS_PATCHES = 500

MODEL_MAGIC = b"NIQM"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True)
class PristineModel:
    mean: np.ndarray
    covariance: np.ndarray
    patch_size: int = PATCH_SIZE
    sharpness_threshold: float = SHARPNESS_THRESHOLD


def _patch_stack(field: np.ndarray, rows, cols, size: int) -> np.ndarray:
    return np.stack([field[r * size:(r + 1) * size, c * size:(c + 1) * size] for r, c in zip(rows, cols)])


def _scale_features(patches: np.ndarray) -> np.ndarray:
    n = patches.shape[0]
    alpha, sigma_sq, _ = nvs.ggd_batch(patches.reshape(n, -1))
    cols = [alpha, sigma_sq]
    prods = (
        patches[:, :, :-1] * patches[:, :, 1:],
        patches[:, :-1, :] * patches[:, 1:, :],
        patches[:, :-1, :-1] * patches[:, 1:, 1:],
        patches[:, :-1, 1:] * patches[:, 1:, :-1],
    )
    for p in prods:
        eta, nu, sl, sr, _ = nvs.aggd_batch(p.reshape(n, -1))
        cols += [eta, nu, sl, sr]
    return np.column_stack(cols)


def select_patches(sigma: np.ndarray, patch_size: int, threshold: float = SHARPNESS_THRESHOLD):
    """Grid indices of patches whose mean local sigma reaches ``threshold`` x the sharpest."""
    nh, nw = sigma.shape[0] // patch_size, sigma.shape[1] // patch_size
    blocks = sigma[: nh * patch_size, : nw * patch_size].reshape(nh, patch_size, nw, patch_size)
    sharp = blocks.mean(axis=(1, 3))
    top = sharp.max() if sharp.size else 0.0
    if top <= 1e-9:
        raise NoPatchSelected("no patch has any local contrast")
    rows, cols = np.nonzero(sharp >= threshold * top)
    return rows, cols


def patch_features_from_fields(mscn1, sigma1, mscn2, patch_size: int = PATCH_SIZE,
                               threshold: float = SHARPNESS_THRESHOLD) -> np.ndarray:
    """Per-patch 36-vectors given full-scale MSCN/sigma and half-scale MSCN."""
    rows, cols = select_patches(sigma1, patch_size, threshold)
    half = patch_size // 2
    f1 = _scale_features(_patch_stack(mscn1, rows, cols, patch_size))
    f2 = _scale_features(_patch_stack(mscn2, rows, cols, half))
    return np.hstack([f1, f2])


def _check_frame(img: np.ndarray, patch_size: int):
    if img.shape[0] < 2 * patch_size or img.shape[1] < 2 * patch_size:
        raise FrameTooSmall(f"frame {img.shape[1]}x{img.shape[0]} smaller than 2x{patch_size} patches")


def niqe_patch_features(frame, patch_size: int = PATCH_SIZE,
                        threshold: float = SHARPNESS_THRESHOLD) -> np.ndarray:
    img = np.asarray(getattr(frame, "luma", frame), dtype=np.float64)
    _check_frame(img, patch_size)
    C = mscn_constant(getattr(frame, "bit_depth", 8))
    m1, s1 = mscn_with_sigma(img, DEFAULT_WINDOW, C)
    m2, _ = mscn_with_sigma(downsample2_array(img), DEFAULT_WINDOW, C)
    return patch_features_from_fields(m1, s1, m2, patch_size, threshold)


def fit_pristine(corpus: Iterable, patch_size: int = PATCH_SIZE,
                 threshold: float = SHARPNESS_THRESHOLD) -> PristineModel:
    feats = []
    n_frames = 0
    for frame in corpus:
        n_frames += 1
        try:
            feats.append(niqe_patch_features(frame, patch_size, threshold))
        except NoPatchSelected:
            continue
    if n_frames < MIN_CORPUS_FRAMES:
        raise InsufficientCorpus(f"{n_frames} frames, need {MIN_CORPUS_FRAMES}")
    n_patches = sum(len(f) for f in feats)
    if n_patches < MIN_CORPUS_PATCHES:
        raise InsufficientCorpus(f"{n_patches} selected patches, need {MIN_CORPUS_PATCHES}")
    X = np.vstack(feats)
    return PristineModel(X.mean(axis=0), np.cov(X, rowvar=False), patch_size, threshold)


def niqe_distance(mu1, cov1, mu2, cov2) -> float:
    d = np.asarray(mu1) - np.asarray(mu2)
    pooled = (np.asarray(cov1) + np.asarray(cov2)) / 2.0
    q = float(d @ np.linalg.pinv(pooled, hermitian=True) @ d)
    return float(np.sqrt(max(q, 0.0)))


def _frame_stats(feats: np.ndarray):
    mu = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False) if len(feats) > 1 else np.zeros((feats.shape[1],) * 2)
    return mu, cov


def niqe_score(frame, model: PristineModel) -> float:
    feats = niqe_patch_features(frame, model.patch_size, model.sharpness_threshold)
    mu, cov = _frame_stats(feats)
    return niqe_distance(model.mean, model.covariance, mu, cov)


def spatial_block_from_features(feats: Optional[np.ndarray], model: Optional[PristineModel]):
    """37-vector (mean patch features + score) and a degeneracy flag."""
    if feats is None or len(feats) == 0:
        return np.zeros(N_FEATURES + 1), True
    mu, cov = _frame_stats(feats)
    score = 0.0 if model is None else niqe_distance(model.mean, model.covariance, mu, cov)
    return np.append(mu, score), False


def spatial_block(frame, model: Optional[PristineModel]):
    """Spatial features for one frame; never raises on flat or tiny frames."""
    size = model.patch_size if model is not None else PATCH_SIZE
    thr = model.sharpness_threshold if model is not None else SHARPNESS_THRESHOLD
    try:
        feats = niqe_patch_features(frame, size, thr)
    except (NoPatchSelected, FrameTooSmall):
        feats = None
    return spatial_block_from_features(feats, model)


def save_pristine(model: PristineModel, path) -> None:
    mean = np.asarray(model.mean, dtype="<f8")
    cov = np.asarray(model.covariance, dtype="<f8")
    if mean.shape != (N_FEATURES,) or cov.shape != (N_FEATURES, N_FEATURES):
        raise ValueError("pristine model must be 36-dimensional")
    with atomic_open(path, "wb") as fh:
        fh.write(_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, int(model.patch_size)))
        fh.write(mean.tobytes())
        fh.write(cov.tobytes())


def load_pristine(path) -> PristineModel:
    data = Path(path).read_bytes()
    expected = _HEADER.size + 8 * (N_FEATURES + N_FEATURES * N_FEATURES)
    if len(data) < _HEADER.size:
        raise CorruptModel(f"{path}: truncated header")
    magic, version, patch_size = _HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise CorruptModel(f"{path}: bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise CorruptModel(f"{path}: version {version}, expected {MODEL_VERSION}")
    if len(data) != expected:
        raise CorruptModel(f"{path}: {len(data)} bytes, expected {expected}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    mean = body[:N_FEATURES].astype(np.float64)
    cov = body[N_FEATURES:].reshape(N_FEATURES, N_FEATURES).astype(np.float64)
    return PristineModel(mean, cov, int(patch_size))


IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".pgm", ".tif", ".tiff"}


def corpus_frames(directory, video_stride: int = 30):
    """Luma frames from every image and Y4M file under ``directory`` (sorted)."""
    from .videoio import Frame, open_source, read_luma

    for p in sorted(Path(directory).rglob("*")):
        suffix = p.suffix.lower()
        if suffix in IMAGE_SUFFIXES:
            from PIL import Image

            with Image.open(p) as im:
                yield Frame(np.asarray(im.convert("L"), dtype=np.float64), 0, 8)
        elif suffix == ".y4m":
            src = open_source(os.fspath(p))
            for t in range(0, src.frame_count, max(1, video_stride)):
                yield read_luma(src, t)
