"""Epsilon-SVR quality regressor: training with grouped CV, prediction, persistence."""

from __future__ import annotations

import itertools
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _smo
from ._atomic import atomic_open
from .errors import (
    ConvergenceWarning,
    CorruptModel,
    DegenerateRanks,
    DimensionMismatch,
    LengthMismatch,
    TooFewGroups,
    TooFewSamples,
)
from .evaluation import srocc

MODEL_MAGIC = b"CQAM"
MODEL_VERSION = 1
KERNELS = ("rbf", "linear")
TARGET_SPAN = 100.0
MIN_TRAIN = 10

DEFAULT_C = (0.1, 1.0, 10.0, 100.0, 1000.0)
DEFAULT_GAMMA = tuple(2.0 ** k for k in range(-8, 1))
DEFAULT_EPSILON = (0.1, 0.5, 1.0)


@dataclass
class TrainConfig:
    C: Sequence[float] = DEFAULT_C
    gamma: Sequence[float] = DEFAULT_GAMMA
    epsilon: Sequence[float] = DEFAULT_EPSILON
    folds: int = 5
    seed: int = 0
    kernel: str = "rbf"
    tol: float = 1e-3
    max_iter: int = 100_000

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if not (self.C and self.gamma and self.epsilon):
            raise ValueError("hyperparameter grids must be non-empty")
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}")

    def grid(self):
        gammas = self.gamma if self.kernel == "rbf" else self.gamma[:1]
        return list(itertools.product(self.C, gammas, self.epsilon))


@dataclass
class SvrModel:
    kernel: str
    gamma: float
    C: float
    epsilon: float
    support_vectors: np.ndarray
    dual_coefs: np.ndarray
    bias: float
    scaler_min: np.ndarray
    scaler_max: np.ndarray
    target_min: float = 0.0
    target_span: float = TARGET_SPAN
    info: dict = field(default_factory=dict, compare=False)

    @property
    def n_features(self) -> int:
        return self.scaler_min.shape[0]


def kernel_matrix(A, B, kernel: str, gamma: float) -> np.ndarray:
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    if kernel == "linear":
        return A @ B.T
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


def fit_scaler(X):
    return X.min(axis=0), X.max(axis=0)


def apply_scaler(X, lo, hi):
    """Map each feature to [-1, 1] on the training range; zero-range features map to 0."""
    span = hi - lo
    flat = span <= 0
    out = 2.0 * (X - lo) / np.where(flat, 1.0, span) - 1.0
    return np.where(flat, 0.0, out)


def solve_dual(K, z, C, epsilon, tol=1e-3, max_iter=100_000, trace_len=0):
    """Run SMO on a precomputed kernel. Returns ``(coef, bias, info)``."""
    trace = np.zeros(trace_len)
    coef, bias, n_iter, gap, obj = _smo.solve(
        np.ascontiguousarray(K, dtype=np.float64), np.ascontiguousarray(z, dtype=np.float64),
        float(C), float(epsilon), float(tol), int(max_iter), trace,
    )
    info = {"n_iter": int(n_iter), "kkt_violation": float(gap), "dual_objective": float(obj),
            "converged": bool(gap < tol)}
    if trace_len:
        info["objective_trace"] = trace[: min(n_iter, trace_len)].copy()
    if not info["converged"]:
        warnings.warn(ConvergenceWarning(
            f"SMO stopped after {n_iter} iterations with KKT violation {gap:.3g}"), stacklevel=2)
    return coef, bias, info


def _target_scale(y):
    lo = float(np.min(y))
    span = float(np.max(y) - lo)
    return lo, (span if span > 0 else 1.0)


def fit_svr(X, y, C=1.0, gamma=1.0, epsilon=0.1, kernel="rbf", tol=1e-3,
            max_iter=100_000, trace_len=0) -> SvrModel:
    """Fit one SVR at fixed hyperparameters (no model selection)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.shape[0]:
        raise LengthMismatch(f"{X.shape[0]} feature rows vs {y.shape[0]} targets")
    lo, hi = fit_scaler(X)
    Xs = apply_scaler(X, lo, hi)
    tmin, tspan = _target_scale(y)
    z = (y - tmin) * (TARGET_SPAN / tspan)
    K = kernel_matrix(Xs, Xs, kernel, gamma)
    coef, bias, info = solve_dual(K, z, C, epsilon, tol, max_iter, trace_len)
    sv = np.abs(coef) > 0
    if not sv.any():
        sv[:] = True
    return SvrModel(kernel, float(gamma), float(C), float(epsilon), Xs[sv], coef[sv], float(bias),
                    lo, hi, tmin, tspan, info)


def predict(m: SvrModel, x) -> np.ndarray | float:
    """Predicted score(s) for one feature vector or a 2-D batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != m.n_features:
        raise DimensionMismatch(f"model expects {m.n_features} features, got {X.shape[1]}")
    Xs = apply_scaler(X, m.scaler_min, m.scaler_max)
    f = kernel_matrix(Xs, m.support_vectors, m.kernel, m.gamma) @ m.dual_coefs + m.bias
    out = m.target_min + f * (m.target_span / TARGET_SPAN)
    return float(out[0]) if single else out


def group_folds(groups, folds: int, seed: int):
    """Assign whole groups to folds. Returns a list of (train_idx, val_idx)."""
    groups = np.asarray(groups)
    uniq = np.array(sorted(set(groups.tolist())), dtype=object)
    if len(uniq) < folds:
        raise TooFewGroups(f"{len(uniq)} content groups for {folds} folds")
    order = np.random.default_rng(seed).permutation(len(uniq))
    fold_of = {uniq[k]: pos % folds for pos, k in enumerate(order)}
    assign = np.array([fold_of[g] for g in groups.tolist()])
    out = []
    for f in range(folds):
        val = np.flatnonzero(assign == f)
        tr = np.flatnonzero(assign != f)
        assert not set(groups[val].tolist()) & set(groups[tr].tolist())
        out.append((tr, val))
    return out


def _fold_score(pred, truth) -> float:
    try:
        return srocc(pred, truth)
    except DegenerateRanks:
        return 0.0


def cross_validate(X, y, groups, cfg: TrainConfig):
    """Mean validation SROCC for every grid point, in grid order."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    grid = cfg.grid()
    scores = np.zeros(len(grid))
    for tr, val in group_folds(groups, cfg.folds, cfg.seed):
        lo, hi = fit_scaler(X[tr])
        Xtr, Xval = apply_scaler(X[tr], lo, hi), apply_scaler(X[val], lo, hi)
        tmin, tspan = _target_scale(y[tr])
        z = (y[tr] - tmin) * (TARGET_SPAN / tspan)
        kernels = {}
        for k, (C, gamma, eps) in enumerate(grid):
            if gamma not in kernels:
                kernels[gamma] = (kernel_matrix(Xtr, Xtr, cfg.kernel, gamma),
                                  kernel_matrix(Xval, Xtr, cfg.kernel, gamma))
            Ktr, Kval = kernels[gamma]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                coef, bias, _ = solve_dual(Ktr, z, C, eps, cfg.tol, cfg.max_iter)
            scores[k] += _fold_score(Kval @ coef + bias, y[val])
    return grid, scores / cfg.folds


def train(X, y, groups, cfg: TrainConfig = None) -> SvrModel:
    """Grid search by grouped-CV SROCC, then refit on everything."""
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    groups = list(groups)
    if not (len(X) == len(y) == len(groups)):
        raise LengthMismatch(f"{len(X)} rows, {len(y)} targets, {len(groups)} groups")
    if len(X) < MIN_TRAIN:
        raise TooFewSamples(f"{len(X)} samples, need {MIN_TRAIN}")
    grid, scores = cross_validate(X, y, groups, cfg)
    best = int(np.argmax(scores))
    C, gamma, eps = grid[best]
    m = fit_svr(X, y, C, gamma, eps, cfg.kernel, cfg.tol, cfg.max_iter)
    m.info.update({"cv_srocc": float(scores[best]), "grid_index": best})
    return m


_HEAD = struct.Struct("<4sII")
_SCALARS = struct.Struct("<6d2I")


def save_model(m: SvrModel, path) -> None:
    body = bytearray(_HEAD.pack(MODEL_MAGIC, MODEL_VERSION, KERNELS.index(m.kernel)))
    body += _SCALARS.pack(m.gamma, m.C, m.epsilon, m.bias, m.target_min, m.target_span,
                          m.n_features, len(m.dual_coefs))
    for arr in (m.scaler_min, m.scaler_max, m.support_vectors, m.dual_coefs):
        body += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    body += struct.pack("<I", zlib.crc32(body))
    with atomic_open(path, "wb") as fh:
        fh.write(bytes(body))


def load_model(path) -> SvrModel:
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size + _SCALARS.size + 4:
        raise CorruptModel(f"{path}: truncated")
    magic, version, kernel = _HEAD.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise CorruptModel(f"{path}: bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise CorruptModel(f"{path}: model version {version}, this build reads {MODEL_VERSION}")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise CorruptModel(f"{path}: checksum mismatch")
    gamma, C, eps, bias, tmin, tspan, d, n_sv = _SCALARS.unpack_from(data, _HEAD.size)
    if kernel >= len(KERNELS):
        raise CorruptModel(f"{path}: unknown kernel id {kernel}")
    n_vals = 2 * d + n_sv * d + n_sv
    start = _HEAD.size + _SCALARS.size
    if len(data) != start + 8 * n_vals + 4:
        raise CorruptModel(f"{path}: payload length does not match header")
    v = np.frombuffer(data, dtype="<f8", count=n_vals, offset=start).astype(np.float64)
    lo, hi = v[:d], v[d:2 * d]
    sv = v[2 * d:2 * d + n_sv * d].reshape(n_sv, d)
    duals = v[2 * d + n_sv * d:]
    return SvrModel(KERNELS[kernel], gamma, C, eps, sv, duals, bias, lo, hi, tmin, tspan)
