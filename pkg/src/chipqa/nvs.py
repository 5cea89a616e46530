"""GGD / AGGD moment-matching fits and the 36-value chip feature block."""

from __future__ import annotations

import csv
import io
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

from .errors import DegenerateInput, FrameTooSmall, OneSidedInput

SHAPE_MIN, SHAPE_MAX, SHAPE_STEP = 0.05, 10.0, 0.001
SHAPE_GRID = np.linspace(SHAPE_MIN, SHAPE_MAX, int(round((SHAPE_MAX - SHAPE_MIN) / SHAPE_STEP)) + 1)
MIN_SAMPLES = 100
MIN_SIDE_SAMPLES = 10
MIN_VARIANCE = 1e-12
ORIENTATIONS = ("H", "V", "D1", "D2")

GGD_FALLBACK = (2.0, 0.0)
AGGD_FALLBACK = (0.0, 2.0, 0.0, 0.0)


def gamma(x):
    """Gamma function through log-gamma (positive arguments only)."""
    return np.exp(gammaln(x))


def generalized_gaussian_ratio(shape):
    """Gamma(2/a)^2 / (Gamma(1/a) Gamma(3/a)); increases monotonically in a."""
    a = np.asarray(shape, dtype=np.float64)
    return np.exp(2.0 * gammaln(2.0 / a) - gammaln(1.0 / a) - gammaln(3.0 / a))


_RHO = generalized_gaussian_ratio(SHAPE_GRID)
assert np.all(np.diff(_RHO) > 0)


def grid_shape(target):
    """Grid point whose ratio is closest to ``target`` (ties go to the smaller shape).

    Same result as ``SHAPE_GRID[argmin |rho - target|]``, using bisection since
    the ratio is strictly increasing along the grid.
    """
    t = np.asarray(target, dtype=np.float64)
    hi = np.clip(np.searchsorted(_RHO, t), 0, _RHO.size - 1)
    lo = np.clip(hi - 1, 0, _RHO.size - 1)
    take_hi = np.abs(_RHO[hi] - t) < np.abs(_RHO[lo] - t)
    return SHAPE_GRID[np.where(take_hi, hi, lo)]


class GGDParams(NamedTuple):
    alpha: float
    sigma_sq: float


class AGGDParams(NamedTuple):
    eta: float
    nu: float
    sigma_l_sq: float
    sigma_r_sq: float


class PairedProducts(NamedTuple):
    H: np.ndarray
    V: np.ndarray
    D1: np.ndarray
    D2: np.ndarray


def paired_products(S) -> PairedProducts:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] < 2 or S.shape[1] < 2:
        raise FrameTooSmall(f"need a 2x2 field for paired products, got {S.shape}")
    return PairedProducts(
        H=S[:, :-1] * S[:, 1:],
        V=S[:-1, :] * S[1:, :],
        D1=S[:-1, :-1] * S[1:, 1:],
        D2=S[:-1, 1:] * S[1:, :-1],
    )


def _check_size(x):
    if x.shape[-1] < MIN_SAMPLES:
        raise DegenerateInput(f"{x.shape[-1]} samples, need at least {MIN_SAMPLES}")


def _row_moments(X):
    """Per-row sums needed by both fits, computed with dot products."""
    n = X.shape[1]
    total = X.sum(axis=1)
    sq_sum = np.einsum("ij,ij->i", X, X)
    neg = np.minimum(X, 0.0)
    left_sq_sum = np.einsum("ij,ij->i", neg, neg)
    abs_sum = total - 2.0 * neg.sum(axis=1)
    n_left = np.count_nonzero(X < 0, axis=1)
    mean = total / n
    var = sq_sum / n - mean * mean
    return n, sq_sum, left_sq_sum, abs_sum, n_left, var


def ggd_batch(X):
    """Row-wise GGD fits. Returns ``(alpha, sigma_sq, degenerate)`` arrays."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, sq_sum, _, abs_sum, _, var = _row_moments(X)
    sq = sq_sum / n
    ab = abs_sum / n
    bad = (var <= MIN_VARIANCE) | (n < MIN_SAMPLES)
    safe_sq = np.where(bad, 1.0, sq)
    alpha = grid_shape(ab * ab / safe_sq)
    alpha = np.where(bad, GGD_FALLBACK[0], alpha)
    sigma_sq = np.where(bad, GGD_FALLBACK[1], sq)
    return alpha, sigma_sq, bad


def fit_ggd(samples) -> GGDParams:
    x = np.ravel(np.asarray(samples, dtype=np.float64))
    _check_size(x)
    alpha, sigma_sq, bad = ggd_batch(x[None, :])
    if bad[0]:
        raise DegenerateInput("samples are (nearly) constant")
    return GGDParams(float(alpha[0]), float(sigma_sq[0]))


def _aggd_from_moments(left_sq, right_sq, abs_mean, sq_mean):
    gam = np.sqrt(left_sq) / np.sqrt(right_sq)
    r_hat = abs_mean * abs_mean / sq_mean
    R_hat = r_hat * (gam ** 3 + 1) * (gam + 1) / (gam ** 2 + 1) ** 2
    nu = grid_shape(R_hat)
    scale = np.sqrt(gamma(1.0 / nu) / gamma(3.0 / nu))
    beta_l = np.sqrt(left_sq) * scale
    beta_r = np.sqrt(right_sq) * scale
    eta = (beta_r - beta_l) * gamma(2.0 / nu) / gamma(1.0 / nu)
    return eta, nu


def aggd_batch(X):
    """Row-wise AGGD fits. Returns ``(eta, nu, sigma_l_sq, sigma_r_sq, degenerate)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, sq_sum, left_sum, abs_sum, n_left, var = _row_moments(X)
    n_right = n - n_left
    left_sq = left_sum / np.maximum(n_left, 1)
    right_sq = (sq_sum - left_sum) / np.maximum(n_right, 1)
    sq_mean = sq_sum / n
    abs_mean = abs_sum / n
    bad = (
        (n < MIN_SAMPLES)
        | (var <= MIN_VARIANCE)
        | (n_left < MIN_SIDE_SAMPLES) | (n_right < MIN_SIDE_SAMPLES)
        | (left_sq <= 0) | (right_sq <= 0)
    )
    one = np.ones_like(sq_mean)
    eta, nu = _aggd_from_moments(
        np.where(bad, one, left_sq), np.where(bad, one, right_sq),
        np.where(bad, one, abs_mean), np.where(bad, one, sq_mean),
    )
    fb = AGGD_FALLBACK
    return (
        np.where(bad, fb[0], eta), np.where(bad, fb[1], nu),
        np.where(bad, fb[2], left_sq), np.where(bad, fb[3], right_sq), bad,
    )


def fit_aggd(samples) -> AGGDParams:
    x = np.ravel(np.asarray(samples, dtype=np.float64))
    _check_size(x)
    if np.var(x) <= MIN_VARIANCE:
        raise DegenerateInput("samples are (nearly) constant")
    neg = x < 0
    n_left = int(neg.sum())
    n_right = x.size - n_left
    if n_left < MIN_SIDE_SAMPLES or n_right < MIN_SIDE_SAMPLES:
        raise OneSidedInput(f"{n_left} negative / {n_right} non-negative samples")
    eta, nu, left_sq, right_sq, bad = aggd_batch(x[None, :])
    if bad[0]:
        raise DegenerateInput("one side of the distribution has zero spread")
    return AGGDParams(float(eta[0]), float(nu[0]), float(left_sq[0]), float(right_sq[0]))


def _scale_block(S):
    """18 values for one chip frame: (alpha, sigma^2) then 4 x (eta, nu, sl^2, sr^2)."""
    a, s, bad = ggd_batch(np.ravel(S)[None, :])
    feats = [a[0], s[0]]
    degenerate = bool(bad[0])
    for prod in paired_products(S):
        eta, nu, sl, sr, pbad = aggd_batch(np.ravel(prod)[None, :])
        feats += [eta[0], nu[0], sl[0], sr[0]]
        degenerate |= bool(pbad[0])
    return feats, degenerate


def domain_features(S_scale1, S_scale2):
    """36-value feature block for one domain plus a degeneracy flag.

    Layout: GGD (alpha, sigma^2) at scale 1 and 2, then for scale 1 and 2 the
    AGGD (eta, nu, sigma_l^2, sigma_r^2) of H, V, D1, D2 products. Any
    degenerate sub-fit is replaced by its fallback values.
    """
    f1, d1 = _scale_block(S_scale1)
    f2, d2 = _scale_block(S_scale2)
    vec = np.array(f1[:2] + f2[:2] + f1[2:] + f2[2:], dtype=np.float64)
    return vec, d1 or d2


def domain_feature_names(prefix: str = ""):
    names = [f"{prefix}ggd_{p}_s{s}" for s in (1, 2) for p in ("alpha", "sigma2")]
    names += [
        f"{prefix}aggd_{o}_{p}_s{s}"
        for s in (1, 2)
        for o in ORIENTATIONS
        for p in ("eta", "nu", "sigmal2", "sigmar2")
    ]
    return names


def features_csv(values, names) -> str:
    """Debug dump of ``(name, value)`` rows."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["name", "value"])
    for n, v in zip(names, values):
        writer.writerow([n, repr(float(v))])
    return buf.getvalue()
